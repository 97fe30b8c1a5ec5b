#pragma once

// QA corpus construction: majority aggregation over annotators, quality
// filters, the answer template, question synthesis, general-answer
// augmentation, JSON-Lines I/O and corpus statistics.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddvqa/rng.hpp"

namespace ddvqa::data {

enum class Component { kWholeFace, kEyebrows, kSkin, kEyes, kNose, kMouth };
enum class Verdict { kReal, kFake };
enum class Split { kTrain, kTest };
enum class Manipulation { kReal, kDeepfakes, kFace2Face, kFaceSwap, kNeuralTextures };

inline constexpr std::array<Component, 6> kAllComponents{
    Component::kWholeFace, Component::kEyebrows, Component::kSkin,
    Component::kEyes,      Component::kNose,     Component::kMouth};
inline constexpr std::array<Component, 5> kFacialComponents{
    Component::kEyebrows, Component::kSkin, Component::kEyes, Component::kNose,
    Component::kMouth};
inline constexpr std::array<Manipulation, 5> kAllManipulations{
    Manipulation::kReal, Manipulation::kDeepfakes, Manipulation::kFace2Face,
    Manipulation::kFaceSwap, Manipulation::kNeuralTextures};

std::string_view to_string(Component c);
std::string_view to_string(Verdict v);
std::string_view to_string(Split s);
std::string_view to_string(Manipulation m);
Component parse_component(std::string_view s);
Verdict parse_verdict(std::string_view s);
Split parse_split(std::string_view s);
Manipulation parse_manipulation(std::string_view s);

inline Verdict opposite(Verdict v) { return v == Verdict::kReal ? Verdict::kFake : Verdict::kReal; }

/// Word used for X in questions and answers: "image" for the whole face.
std::string_view component_noun(Component c);

struct RawAnnotation {
  std::string image_id;
  Component component = Component::kWholeFace;
  std::string annotator_id;
  std::optional<Verdict> verdict;  // nullopt: the annotator skipped the question
  int fakeness_rating = 0;
  std::vector<std::string> reasons;
  Verdict gt_label = Verdict::kReal;
  Manipulation manipulation = Manipulation::kReal;
};

struct QARecord {
  std::string image_id;
  std::string question;
  Component component = Component::kWholeFace;
  std::vector<std::string> answers;
  Verdict verdict = Verdict::kReal;
  Split split = Split::kTrain;
  Manipulation manipulation = Manipulation::kReal;

  bool operator==(const QARecord&) const = default;
};

// ---- aggregation and filtering ----------------------------------------------

struct MajorityResult {
  std::optional<Verdict> verdict;  // nullopt: no two annotators agree
  /// Reason lists and ratings of the annotators that agree with the majority.
  std::vector<std::vector<std::string>> reasons;
  std::vector<int> ratings;
};

/// Majority vote over the annotations of one (image, component) question.
/// Skipped annotations never vote. Throws on an empty list.
MajorityResult aggregate_majority(std::span<const RawAnnotation> annos);

struct AggregatedRecord {
  std::string image_id;
  Component component = Component::kWholeFace;
  Verdict gt_label = Verdict::kReal;
  Manipulation manipulation = Manipulation::kReal;
  MajorityResult majority;
  bool image_has_answers = true;  // some question of the image was answered
  bool conflicting = false;       // an annotator picked both real and fake
};

enum class DropReason { kNoAnswers, kConflicting, kGtMismatch, kNoMajority, kMissingReasons };
std::string_view to_string(DropReason r);

struct FilterDecision {
  bool keep = true;
  std::optional<DropReason> reason;
};

FilterDecision quality_filter(const AggregatedRecord& record);

// ---- templates ----------------------------------------------------------------

enum class Strength { kNone, kABit, kVery };
/// Rating 2–3 → "a bit", 4–5 → "very", otherwise none.
Strength strength_from_rating(int rating);

/// "The X look(s) real/fake because X look(s) r1, r2." (no "because" clause
/// for a real verdict without reasons). Throws for a fake verdict without
/// reasons.
std::string render_answer(Component component, Verdict verdict,
                          std::span<const std::string> reasons,
                          Strength strength = Strength::kNone);

struct ParsedAnswer {
  std::string noun;
  Verdict verdict = Verdict::kReal;
  std::vector<std::string> reasons;
};

/// Inverse of render_answer; nullopt when the text does not follow the template.
std::optional<ParsedAnswer> parse_answer(std::string_view answer);
bool matches_answer_grammar(std::string_view answer);

/// Lowercased, trimmed reason phrase used for phrase matching.
std::string canonical_reason(std::string_view reason);

std::string general_question();
std::string fine_grained_question(Component c);
bool is_canonical_question(std::string_view question);

/// One general question, then one per annotated facial component in
/// canonical component order.
std::vector<std::pair<std::string, Component>> make_questions(
    std::string_view image_id, std::span<const Component> components_present);

/// "overlapped" on eyebrows → "overlapped eyebrows".
std::string component_reason(Component c, std::string_view reason);

/// General reasons followed by up to two fine-grained reasons sampled without
/// replacement.
std::vector<std::string> augment_general_reasons(std::span<const std::string> general_reasons,
                                                 std::span<const std::string> fine_reasons,
                                                 Rng& rng);
std::string augment_general_answer(Verdict verdict, std::span<const std::string> general_reasons,
                                   std::span<const std::string> fine_reasons, Rng& rng);

// ---- pipeline -------------------------------------------------------------------

struct DropEntry {
  std::string image_id;
  Component component = Component::kWholeFace;
  DropReason reason = DropReason::kNoAnswers;
};

struct BuildResult {
  std::vector<QARecord> records;  // sorted by (image_id, component)
  std::vector<DropEntry> drops;
};

/// Image-id hash split: ~`test_percent`% of images go to the test split.
Split split_for_image(std::string_view image_id, int test_percent = 10);

/// aggregate → filter → template → questions → split, over every image.
BuildResult build_dataset(std::span<const RawAnnotation> annotations, Rng& rng,
                          int test_percent = 10);

// ---- I/O and statistics -----------------------------------------------------------

std::vector<RawAnnotation> read_raw_annotations(const std::filesystem::path& path);
std::vector<QARecord> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, std::span<const QARecord> records);
std::string record_to_json_line(const QARecord& record);
QARecord record_from_json_line(std::string_view line);

struct CorpusStats {
  std::size_t total_pairs = 0;
  std::size_t images = 0;
  std::map<std::string, std::size_t> by_manipulation;
  std::map<std::string, std::size_t> by_component;
  std::map<std::string, std::size_t> by_split;
  std::map<std::string, std::size_t> by_verdict;
};

CorpusStats corpus_stats(std::span<const QARecord> records);
std::string stats_to_json(const CorpusStats& stats);

}  // namespace ddvqa::data
