#pragma once

// Contrastive triplet mining over a QA corpus.
//
// Text triplets: anchor = first answer of a record, positive = one of the
// record's own answers, negative = an answer of another record on the same
// component with the opposite verdict.
// Image triplets: positive = a different image whose same-component answers
// share at least one canonical reason phrase with the anchor, negative = an
// image whose same-component answer has the opposite verdict.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "ddvqa/dataset.hpp"
#include "ddvqa/rng.hpp"

namespace ddvqa::data {

enum class Modality { kText, kImage };

/// Record index into the mined corpus plus an answer index (0 for images).
struct AnswerRef {
  std::size_t record = 0;
  std::size_t answer = 0;

  auto operator<=>(const AnswerRef&) const = default;
};

struct ContrastiveTriplet {
  Modality modality = Modality::kText;
  AnswerRef anchor;
  AnswerRef positive;
  AnswerRef negative;

  bool operator==(const ContrastiveTriplet&) const = default;
};

/// Canonical reason phrases stated across a record's answers.
std::set<std::string> reason_phrases(const QARecord& record);

class TripletMiner {
 public:
  explicit TripletMiner(std::span<const QARecord> corpus);

  std::size_t size() const { return corpus_.size(); }

  // Candidate sets, each sorted ascending.
  std::vector<AnswerRef> text_positive_candidates(std::size_t anchor) const;
  std::vector<AnswerRef> text_negative_candidates(std::size_t anchor) const;
  std::vector<std::size_t> image_positive_candidates(std::size_t anchor) const;
  std::vector<std::size_t> image_negative_candidates(std::size_t anchor) const;

  /// Uniform picks among the candidates; nullopt when a set is empty (no
  /// random draws are consumed in that case).
  std::optional<ContrastiveTriplet> mine_text(std::size_t anchor, Rng& rng) const;
  std::optional<ContrastiveTriplet> mine_image(std::size_t anchor, Rng& rng) const;

 private:
  std::span<const QARecord> corpus_;
  std::vector<std::set<std::string>> phrases_;
  std::map<std::pair<Component, Verdict>, std::vector<std::size_t>> by_slot_;
  std::map<std::pair<Component, std::string>, std::vector<std::size_t>> by_phrase_;
};

}  // namespace ddvqa::data
