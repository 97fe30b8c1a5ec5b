#pragma once

// Detection and answer-quality scores: accuracy/precision/recall/F1 with fake
// as the positive class, sentence BLEU-4, ROUGE-L, CIDEr, an exact-match
// METEOR variant, and AUC/EER for score-based detectors.

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddvqa/dataset.hpp"
#include "ddvqa/inference.hpp"
#include "json.hpp"

namespace ddvqa::metrics {

using Tokens = std::vector<std::string>;

/// Tokenization shared by every text metric.
Tokens tokenize(std::string_view text);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

struct DetectionScores {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion confusion;
};

/// An undetermined prediction is scored as the opposite of gold. Throws on
/// empty input or mismatched lengths.
DetectionScores detection_metrics(std::span<const infer::PredictedVerdict> predicted,
                                  std::span<const data::Verdict> gold);

/// Sentence-level BLEU-4: clipped n-gram precisions (max count over
/// references), add-one smoothing for zero counts at n >= 2, brevity penalty
/// against the reference length closest to the candidate (shorter on ties).
double bleu4(const Tokens& candidate, std::span<const Tokens> references);

/// LCS F-measure with beta = 1.2, best reference.
double rouge_l(const Tokens& candidate, std::span<const Tokens> references);
inline constexpr double kRougeBeta = 1.2;

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
/// Exact-unigram alignment with the most matches, then the fewest chunks.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);
/// F_mean = 10PR/(R+9P), penalty 0.5*(chunks/matches)^3, best reference.
double meteor_lite(const Tokens& candidate, std::span<const Tokens> references);

struct CiderPair {
  Tokens candidate;
  std::vector<Tokens> references;
};
struct CiderResult {
  std::vector<double> per_pair;
  double mean = 0.0;
};
/// CIDEr with document frequencies from the references of the corpus, the
/// Gaussian length penalty (sigma 6), clipped tf-idf products, averaged over
/// references and n = 1..4, times 10. Throws for fewer than two pairs.
CiderResult cider(std::span<const CiderPair> corpus);
inline constexpr double kCiderSigma = 6.0;

struct AucEer {
  double auc = 0.0;
  double eer = 0.0;
};
/// Label 1 is the positive (fake) class and higher scores mean more
/// positive. Throws unless both classes are present.
AucEer auc_eer(std::span<const double> scores, std::span<const int> labels);

struct TextScores {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  double cider = 0.0;
};

struct EvalReport {
  DetectionScores detection;
  TextScores text;
  std::size_t n = 0;
  /// Keyed by "general" or a component noun.
  std::map<std::string, DetectionScores> detection_by_type;
  std::map<std::string, TextScores> text_by_type;
  std::map<std::string, std::size_t> count_by_type;
};

/// "general" for the whole-face question, the component name for a
/// fine-grained one, "other" otherwise.
std::string question_type(std::string_view question);

/// Scores a generation file. CIDEr per type is the mean of the whole-set
/// per-pair scores over that type. Throws for fewer than two records.
EvalReport evaluate(std::span<const infer::GenerationRecord> records);
nlohmann::json report_to_json(const EvalReport& report);

}  // namespace ddvqa::metrics
