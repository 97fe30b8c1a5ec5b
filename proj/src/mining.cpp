#include "ddvqa/mining.hpp"

#include <algorithm>

namespace ddvqa::data {

std::set<std::string> reason_phrases(const QARecord& record) {
  std::set<std::string> out;
  for (const auto& answer : record.answers) {
    const auto parsed = parse_answer(answer);
    if (!parsed) continue;
    for (const auto& r : parsed->reasons) out.insert(canonical_reason(r));
  }
  return out;
}

TripletMiner::TripletMiner(std::span<const QARecord> corpus) : corpus_(corpus) {
  phrases_.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = corpus[i];
    by_slot_[{r.component, r.verdict}].push_back(i);
    phrases_.push_back(reason_phrases(r));
    for (const auto& p : phrases_.back()) by_phrase_[{r.component, p}].push_back(i);
  }
}

std::vector<AnswerRef> TripletMiner::text_positive_candidates(std::size_t anchor) const {
  std::vector<AnswerRef> out;
  for (std::size_t a = 0; a < corpus_[anchor].answers.size(); ++a) out.push_back({anchor, a});
  return out;
}

std::vector<AnswerRef> TripletMiner::text_negative_candidates(std::size_t anchor) const {
  const auto& r = corpus_[anchor];
  std::vector<AnswerRef> out;
  const auto it = by_slot_.find({r.component, opposite(r.verdict)});
  if (it == by_slot_.end()) return out;
  for (auto idx : it->second)
    for (std::size_t a = 0; a < corpus_[idx].answers.size(); ++a) out.push_back({idx, a});
  return out;
}

std::vector<std::size_t> TripletMiner::image_positive_candidates(std::size_t anchor) const {
  const auto& r = corpus_[anchor];
  std::vector<std::size_t> out;
  for (const auto& p : phrases_[anchor]) {
    const auto it = by_phrase_.find({r.component, p});
    if (it == by_phrase_.end()) continue;
    for (auto idx : it->second)
      if (corpus_[idx].image_id != r.image_id) out.push_back(idx);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> TripletMiner::image_negative_candidates(std::size_t anchor) const {
  const auto& r = corpus_[anchor];
  const auto it = by_slot_.find({r.component, opposite(r.verdict)});
  if (it == by_slot_.end()) return {};
  return it->second;
}

std::optional<ContrastiveTriplet> TripletMiner::mine_text(std::size_t anchor, Rng& rng) const {
  const auto negatives = text_negative_candidates(anchor);
  if (negatives.empty()) return std::nullopt;
  const auto positives = text_positive_candidates(anchor);
  ContrastiveTriplet t;
  t.modality = Modality::kText;
  t.anchor = {anchor, 0};
  t.positive = positives[uniform_index(rng, positives.size())];
  t.negative = negatives[uniform_index(rng, negatives.size())];
  return t;
}

std::optional<ContrastiveTriplet> TripletMiner::mine_image(std::size_t anchor, Rng& rng) const {
  const auto positives = image_positive_candidates(anchor);
  if (positives.empty()) return std::nullopt;
  const auto negatives = image_negative_candidates(anchor);
  if (negatives.empty()) return std::nullopt;
  ContrastiveTriplet t;
  t.modality = Modality::kImage;
  t.anchor = {anchor, 0};
  t.positive = {positives[uniform_index(rng, positives.size())], 0};
  t.negative = {negatives[uniform_index(rng, negatives.size())], 0};
  return t;
}

}  // namespace ddvqa::data
