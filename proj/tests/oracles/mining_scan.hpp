#pragma once

// Exhaustive-scan reference for the triplet miner: every candidate is found by
// comparing the anchor against every record and answer directly.

#include <algorithm>
#include <string>
#include <vector>

#include "ddvqa/dataset.hpp"
#include "ddvqa/mining.hpp"

namespace oracle {

inline std::vector<std::string> scan_phrases(const ddvqa::data::QARecord& r) {
  std::vector<std::string> out;
  for (const auto& a : r.answers) {
    auto p = ddvqa::data::parse_answer(a);
    if (!p) continue;
    for (const auto& reason : p->reasons) out.push_back(ddvqa::data::canonical_reason(reason));
  }
  return out;
}

inline std::vector<ddvqa::data::AnswerRef> scan_text_negatives(
    const std::vector<ddvqa::data::QARecord>& corpus, std::size_t anchor) {
  std::vector<ddvqa::data::AnswerRef> out;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (std::size_t a = 0; a < corpus[i].answers.size(); ++a)
      if (corpus[i].component == corpus[anchor].component &&
          corpus[i].verdict != corpus[anchor].verdict)
        out.push_back({i, a});
  return out;
}

inline std::vector<std::size_t> scan_image_positives(
    const std::vector<ddvqa::data::QARecord>& corpus, std::size_t anchor) {
  std::vector<std::size_t> out;
  const auto mine = scan_phrases(corpus[anchor]);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].image_id == corpus[anchor].image_id) continue;
    if (corpus[i].component != corpus[anchor].component) continue;
    const auto theirs = scan_phrases(corpus[i]);
    bool shared = false;
    for (const auto& p : mine)
      shared = shared || std::find(theirs.begin(), theirs.end(), p) != theirs.end();
    if (shared) out.push_back(i);
  }
  return out;
}

inline std::vector<std::size_t> scan_image_negatives(
    const std::vector<ddvqa::data::QARecord>& corpus, std::size_t anchor) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].component == corpus[anchor].component &&
        corpus[i].verdict != corpus[anchor].verdict)
      out.push_back(i);
  return out;
}

}  // namespace oracle

namespace oracle {

/// Small random corpus with deliberately overlapping reasons and image ids.
inline std::vector<ddvqa::data::QARecord> random_corpus(ddvqa::Rng& rng, std::size_t n) {
  using namespace ddvqa::data;
  static const std::vector<std::string> pool{"blurry", "overlapped", "smooth", "Rigid",
                                             "inconsistent color", "natural"};
  std::vector<QARecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    QARecord r;
    r.image_id = "im" + std::to_string(ddvqa::uniform_index(rng, n / 2 + 1));
    r.component = kAllComponents[ddvqa::uniform_index(rng, kAllComponents.size())];
    r.question = fine_grained_question(r.component);
    r.verdict = ddvqa::bernoulli(rng, 0.5) ? Verdict::kFake : Verdict::kReal;
    const std::size_t n_ans = 1 + ddvqa::uniform_index(rng, 3);
    for (std::size_t a = 0; a < n_ans; ++a) {
      std::vector<std::string> reasons;
      for (auto k : ddvqa::sample_without_replacement(rng, pool.size(), 1 + ddvqa::uniform_index(rng, 2)))
        reasons.push_back(pool[k]);
      r.answers.push_back(render_answer(r.component, r.verdict, reasons));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace oracle
