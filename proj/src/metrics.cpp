#include "ddvqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "ddvqa/tokenizer.hpp"

namespace ddvqa::metrics {

namespace {

using Counts = std::unordered_map<std::string, std::size_t>;

// N-gram key: tokens joined by a separator that split_tokens never emits.
Counts ngram_counts(const Tokens& t, std::size_t n) {
  Counts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string key = t[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += t[i + k];
    }
    ++out[key];
  }
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void require_refs(std::span<const Tokens> refs) {
  if (refs.empty()) throw std::invalid_argument("at least one reference is required");
}

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

DetectionScores scores_from(const Confusion& c) {
  DetectionScores s;
  s.confusion = c;
  const double tp = static_cast<double>(c.tp);
  s.accuracy = safe_div(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()));
  s.precision = safe_div(tp, static_cast<double>(c.tp + c.fp));
  s.recall = safe_div(tp, static_cast<double>(c.tp + c.fn));
  s.f1 = safe_div(2.0 * s.precision * s.recall, s.precision + s.recall);
  return s;
}

void count(Confusion& c, infer::PredictedVerdict p, data::Verdict g) {
  const bool gold_fake = g == data::Verdict::kFake;
  bool pred_fake;
  if (p == infer::PredictedVerdict::kUndetermined)
    pred_fake = !gold_fake;
  else
    pred_fake = p == infer::PredictedVerdict::kFake;
  if (pred_fake && gold_fake) ++c.tp;
  else if (pred_fake) ++c.fp;
  else if (gold_fake) ++c.fn;
  else ++c.tn;
}

}  // namespace

Tokens tokenize(std::string_view text) { return text::split_tokens(text); }

DetectionScores detection_metrics(std::span<const infer::PredictedVerdict> predicted,
                                  std::span<const data::Verdict> gold) {
  if (predicted.empty()) throw std::invalid_argument("detection_metrics: empty input");
  if (predicted.size() != gold.size())
    throw std::invalid_argument("detection_metrics: predicted and gold differ in length");
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) count(c, predicted[i], gold[i]);
  return scores_from(c);
}

double bleu4(const Tokens& candidate, std::span<const Tokens> references) {
  require_refs(references);
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const Counts cand = ngram_counts(candidate, n);
    std::vector<Counts> refs;
    for (const auto& r : references) refs.push_back(ngram_counts(r, n));
    std::size_t total = 0, clipped = 0;
    for (const auto& [g, cnt] : cand) {
      total += cnt;
      std::size_t best = 0;
      for (const auto& r : refs)
        if (auto it = r.find(g); it != r.end()) best = std::max(best, it->second);
      clipped += std::min(cnt, best);
    }
    double p;
    if (n == 1) {
      if (clipped == 0) return 0.0;
      p = static_cast<double>(clipped) / static_cast<double>(total);
    } else {
      p = clipped > 0 ? static_cast<double>(clipped) / static_cast<double>(total)
                      : 1.0 / static_cast<double>(total + 1);
    }
    log_sum += std::log(p);
  }
  const std::size_t c = candidate.size();
  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    const auto d_new = ref.size() > c ? ref.size() - c : c - ref.size();
    const auto d_old = r > c ? r - c : c - r;
    if (d_new < d_old || (d_new == d_old && ref.size() < r)) r = ref.size();
  }
  const double bp =
      c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l(const Tokens& candidate, std::span<const Tokens> references) {
  require_refs(references);
  double best = 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  for (const auto& r : references) {
    if (candidate.empty() || r.empty()) continue;
    const double l = static_cast<double>(lcs_length(candidate, r));
    if (l == 0.0) continue;
    const double p = l / static_cast<double>(candidate.size());
    const double rec = l / static_cast<double>(r.size());
    best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  // Each word aligns min(count in candidate, count in reference) times. Among
  // those alignments, fewest chunks == most links, where a link is a pair of
  // neighbouring candidate tokens aligned to neighbouring reference tokens.
  const std::size_t nc = candidate.size(), nr = reference.size();
  if (nr > 64) throw std::invalid_argument("meteor_align: reference longer than 64 tokens");

  std::unordered_map<std::string, std::size_t> need;  // target matches per word
  {
    std::unordered_map<std::string, std::size_t> cc, rc;
    for (const auto& t : candidate) ++cc[t];
    for (const auto& t : reference) ++rc[t];
    for (const auto& [w, n] : cc)
      if (auto it = rc.find(w); it != rc.end()) need[w] = std::min(n, it->second);
  }
  std::size_t matches = 0;
  for (const auto& [w, n] : need) matches += n;
  if (matches == 0) return {};

  // remaining[i]: occurrences of candidate[i] at positions >= i.
  std::vector<std::size_t> remaining(nc, 0);
  for (std::size_t i = nc; i-- > 0;) {
    remaining[i] = 1;
    for (std::size_t k = i + 1; k < nc; ++k)
      if (candidate[k] == candidate[i]) {
        remaining[i] += remaining[k];
        break;
      }
  }

  struct Key {
    std::size_t i;
    std::uint64_t used;
    std::size_t prev;  // reference index aligned to candidate[i-1], nr if none
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return std::hash<std::uint64_t>()(k.used) ^ (k.i * 0x9e3779b97f4a7c15ULL) ^ (k.prev << 20);
    }
  };
  std::unordered_map<Key, std::size_t, KeyHash> memo;

  auto matched_of = [&](const std::string& w, std::uint64_t used) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < nr; ++j)
      if ((used >> j & 1U) && reference[j] == w) ++n;
    return n;
  };

  auto best_links = [&](auto&& self, std::size_t i, std::uint64_t used, std::size_t prev) -> std::size_t {
    if (i == nc) return 0;
    const Key key{i, used, prev};
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::string& w = candidate[i];
    std::size_t still = 0;
    if (auto it = need.find(w); it != need.end()) still = it->second - matched_of(w, used);
    std::size_t best = 0;
    bool any = false;
    if (still < remaining[i]) {  // leaving this token unaligned keeps the match count reachable
      best = self(self, i + 1, used, nr);
      any = true;
    }
    if (still > 0) {
      for (std::size_t j = 0; j < nr; ++j) {
        if ((used >> j & 1U) || reference[j] != w) continue;
        const std::size_t link = (prev != nr && prev + 1 == j) ? 1 : 0;
        const std::size_t v = link + self(self, i + 1, used | (std::uint64_t{1} << j), j);
        if (!any || v > best) best = v;
        any = true;
      }
    }
    memo.emplace(key, best);
    return best;
  };
  const std::size_t links = best_links(best_links, 0, 0, nr);
  return {matches, matches - links};
}

double meteor_lite(const Tokens& candidate, std::span<const Tokens> references) {
  require_refs(references);
  double best = 0.0;
  for (const auto& r : references) {
    const auto a = meteor_align(candidate, r);
    if (a.matches == 0) continue;
    const double m = static_cast<double>(a.matches);
    const double p = m / static_cast<double>(candidate.size());
    const double rec = m / static_cast<double>(r.size());
    const double fmean = 10.0 * p * rec / (rec + 9.0 * p);
    const double frag = static_cast<double>(a.chunks) / m;
    best = std::max(best, fmean * (1.0 - 0.5 * frag * frag * frag));
  }
  return best;
}

CiderResult cider(std::span<const CiderPair> corpus) {
  if (corpus.size() < 2) throw std::invalid_argument("cider: needs at least two pairs");
  for (const auto& p : corpus) require_refs(p.references);

  std::unordered_map<std::string, double> df;
  for (const auto& p : corpus) {
    std::unordered_map<std::string, bool> seen;
    for (const auto& r : p.references)
      for (std::size_t n = 1; n <= 4; ++n)
        for (const auto& [g, cnt] : ngram_counts(r, n)) seen[g] = true;
    for (const auto& [g, unused] : seen) df[g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(corpus.size()));

  using Vec = std::unordered_map<std::string, double>;
  auto vectorize = [&](const Tokens& t) {
    std::array<Vec, 4> v;
    std::array<double, 4> norm{};
    for (std::size_t n = 1; n <= 4; ++n) {
      for (const auto& [g, cnt] : ngram_counts(t, n)) {
        const auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : std::max(1.0, it->second);
        const double w = static_cast<double>(cnt) * (log_n - std::log(d));
        v[n - 1][g] = w;
        norm[n - 1] += w * w;
      }
      norm[n - 1] = std::sqrt(norm[n - 1]);
    }
    return std::pair{v, norm};
  };

  CiderResult out;
  out.per_pair.reserve(corpus.size());
  for (const auto& p : corpus) {
    const auto [vc, nc] = vectorize(p.candidate);
    double total = 0.0;
    for (const auto& r : p.references) {
      const auto [vr, nr] = vectorize(r);
      const double delta = static_cast<double>(p.candidate.size()) - static_cast<double>(r.size());
      const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
      for (std::size_t n = 0; n < 4; ++n) {
        double num = 0.0;
        for (const auto& [g, w] : vc[n])
          if (auto it = vr[n].find(g); it != vr[n].end()) num += std::min(w, it->second) * it->second;
        const double val = (nc[n] > 0.0 && nr[n] > 0.0) ? num / (nc[n] * nr[n]) : num;
        total += val * penalty;
      }
    }
    out.per_pair.push_back(10.0 * total / 4.0 / static_cast<double>(p.references.size()));
  }
  double sum = 0.0;
  for (double s : out.per_pair) sum += s;
  out.mean = sum / static_cast<double>(out.per_pair.size());
  return out;
}

AucEer auc_eer(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc_eer: length mismatch");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auc_eer: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc_eer: both classes are required");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Walk tie groups from the highest score down. Each group contributes the
  // positives it contains against the negatives below it, half-credit within.
  AucEer out;
  const double P = static_cast<double>(n_pos), N = static_cast<double>(n_neg);
  double auc_pairs = 0.0;
  std::size_t tp = 0, fp = 0;
  double f_prev = 0.0, m_prev = 1.0;  // (false positive rate, false negative rate)
  bool eer_found = false;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, gp = 0, gn = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) ++gp;
      else ++gn;
      ++j;
    }
    // Negatives strictly above this group have higher scores; the positives
    // of the group beat every negative that comes later.
    auc_pairs += static_cast<double>(gp) * (N - static_cast<double>(fp) - static_cast<double>(gn)) +
                 0.5 * static_cast<double>(gp) * static_cast<double>(gn);
    tp += gp;
    fp += gn;
    const double f = static_cast<double>(fp) / N, m = 1.0 - static_cast<double>(tp) / P;
    if (!eer_found) {
      const double d0 = f_prev - m_prev, d1 = f - m;
      if (d0 < 0.0 && d1 >= 0.0) {
        const double t = -d0 / (d1 - d0);
        out.eer = f_prev + t * (f - f_prev);
        eer_found = true;
      }
    }
    f_prev = f;
    m_prev = m;
    i = j;
  }
  out.auc = auc_pairs / (P * N);
  return out;
}

std::string question_type(std::string_view question) {
  if (question == data::general_question()) return "general";
  for (auto c : data::kFacialComponents)
    if (question == data::fine_grained_question(c)) return std::string(data::to_string(c));
  return "other";
}

EvalReport evaluate(std::span<const infer::GenerationRecord> records) {
  if (records.size() < 2) throw std::invalid_argument("evaluate: needs at least two generation records");
  EvalReport rep;
  rep.n = records.size();

  std::vector<CiderPair> corpus;
  corpus.reserve(records.size());
  std::vector<std::string> types;
  for (const auto& r : records) {
    if (r.gold_answers.empty()) throw std::invalid_argument("evaluate: record without gold answers: " + r.image_id);
    CiderPair p;
    p.candidate = tokenize(r.generated);
    for (const auto& a : r.gold_answers) p.references.push_back(tokenize(a));
    corpus.push_back(std::move(p));
    types.push_back(question_type(r.question));
  }
  const auto cid = cider(corpus);

  Confusion all;
  std::map<std::string, Confusion> by_type;
  std::map<std::string, TextScores> sums;
  TextScores total;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& p = corpus[i];
    TextScores s;
    s.bleu4 = bleu4(p.candidate, p.references);
    s.rouge_l = rouge_l(p.candidate, p.references);
    s.meteor = meteor_lite(p.candidate, p.references);
    s.cider = cid.per_pair[i];
    for (TextScores* t : {&total, &sums[types[i]]}) {
      t->bleu4 += s.bleu4;
      t->rouge_l += s.rouge_l;
      t->meteor += s.meteor;
      t->cider += s.cider;
    }
    count(all, records[i].verdict, records[i].gold_verdict);
    count(by_type[types[i]], records[i].verdict, records[i].gold_verdict);
    ++rep.count_by_type[types[i]];
  }
  auto mean = [](TextScores t, std::size_t n) {
    const double d = static_cast<double>(n);
    return TextScores{t.bleu4 / d, t.rouge_l / d, t.meteor / d, t.cider / d};
  };
  rep.detection = scores_from(all);
  rep.text = mean(total, records.size());
  for (const auto& [type, c] : by_type) {
    rep.detection_by_type[type] = scores_from(c);
    rep.text_by_type[type] = mean(sums[type], rep.count_by_type[type]);
  }
  return rep;
}

nlohmann::json report_to_json(const EvalReport& report) {
  auto det = [](const DetectionScores& d) {
    return nlohmann::json{{"acc", d.accuracy},
                          {"precision", d.precision},
                          {"recall", d.recall},
                          {"f1", d.f1},
                          {"confusion",
                           {{"tp", d.confusion.tp}, {"fp", d.confusion.fp}, {"tn", d.confusion.tn}, {"fn", d.confusion.fn}}}};
  };
  auto txt = [](const TextScores& t) {
    return nlohmann::json{{"bleu4", t.bleu4}, {"rouge_l", t.rouge_l}, {"meteor_lite", t.meteor}, {"cider", t.cider}};
  };
  nlohmann::json j;
  j["n"] = report.n;
  j["detection"] = det(report.detection);
  j["text"] = txt(report.text);
  nlohmann::json types = nlohmann::json::object();
  for (const auto& [type, n] : report.count_by_type) {
    types[type] = {{"n", n},
                   {"detection", det(report.detection_by_type.at(type))},
                   {"text", txt(report.text_by_type.at(type))}};
  }
  j["by_question_type"] = types;
  return j;
}

}  // namespace ddvqa::metrics
