#include "ddvqa/inference.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace ddvqa::infer {

using nlohmann::json;

std::string_view to_string(PredictedVerdict v) {
  switch (v) {
    case PredictedVerdict::kReal: return "real";
    case PredictedVerdict::kFake: return "fake";
    case PredictedVerdict::kUndetermined: return "undetermined";
  }
  return "undetermined";
}

std::string_view to_string(StopReason s) { return s == StopReason::kEos ? "eos" : "max_len"; }

PredictedVerdict parse_predicted_verdict(std::string_view s) {
  if (s == "real") return PredictedVerdict::kReal;
  if (s == "fake") return PredictedVerdict::kFake;
  if (s == "undetermined") return PredictedVerdict::kUndetermined;
  throw std::invalid_argument("unknown predicted verdict '" + std::string(s) + "'");
}

// ---- generation ------------------------------------------------------------------

GeneratedAnswer generate(const model::DdvqaModel& model, const text::Vocabulary& vocab,
                         const model::QuestionContext& ctx, std::size_t max_tokens) {
  NoGradGuard no_grad;
  GeneratedAnswer out;
  out.stop_reason = StopReason::kMaxLen;
  std::vector<int> prefix{text::kCls, text::kBos};
  for (std::size_t step = 0; step < max_tokens; ++step) {
    const Tensor logits = model.decode(prefix, ctx);
    const std::size_t last = logits.rows() - 1, v = logits.cols();
    int best = -1;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v; ++j) {
      const int id = static_cast<int>(j);
      // Framing tokens never appear inside an answer.
      if (id == text::kPad || id == text::kCls || id == text::kBos) continue;
      const double x = logits.at(last, j);
      if (x > best_value) {
        best_value = x;
        best = id;
      }
    }
    if (best == text::kSep) {
      out.stop_reason = StopReason::kEos;
      break;
    }
    out.token_ids.push_back(best);
    prefix.push_back(best);
  }
  out.text = text::detokenize(out.token_ids, vocab);
  out.verdict = extract_verdict(out.text);
  return out;
}

GeneratedAnswer generate(const model::DdvqaModel& model, const text::Vocabulary& vocab,
                         const Image& image, std::string_view question, std::size_t max_tokens) {
  NoGradGuard no_grad;
  const auto q = text::encode(question, text::SequenceKind::kQuestion, vocab);
  return generate(model, vocab, model.question_context(image, q.ids), max_tokens);
}

PredictedVerdict extract_verdict(std::string_view text) {
  const auto end = text.find_first_of(".!?");
  const auto first = text.substr(0, end);
  bool fake = false, real = false;
  for (const auto& tok : text::split_tokens(first)) {
    fake = fake || tok == "fake";
    real = real || tok == "real";
  }
  if (fake == real) return PredictedVerdict::kUndetermined;
  return fake ? PredictedVerdict::kFake : PredictedVerdict::kReal;
}

// ---- attention -------------------------------------------------------------------

AttentionExport attention_from_recorder(const model::DdvqaModel& model,
                                        const model::AttentionRecorder& recorder,
                                        std::vector<std::string> query_tokens) {
  if (recorder.heads.empty())
    throw std::logic_error("export_attention: attention recording was not enabled for this forward pass");
  const auto& cfg = model.config();
  AttentionExport out;
  out.grid_height = cfg.grid_height();
  out.grid_width = cfg.grid_width();
  const std::size_t layer = cfg.n_layers_text - 1;
  const std::size_t q = recorder.heads.front().rows(), k = recorder.heads.front().cols();

  out.mean.layer = layer;
  out.mean.head = recorder.heads.size();
  out.mean.query_len = q;
  out.mean.key_len = k;
  out.mean.weights.assign(q * k, 0.0);
  out.mean.query_tokens = query_tokens;
  for (std::size_t h = 0; h < recorder.heads.size(); ++h) {
    AttentionMap m;
    m.layer = layer;
    m.head = h;
    m.query_len = q;
    m.key_len = k;
    const auto d = recorder.heads[h].data();
    m.weights.assign(d.begin(), d.end());
    m.query_tokens = query_tokens;
    for (std::size_t i = 0; i < m.weights.size(); ++i) out.mean.weights[i] += m.weights[i];
    out.heads.push_back(std::move(m));
  }
  for (auto& w : out.mean.weights) w /= static_cast<double>(recorder.heads.size());

  for (std::size_t r = 0; r < q; ++r) {
    out.cls_column.push_back(out.mean.weights[r * k]);
    out.grids.emplace_back(out.mean.weights.begin() + static_cast<std::ptrdiff_t>(r * k + 1),
                           out.mean.weights.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
  }
  return out;
}

AttentionExport export_attention(const model::DdvqaModel& model, const text::Vocabulary& vocab,
                                 const Image& image, std::string_view question) {
  NoGradGuard no_grad;
  const auto q = text::encode(question, text::SequenceKind::kQuestion, vocab);
  model::AttentionRecorder recorder;
  model.question_context(image, q.ids, &recorder);
  std::vector<std::string> tokens;
  for (int id : q.ids) tokens.push_back(vocab.token_of(id));
  return attention_from_recorder(model, recorder, std::move(tokens));
}

namespace {

void write_grid(const std::filesystem::path& path, const AttentionMap& m, std::size_t gh, std::size_t gw) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "query,cls";
  for (std::size_t y = 0; y < gh; ++y)
    for (std::size_t x = 0; x < gw; ++x) out << ",p" << y << "_" << x;
  out << "\n";
  char buf[32];
  for (std::size_t r = 0; r < m.query_len; ++r) {
    out << '"' << m.query_tokens[r] << '"';
    for (std::size_t c = 0; c < m.key_len; ++c) {
      std::snprintf(buf, sizeof(buf), ",%.9g", m.weights[r * m.key_len + c]);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace

void write_attention(const std::filesystem::path& dir, const AttentionExport& att, const std::string& stem) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["grid_height"] = att.grid_height;
  manifest["grid_width"] = att.grid_width;
  manifest["key_kind"] = att.mean.key_kind;
  manifest["query_tokens"] = att.mean.query_tokens;
  manifest["maps"] = json::array();
  auto emit = [&](const AttentionMap& m, const std::string& label) {
    const std::string file = stem + "_layer" + std::to_string(m.layer) + "_" + label + ".csv";
    write_grid(dir / file, m, att.grid_height, att.grid_width);
    manifest["maps"].push_back({{"layer", m.layer}, {"head", label}, {"file", file},
                                {"query_len", m.query_len}, {"key_len", m.key_len}});
  };
  for (const auto& m : att.heads) emit(m, "head" + std::to_string(m.head));
  emit(att.mean, "mean");
  std::ofstream out(dir / (stem + "_manifest.json"), std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write attention manifest in '" + dir.string() + "'");
}

// ---- generation files ---------------------------------------------------------------

std::string generation_to_json_line(const GenerationRecord& r) {
  json j;
  j["image_id"] = r.image_id;
  j["question"] = r.question;
  j["generated"] = r.generated;
  j["verdict"] = std::string(to_string(r.verdict));
  j["gold_verdict"] = std::string(data::to_string(r.gold_verdict));
  j["gold_answers"] = r.gold_answers;
  return j.dump();
}

GenerationRecord generation_from_json_line(std::string_view line) {
  const json j = json::parse(line);
  GenerationRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.generated = j.at("generated").get<std::string>();
  r.verdict = parse_predicted_verdict(j.at("verdict").get<std::string>());
  r.gold_verdict = data::parse_verdict(j.at("gold_verdict").get<std::string>());
  r.gold_answers = j.at("gold_answers").get<std::vector<std::string>>();
  if (r.gold_answers.empty()) throw std::invalid_argument("generation record without gold answers");
  return r;
}

void write_generations(const std::filesystem::path& path, std::span<const GenerationRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (const auto& r : records) out << generation_to_json_line(r) << "\n";
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<GenerationRecord> read_generations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(generation_from_json_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ddvqa::infer
