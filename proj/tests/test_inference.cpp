#include <cmath>

#include "ddvqa/inference.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace ddvqa;
using namespace ddvqa::infer;
using testing::noise_image;

namespace {

struct Setup {
  std::vector<data::QARecord> records;
  text::Vocabulary vocab;
  Setup() {
    data::SyntheticConfig cfg;
    cfg.n_images = 8;
    cfg.image_size = 16;
    records = data::generate_synthetic_corpus(cfg, 21).records;
    vocab = train::build_vocabulary(records);
  }
};

}  // namespace

TEST_CASE("verdict extraction") {
  CHECK(extract_verdict("The skin looks fake. The person's skin looks blurry.") == PredictedVerdict::kFake);
  CHECK(extract_verdict("The image looks real because the face features are complete.") ==
        PredictedVerdict::kReal);
  CHECK(extract_verdict("The person has eyebrows.") == PredictedVerdict::kUndetermined);
  CHECK(extract_verdict("It is real or fake.") == PredictedVerdict::kUndetermined);
  CHECK(extract_verdict("") == PredictedVerdict::kUndetermined);
  CHECK(extract_verdict("The nose looks unreal.") == PredictedVerdict::kUndetermined);
  CHECK(extract_verdict("Nothing here! The face looks fake.") == PredictedVerdict::kUndetermined);
  CHECK(extract_verdict("The mouth looks FAKE because it is blurry") == PredictedVerdict::kFake);
}

TEST_CASE("appending sentences never changes the verdict") {
  const char* firsts[] = {"The skin looks fake.", "The eyes look real.", "The nose is odd.", "Real and fake?"};
  const char* tails[] = {"", " The image looks real.", " It is fake! Really fake.", " real"};
  for (const char* f : firsts)
    for (const char* t : tails) CHECK(extract_verdict(std::string(f) + t) == extract_verdict(f));
}

TEST_CASE("gold answers survive encode then detokenize") {
  Setup s;
  for (const auto& r : s.records)
    for (const auto& a : r.answers) {
      const auto ids = text::encode(a, text::SequenceKind::kAnswer, s.vocab).ids;
      CHECK(text::detokenize(ids, s.vocab) == a);
    }
}

TEST_CASE("greedy generation caps and determinism") {
  Setup s;
  Rng rng(3);
  model::DdvqaModel m(testing::tiny_config(s.vocab.size()), rng);
  const Image img = noise_image(16, 16, 4);
  const std::string q = s.records.front().question;

  // Suppress [SEP] and push the framing tokens up; none of them may appear.
  Tensor bias = m.parameter("head.fc2.bias");
  bias.mutable_data()[text::kSep] = -100.0;
  for (int id : {text::kPad, text::kCls, text::kBos}) bias.mutable_data()[static_cast<std::size_t>(id)] = 100.0;

  const auto one = generate(m, s.vocab, img, q, 1);
  CHECK(one.token_ids.size() == 1);
  CHECK(one.stop_reason == StopReason::kMaxLen);

  const auto full = generate(m, s.vocab, img, q);
  CHECK(full.token_ids.size() == kMaxGeneratedTokens);
  CHECK(full.stop_reason == StopReason::kMaxLen);
  for (int id : full.token_ids) {
    CHECK(id != text::kPad);
    CHECK(id != text::kCls);
    CHECK(id != text::kBos);
  }
  const auto again = generate(m, s.vocab, img, q);
  CHECK(again.token_ids == full.token_ids);
  CHECK(again.text == full.text);

  bias.mutable_data()[text::kSep] = 200.0;
  const auto stop = generate(m, s.vocab, img, q);
  CHECK(stop.token_ids.empty());
  CHECK(stop.stop_reason == StopReason::kEos);
  CHECK(stop.verdict == PredictedVerdict::kUndetermined);
}

TEST_CASE("attention export") {
  Setup s;
  auto cfg = testing::tiny_config(s.vocab.size(), 16, 32, 4);
  Rng rng(5);
  model::DdvqaModel m(cfg, rng);
  const Image img = noise_image(32, 32, 6);
  const std::string q = s.records.front().question;
  const auto att = export_attention(m, s.vocab, img, q);
  const auto qlen = text::encode(q, text::SequenceKind::kQuestion, s.vocab).ids.size();

  CHECK(att.heads.size() == 2);
  CHECK(att.grid_height == 8);
  CHECK(att.grid_width == 8);
  REQUIRE(att.grids.size() == qlen);
  double hi = 0.0, lo = 1.0;
  for (std::size_t r = 0; r < qlen; ++r) {
    CHECK(att.grids[r].size() == 64);
    double sum = att.cls_column[r];
    for (double w : att.grids[r]) sum += w;
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
  for (const auto& h : att.heads) {
    CHECK(h.key_len == 65);
    CHECK(h.query_len == qlen);
    CHECK(h.layer == cfg.n_layers_text - 1);
    for (std::size_t r = 0; r < h.query_len; ++r) {
      double sum = 0.0;
      for (std::size_t k = 0; k < h.key_len; ++k) {
        const double w = h.weights[r * h.key_len + k];
        sum += w;
        hi = std::max(hi, w);
        lo = std::min(lo, w);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
  // Small init weights keep the untrained map close to uniform.
  CHECK(hi / lo < 2.0);

  const auto dir = testing::scratch_dir("attention");
  write_attention(dir, att, "sample");
  std::ifstream mf(dir / "sample_manifest.json");
  const auto manifest = nlohmann::json::parse(mf);
  CHECK(manifest.at("maps").size() == 3);
  for (const auto& entry : manifest.at("maps")) CHECK(std::filesystem::exists(dir / entry.at("file").get<std::string>()));
  std::ifstream csv(dir / "sample_layer1_mean.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("query,cls,p0_0,p0_1", 0) == 0);

  model::AttentionRecorder empty;
  CHECK_THROWS_AS(attention_from_recorder(m, empty, {}), std::logic_error);
}

TEST_CASE("generation records round trip") {
  GenerationRecord r;
  r.image_id = "img0001";
  r.question = "Is the person's nose real or fake?";
  r.generated = "The nose looks fake because it is \"blurry\".";
  r.verdict = PredictedVerdict::kFake;
  r.gold_verdict = data::Verdict::kFake;
  r.gold_answers = {"The nose looks fake.", "The nose looks fake because it is blurry."};
  const auto line = generation_to_json_line(r);
  const auto j = nlohmann::json::parse(line);
  CHECK(j.size() == 6);
  for (const char* key : {"image_id", "question", "generated", "verdict", "gold_verdict", "gold_answers"})
    CHECK(j.contains(key));
  const auto back = generation_from_json_line(line);
  CHECK(back.generated == r.generated);
  CHECK(back.verdict == r.verdict);
  CHECK(back.gold_answers == r.gold_answers);

  const auto dir = testing::scratch_dir("generations");
  const std::vector<GenerationRecord> rs{r, r};
  write_generations(dir / "g.jsonl", rs);
  CHECK(read_generations(dir / "g.jsonl").size() == 2);
  CHECK_THROWS_AS(generation_from_json_line(R"({"image_id":"x"})"), std::exception);
  CHECK(parse_predicted_verdict("undetermined") == PredictedVerdict::kUndetermined);
  CHECK_THROWS_AS(parse_predicted_verdict("maybe"), std::invalid_argument);
}
