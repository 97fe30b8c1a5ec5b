#include "ddvqa/mining.hpp"
#include "doctest.h"
#include "oracles/mining_scan.hpp"

using namespace ddvqa;
using namespace ddvqa::data;

namespace {

QARecord rec(std::string image, Component c, Verdict v, std::vector<std::vector<std::string>> reasons) {
  QARecord r;
  r.image_id = std::move(image);
  r.component = c;
  r.question = fine_grained_question(c);
  r.verdict = v;
  for (const auto& rs : reasons) r.answers.push_back(render_answer(c, v, rs));
  return r;
}

}  // namespace

TEST_CASE("text triplet") {
  std::vector<QARecord> corpus{
      rec("a", Component::kEyebrows, Verdict::kFake, {{"overlapped"}, {"blurry"}, {"overlapped", "blurry"}}),
      rec("b", Component::kEyebrows, Verdict::kReal, {{"arched"}}),
      rec("c", Component::kNose, Verdict::kFake, {{"blurry"}}),
  };
  TripletMiner miner(corpus);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto t = miner.mine_text(0, rng);
    REQUIRE(t);
    CHECK(t->anchor == AnswerRef{0, 0});
    CHECK(t->positive.record == 0);
    CHECK(t->positive.answer < 3);
    CHECK(t->negative == AnswerRef{1, 0});
  }
  const auto single = miner.mine_text(1, rng);
  REQUIRE(single);
  CHECK(single->positive == single->anchor);
  CHECK_FALSE(miner.mine_text(2, rng));
}

TEST_CASE("image triplet") {
  std::vector<QARecord> corpus{
      rec("a", Component::kEyebrows, Verdict::kFake, {{"overlapped"}}),
      rec("b", Component::kEyebrows, Verdict::kFake, {{"Overlapped "}}),
      rec("c", Component::kEyebrows, Verdict::kReal, {{"arched"}}),
      rec("d", Component::kEyebrows, Verdict::kFake, {{"blurry"}}),
  };
  TripletMiner miner(corpus);
  Rng rng(2);
  const auto t = miner.mine_image(0, rng);
  REQUIRE(t);
  CHECK(t->modality == Modality::kImage);
  CHECK(t->positive.record == 1);
  CHECK(t->negative.record == 2);
  CHECK_FALSE(miner.mine_image(3, rng));  // "blurry" is unique
}

TEST_CASE("indexed candidates equal the exhaustive scan") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto corpus = oracle::random_corpus(rng, 1 + uniform_index(rng, 50));
    TripletMiner miner(corpus);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      CHECK(miner.text_negative_candidates(i) == oracle::scan_text_negatives(corpus, i));
      CHECK(miner.image_positive_candidates(i) == oracle::scan_image_positives(corpus, i));
      CHECK(miner.image_negative_candidates(i) == oracle::scan_image_negatives(corpus, i));
      for (const auto& n : miner.text_negative_candidates(i))
        CHECK(corpus[n.record].verdict != corpus[i].verdict);
    }
  }
}
