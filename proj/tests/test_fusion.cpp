#include <cmath>
#include <cstring>

#include "ddvqa/fusion.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace ddvqa;
using namespace ddvqa::fusion;

namespace {

model::ModelConfig vqa_config() {
  auto c = testing::tiny_config(20, 16, 32, 8);
  return c;
}

std::vector<std::vector<double>> snapshot(const model::DdvqaModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("DD-VQA features are the patch tokens on the grid") {
  Rng rng(1);
  model::DdvqaModel m(vqa_config(), rng);
  const Image img = testing::noise_image(32, 32, 2);
  const auto f = extract_ddvqa_features(m, img);
  CHECK(f.height == 4);
  CHECK(f.width == 4);
  CHECK(f.channels == 16);
  REQUIRE(f.values.shape() == Shape{16, 16});
  CHECK_FALSE(f.values.requires_grad());
  const Tensor tokens = m.encode_image(img);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) CHECK(f.values.data()[r * 16 + c] == tokens.data()[(r + 1) * 16 + c]);
  const auto again = extract_ddvqa_features(m, img);
  CHECK(std::equal(again.values.data().begin(), again.values.data().end(), f.values.data().begin()));
  CHECK_THROWS_AS(extract_ddvqa_features(m, testing::noise_image(16, 16, 2)), DimensionError);
}

TEST_CASE("transform resamples and projects") {
  FusionTransform t(4, 4, 16, 8, 8, 6);
  const auto rows = t.source_rows();
  REQUIRE(rows.size() == 64);
  CHECK(rows[0] == 0);
  CHECK(rows[1] == 0);
  CHECK(rows[2] == 1);
  CHECK(rows[8] == 0);
  CHECK(rows[16] == 4);
  CHECK(rows[63] == 15);

  FeatureMap f{4, 4, 16, Tensor::full({16, 16}, 1.0)};
  const Tensor out = t(f);
  CHECK(out.shape() == Shape{64, 6});
  for (double v : out.data()) CHECK(v == 0.0);

  FeatureMap wrong{2, 8, 16, Tensor::full({16, 16}, 1.0)};
  CHECK_THROWS_AS(t(wrong), DimensionError);
  CHECK_THROWS_AS(fuse(Tensor::zeros({64, 6}), Tensor::zeros({64, 5})), DimensionError);
}

TEST_CASE("zero projection is the identity on detector logits") {
  Rng rng(3);
  model::DdvqaModel m(vqa_config(), rng);
  DetectorConfig dc;
  ToyDetector det(dc, rng);
  FusionTransform theta(4, 4, 16, dc.grid(), dc.grid(), dc.channels);
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Image img = testing::noise_image(32, 32, 10 + s);
    const auto f = extract_ddvqa_features(m, img);
    const double base = det.logit(img).item();
    const double enh = det.logit(img, &theta, &f).item();
    CHECK(std::memcmp(&base, &enh, sizeof base) == 0);
    const double p = det.probability(img);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  CHECK_THROWS_AS(det.logit(testing::noise_image(32, 32, 1), &theta, nullptr), std::invalid_argument);
}

TEST_CASE("theta(F) equal to -F' cancels the detector features") {
  DetectorConfig dc;
  dc.channels = 3;
  Rng rng(4);
  ToyDetector det(dc, rng);
  const Image img = testing::noise_image(32, 32, 5);
  const Tensor fp = det.features(img);
  // 1x1 grid input broadcast by the resize, identity projection.
  FusionTransform theta(1, 1, fp.shape()[0] * 3, 1, 1, fp.shape()[0] * 3);
  std::vector<double> eye(theta.projection().numel(), 0.0);
  const std::size_t n = fp.shape()[0] * 3;
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  std::copy(eye.begin(), eye.end(), theta.projection().mutable_data().begin());
  std::vector<double> neg(fp.data().begin(), fp.data().end());
  for (auto& v : neg) v = -v;
  const Tensor theta_f = reshape(theta(FeatureMap{1, 1, n, Tensor::from_data({1, n}, neg)}), fp.shape());
  const Tensor fen = fuse(fp, theta_f);
  for (double v : fen.data()) CHECK(v == 0.0);
}

TEST_CASE("detector training never touches the DD-VQA weights") {
  Rng rng(6);
  model::DdvqaModel m(vqa_config(), rng);
  const auto before = snapshot(m);
  DetectorConfig dc;
  Rng data_rng(7);
  auto set = make_detection_corpus(12, 32, data::seen_artifacts(), 0.5, data_rng);
  for (auto& s : set) s.ddvqa = extract_ddvqa_features(m, s.image);
  ToyDetector det(dc, rng);
  FusionTransform theta(4, 4, 16, dc.grid(), dc.grid(), dc.channels);
  DetectorTrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  train_detector(det, &theta, set, tc, rng);
  double moved = 0.0;
  for (double v : theta.projection().data()) moved += std::abs(v);
  CHECK(moved > 0.0);
  CHECK(snapshot(m) == before);
  for (const auto& p : m.parameters())
    for (double g : p.tensor.grad()) CHECK(g == 0.0);
}

TEST_CASE("frozen zero projection reproduces the baseline benchmark rows") {
  Rng rng(8);
  model::DdvqaModel m(vqa_config(), rng);
  BenchmarkConfig bc;
  bc.seeds = {5};
  bc.n_train = 24;
  bc.n_test = 16;
  bc.train.epochs = 2;
  bc.train.batch_size = 8;
  bc.train.freeze_projection_zero = true;
  const auto rows = benchmark(m, bc);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rows[i].variant == "baseline");
    CHECK(rows[i + 2].variant == "enhanced");
    CHECK(rows[i].corpus == rows[i + 2].corpus);
    CHECK(rows[i].acc == rows[i + 2].acc);
    CHECK(rows[i].auc == rows[i + 2].auc);
    CHECK(rows[i].eer == rows[i + 2].eer);
  }
  const auto again = benchmark(m, bc);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].auc == rows[i].auc);

  const auto dir = testing::scratch_dir("fusion");
  write_benchmark_csv(dir / "bench.csv", rows);
  CHECK(testing::read_file(dir / "bench.csv").rfind("variant,corpus,seed,acc,auc,eer\n", 0) == 0);
  const auto summary = benchmark_summary(rows);
  CHECK(summary.size() == 4);
  CHECK(summary[0].at("n_seeds") == 1);

  DetectorConfig other;
  other.image_size = 64;
  bc.detector = other;
  CHECK_THROWS_AS(benchmark(m, bc), std::invalid_argument);
}

TEST_CASE("detection corpora") {
  Rng rng(9);
  const auto set = make_detection_corpus(40, 32, data::held_out_artifacts(), 0.5, rng);
  std::size_t fakes = 0;
  for (const auto& s : set) {
    CHECK(s.image.height == 32);
    fakes += static_cast<std::size_t>(s.label);
  }
  CHECK(fakes > 5);
  CHECK(fakes < 35);
}
