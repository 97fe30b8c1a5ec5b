#include "ddvqa/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ddvqa/metrics.hpp"
#include "ddvqa/training.hpp"

namespace ddvqa::fusion {

FeatureMap extract_ddvqa_features(const model::DdvqaModel& model, const Image& image) {
  NoGradGuard guard;
  const auto& cfg = model.config();
  const Tensor tokens = model.encode_image(image);
  FeatureMap f;
  f.height = cfg.grid_height();
  f.width = cfg.grid_width();
  f.channels = cfg.d_model;
  f.values = slice(tokens, 0, 1, tokens.shape()[0]).detach();
  return f;
}

FusionTransform::FusionTransform(std::size_t in_h, std::size_t in_w, std::size_t in_c, std::size_t out_h,
                                 std::size_t out_w, std::size_t out_c)
    : in_h_(in_h), in_w_(in_w), in_c_(in_c), out_h_(out_h), out_w_(out_w), out_c_(out_c) {
  if (in_h == 0 || in_w == 0 || in_c == 0 || out_h == 0 || out_w == 0 || out_c == 0)
    throw std::invalid_argument("FusionTransform: zero dimension");
  rows_.reserve(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) rows_.push_back((y * in_h / out_h) * in_w + x * in_w / out_w);
  projection_ = Tensor::zeros({in_c, out_c}, true);
}

Tensor FusionTransform::operator()(const FeatureMap& f) const {
  if (f.height != in_h_ || f.width != in_w_ || f.channels != in_c_ ||
      f.values.shape() != Shape{in_h_ * in_w_, in_c_})
    throw DimensionError("FusionTransform: expected a " + std::to_string(in_h_) + "x" + std::to_string(in_w_) + "x" +
                         std::to_string(in_c_) + " feature map, got " + std::to_string(f.height) + "x" +
                         std::to_string(f.width) + "x" + std::to_string(f.channels));
  return matmul(gather_rows(f.values, rows_), projection_);
}

Tensor fuse(const Tensor& f_prime, const Tensor& theta_f) {
  if (f_prime.shape() != theta_f.shape())
    throw DimensionError("fuse: detector features " + shape_to_string(f_prime.shape()) + " vs transformed " +
                         shape_to_string(theta_f.shape()));
  return add(f_prime, theta_f);
}

void DetectorConfig::validate() const {
  if (kernel == 0 || image_size % kernel != 0)
    throw std::invalid_argument("DetectorConfig: kernel must divide image_size");
  if (channels == 0 || hidden == 0) throw std::invalid_argument("DetectorConfig: zero width");
}

ToyDetector::ToyDetector(const DetectorConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    std::vector<double> w(in * out);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& x : w) x = normal(rng, 0.0, sd);
    model::Linear l{Tensor::from_data({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
    params_.push_back({name + ".weight", l.weight});
    params_.push_back({name + ".bias", l.bias});
    return l;
  };
  conv_ = linear("conv", config_.kernel * config_.kernel * 3, config_.channels);
  mix_ = linear("mix", config_.channels, config_.hidden);
  {
    const std::size_t n = config_.grid() * config_.grid() * config_.hidden;
    std::vector<double> w(n);
    for (auto& x : w) x = normal(rng, 0.0, 1.0 / std::sqrt(static_cast<double>(n)));
    readout_ = Tensor::from_data({config_.grid() * config_.grid(), config_.hidden}, std::move(w), true);
    readout_bias_ = Tensor::zeros({1, 1}, true);
    params_.push_back({"readout.weight", readout_});
    params_.push_back({"readout.bias", readout_bias_});
  }
}

Tensor ToyDetector::features(const Image& image) const {
  const std::size_t k = config_.kernel, g = config_.grid();
  if (image.height != config_.image_size || image.width != config_.image_size || image.channels != 3)
    throw DimensionError("ToyDetector: expected a " + std::to_string(config_.image_size) + "x" +
                         std::to_string(config_.image_size) + "x3 image");
  std::vector<double> v;
  v.reserve(g * g * k * k * 3);
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px)
      for (std::size_t dy = 0; dy < k; ++dy)
        for (std::size_t dx = 0; dx < k; ++dx)
          for (std::uint32_t ch = 0; ch < 3; ++ch)
            v.push_back(image.at(static_cast<std::uint32_t>(py * k + dy), static_cast<std::uint32_t>(px * k + dx), ch));
  return gelu(conv_(Tensor::from_data({g * g, k * k * 3}, std::move(v))));
}

Tensor ToyDetector::head(const Tensor& feature_map) const {
  const Tensor h = gelu(mix_(feature_map));
  return add(reshape(sum(mul(h, readout_)), {1, 1}), readout_bias_);
}

Tensor ToyDetector::logit(const Image& image, const FusionTransform* transform, const FeatureMap* ddvqa) const {
  Tensor f = features(image);
  if (transform != nullptr) {
    if (ddvqa == nullptr) throw std::invalid_argument("ToyDetector: enhanced variant needs DD-VQA features");
    f = fuse(f, (*transform)(*ddvqa));
  }
  return head(f);
}

double ToyDetector::probability(const Image& image, const FusionTransform* transform,
                                const FeatureMap* ddvqa) const {
  NoGradGuard guard;
  return 1.0 / (1.0 + std::exp(-logit(image, transform, ddvqa).item()));
}

std::vector<LabeledImage> make_detection_corpus(std::size_t n, std::uint32_t image_size,
                                                const std::vector<data::ArtifactType>& artifacts, double p_fake,
                                                Rng& rng) {
  if (artifacts.empty()) throw std::invalid_argument("make_detection_corpus: no artifact types");
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<data::ArtifactType> planted;
    if (bernoulli(rng, p_fake)) {
      const std::size_t count = std::min<std::size_t>(artifacts.size(), 1 + uniform_index(rng, 2));
      for (auto j : sample_without_replacement(rng, artifacts.size(), count)) planted.push_back(artifacts[j]);
    }
    auto img = data::render_face("det" + std::to_string(i), image_size, planted, rng);
    out.push_back({std::move(img.pixels), planted.empty() ? 0 : 1, {}});
  }
  return out;
}

void train_detector(ToyDetector& detector, FusionTransform* transform, std::span<const LabeledImage> data,
                    const DetectorTrainConfig& config, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("train_detector: empty corpus");
  std::vector<model::Parameter> params = detector.parameters();
  if (transform != nullptr && !config.freeze_projection_zero)
    params.push_back({"fusion.projection", transform->projection()});
  train::TrainConfig tc;
  tc.lr = config.lr;
  tc.weight_decay = config.weight_decay;
  train::AdamW opt(params, tc);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::max<std::size_t>(1, config.batch_size);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<Tensor> logits;
      std::vector<double> targets;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = data[order[i]];
        logits.push_back(detector.logit(s.image, transform, transform ? &s.ddvqa : nullptr));
        targets.push_back(static_cast<double>(s.label));
      }
      Tensor loss = bce_with_logits(reshape(concat(logits, 0), {targets.size()}), targets);
      loss.backward();
      opt.step();
      opt.zero_grad();
      if (transform != nullptr && config.freeze_projection_zero) transform->projection().zero_grad();
    }
  }
}

std::vector<double> detector_scores(const ToyDetector& detector, const FusionTransform* transform,
                                    std::span<const LabeledImage> data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(detector.probability(s.image, transform, transform ? &s.ddvqa : nullptr));
  return out;
}

namespace {

BenchmarkRow score_row(const std::string& variant, const std::string& corpus, std::uint64_t seed,
                       const std::vector<double>& scores, std::span<const LabeledImage> data) {
  std::vector<int> labels;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    labels.push_back(data[i].label);
    correct += static_cast<std::size_t>((scores[i] >= 0.5 ? 1 : 0) == data[i].label);
  }
  const auto ae = metrics::auc_eer(scores, labels);
  return {variant, corpus, seed, static_cast<double>(correct) / static_cast<double>(data.size()), ae.auc, ae.eer};
}

}  // namespace

std::vector<BenchmarkRow> benchmark(const model::DdvqaModel& ddvqa, const BenchmarkConfig& config) {
  const auto& dc = config.detector;
  dc.validate();
  const auto& mc = ddvqa.config();
  if (mc.image_height != dc.image_size || mc.image_width != dc.image_size)
    throw std::invalid_argument("benchmark: DD-VQA model expects " + std::to_string(mc.image_height) + "x" +
                                std::to_string(mc.image_width) + " images, detector uses " +
                                std::to_string(dc.image_size));
  const auto size = static_cast<std::uint32_t>(dc.image_size);

  std::vector<BenchmarkRow> rows;
  for (std::uint64_t seed : config.seeds) {
    Rng root(seed);
    Rng data_rng = fork(root);
    auto train_set = make_detection_corpus(config.n_train, size, data::seen_artifacts(), config.p_fake, data_rng);
    auto intra = make_detection_corpus(config.n_test, size, data::seen_artifacts(), config.p_fake, data_rng);
    auto cross = make_detection_corpus(config.n_test, size, data::held_out_artifacts(), config.p_fake, data_rng);
    for (auto* set : {&train_set, &intra, &cross})
      for (auto& s : *set) s.ddvqa = extract_ddvqa_features(ddvqa, s.image);
    const Rng init = fork(root);
    const Rng shuffle = fork(root);

    for (const bool enhanced : {false, true}) {
      Rng init_rng = init, shuffle_rng = shuffle;
      ToyDetector det(dc, init_rng);
      FusionTransform theta(mc.grid_height(), mc.grid_width(), mc.d_model, dc.grid(), dc.grid(), dc.channels);
      FusionTransform* t = enhanced ? &theta : nullptr;
      train_detector(det, t, train_set, config.train, shuffle_rng);
      const std::string variant = enhanced ? "enhanced" : "baseline";
      rows.push_back(score_row(variant, "intra", seed, detector_scores(det, t, intra), intra));
      rows.push_back(score_row(variant, "cross", seed, detector_scores(det, t, cross), cross));
    }
  }
  return rows;
}

void write_benchmark_csv(const std::filesystem::path& path, std::span<const BenchmarkRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,corpus,seed,acc,auc,eer\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g", r.acc, r.auc, r.eer);
    out << r.variant << ',' << r.corpus << ',' << r.seed << ',' << buf << '\n';
  }
}

nlohmann::json benchmark_summary(std::span<const BenchmarkRow> rows) {
  std::map<std::pair<std::string, std::string>, std::vector<const BenchmarkRow*>> groups;
  for (const auto& r : rows) groups[{r.variant, r.corpus}].push_back(&r);
  auto stats = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return nlohmann::json{{"mean", m}, {"sd", v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0}};
  };
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [key, rs] : groups) {
    std::vector<double> acc, auc, eer;
    for (const auto* r : rs) {
      acc.push_back(r->acc);
      auc.push_back(r->auc);
      eer.push_back(r->eer);
    }
    out.push_back({{"variant", key.first},
                   {"corpus", key.second},
                   {"n_seeds", rs.size()},
                   {"acc", stats(acc)},
                   {"auc", stats(auc)},
                   {"eer", stats(eer)}});
  }
  return out;
}

}  // namespace ddvqa::fusion
