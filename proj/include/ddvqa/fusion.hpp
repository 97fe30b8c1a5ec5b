#pragma once

// Detector enhancement with frozen DD-VQA image features: a small
// convolutional fake/real detector whose feature map F' is summed with a
// resampled, channel-projected copy of the DD-VQA patch tokens before the
// classification head. Includes the baseline vs enhanced benchmark on
// intra-testing and held-out-artifact (cross-testing) corpora.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ddvqa/image.hpp"
#include "ddvqa/model.hpp"
#include "ddvqa/rng.hpp"
#include "ddvqa/synthetic.hpp"
#include "ddvqa/tensor.hpp"
#include "json.hpp"

namespace ddvqa::fusion {

/// Grid features, `values` is [height*width, channels] in row-major grid
/// order and carries no graph.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  Tensor values;
};

/// Patch tokens of encode_image without [CLS], reshaped to the patch grid.
/// Throws DimensionError when the image does not fit the model config.
FeatureMap extract_ddvqa_features(const model::DdvqaModel& model, const Image& image);

/// Nearest-neighbour grid resize followed by a learnable C -> C' projection.
/// The projection starts at zero.
class FusionTransform {
 public:
  FusionTransform(std::size_t in_h, std::size_t in_w, std::size_t in_c, std::size_t out_h, std::size_t out_w,
                  std::size_t out_c);

  /// [out_h*out_w, out_c]. Throws DimensionError on an input of another shape.
  Tensor operator()(const FeatureMap& f) const;

  Tensor& projection() { return projection_; }
  const Tensor& projection() const { return projection_; }
  std::span<const std::size_t> source_rows() const { return rows_; }
  std::size_t out_height() const { return out_h_; }
  std::size_t out_width() const { return out_w_; }
  std::size_t out_channels() const { return out_c_; }

 private:
  std::size_t in_h_, in_w_, in_c_, out_h_, out_w_, out_c_;
  std::vector<std::size_t> rows_;
  Tensor projection_;
};

/// F_en = F' + θ(F). Throws DimensionError when the shapes differ.
Tensor fuse(const Tensor& f_prime, const Tensor& theta_f);

struct DetectorConfig {
  std::size_t image_size = 32;
  std::size_t kernel = 4;  // stride == kernel
  std::size_t channels = 16;
  std::size_t hidden = 16;

  std::size_t grid() const { return image_size / kernel; }
  void validate() const;
};

/// Conv (non-overlapping k×k, GELU) → F' → [fusion] → 1×1 conv + GELU →
/// linear readout over the whole grid → fake logit.
class ToyDetector {
 public:
  ToyDetector(const DetectorConfig& config, Rng& rng);

  const DetectorConfig& config() const { return config_; }
  const std::vector<model::Parameter>& parameters() const { return params_; }

  /// F', [grid*grid, channels].
  Tensor features(const Image& image) const;
  /// Fake logit of a feature map, shape [1, 1].
  Tensor head(const Tensor& feature_map) const;
  /// Baseline when `transform` is null, enhanced otherwise.
  Tensor logit(const Image& image, const FusionTransform* transform = nullptr,
               const FeatureMap* ddvqa = nullptr) const;
  double probability(const Image& image, const FusionTransform* transform = nullptr,
                     const FeatureMap* ddvqa = nullptr) const;

 private:
  DetectorConfig config_;
  std::vector<model::Parameter> params_;
  model::Linear conv_, mix_;
  Tensor readout_, readout_bias_;  // position-wise linear readout
};

struct LabeledImage {
  Image image;
  int label = 0;  // 1 = fake
  FeatureMap ddvqa;  // empty unless the corpus was prepared for fusion
};

/// Faces rendered with 1-2 artifacts from `artifacts` (fake) or none (real).
std::vector<LabeledImage> make_detection_corpus(std::size_t n, std::uint32_t image_size,
                                                const std::vector<data::ArtifactType>& artifacts, double p_fake,
                                                Rng& rng);

struct DetectorTrainConfig {
  double lr = 3e-3;
  double weight_decay = 0.0;
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  /// Keep the projection at zero and out of the optimizer.
  bool freeze_projection_zero = false;
};

/// BCE training. `transform` (nullable) selects the enhanced variant; its
/// projection shares the optimizer with the detector.
void train_detector(ToyDetector& detector, FusionTransform* transform, std::span<const LabeledImage> data,
                    const DetectorTrainConfig& config, Rng& rng);

std::vector<double> detector_scores(const ToyDetector& detector, const FusionTransform* transform,
                                    std::span<const LabeledImage> data);

struct BenchmarkConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t n_train = 800;
  std::size_t n_test = 200;
  double p_fake = 0.5;
  DetectorConfig detector;
  DetectorTrainConfig train;
};

struct BenchmarkRow {
  std::string variant;  // "baseline" or "enhanced"
  std::string corpus;   // "intra" or "cross"
  std::uint64_t seed = 0;
  double acc = 0.0;
  double auc = 0.0;
  double eer = 0.0;
};

/// Per seed: train on seen artifacts, test on fresh seen-artifact faces
/// (intra) and on held-out-artifact faces (cross). Both variants share the
/// corpora and the detector initialization of the seed.
std::vector<BenchmarkRow> benchmark(const model::DdvqaModel& ddvqa, const BenchmarkConfig& config);

void write_benchmark_csv(const std::filesystem::path& path, std::span<const BenchmarkRow> rows);
/// Mean and sample sd per (variant, corpus).
nlohmann::json benchmark_summary(std::span<const BenchmarkRow> rows);

}  // namespace ddvqa::fusion
