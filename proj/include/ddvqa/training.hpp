#pragma once

// Losses (teacher-forced LM, text and image InfoNCE), AdamW, and the epoch
// loop with checkpointing and exact resume.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddvqa/dataset.hpp"
#include "ddvqa/image.hpp"
#include "ddvqa/mining.hpp"
#include "ddvqa/model.hpp"
#include "ddvqa/tokenizer.hpp"

namespace ddvqa::train {

using model::DdvqaModel;
using model::Parameter;
using model::QuestionContext;

using ImageStore = std::map<std::string, Image>;

struct Ablation {
  bool text_cl = true;
  bool image_cl = true;

  /// "lm", "lm+t", "lm+i", "lm+t+i".
  static Ablation parse(std::string_view s);
  std::string name() const;
  bool operator==(const Ablation&) const = default;
};

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.05;
  std::size_t batch_size = 8;
  std::size_t epochs = 20;
  double temperature = 0.07;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Ablation ablation;
  /// Mine triplets every epoch even when both contrastive terms are off.
  bool always_mine = false;
  /// Write an epoch checkpoint every N epochs (0: only best and final).
  std::size_t checkpoint_every = 0;
  /// Cap on validation records scored per epoch (0: all).
  std::size_t val_limit = 0;

  void validate() const;
};

struct LossBreakdown {
  double lm = 0.0;
  double text_contrastive = 0.0;
  double image_contrastive = 0.0;
  double total = 0.0;
  std::size_t n_text_triplets = 0;
  std::size_t n_image_triplets = 0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, LossBreakdown snapshot)
      : std::runtime_error(what), breakdown(snapshot) {}
  LossBreakdown breakdown;
};

// ---- encoded examples ---------------------------------------------------------

struct Example {
  std::string image_id;
  std::vector<int> question;              // framed question ids
  std::vector<std::vector<int>> answers;  // framed answer ids, [CLS] .. [SEP]
};

/// Vocabulary over the questions and answers of `records`.
text::Vocabulary build_vocabulary(std::span<const data::QARecord> records);

std::vector<Example> encode_examples(std::span<const data::QARecord> records,
                                     const text::Vocabulary& vocab);

/// Decoder input [CLS][BOS] a1..ak and targets [ignore, a1..ak, SEP] for a
/// framed answer [CLS] a1..ak [SEP].
struct TeacherForcing {
  std::vector<int> inputs;
  std::vector<int> targets;
};
TeacherForcing teacher_forcing(std::span<const int> framed_answer);

inline constexpr int kIgnoreIndex = -100;

// ---- losses -----------------------------------------------------------------------

/// Mean over answers of the per-answer token-mean cross-entropy.
Tensor lm_loss(const DdvqaModel& model, const QuestionContext& ctx,
               std::span<const std::vector<int>> answers);

/// -log(exp(s_ap/τ) / (exp(s_ap/τ) + exp(s_an/τ))) over L2-normalized vectors.
Tensor info_nce(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double tau);

struct TextTripletInput {
  const QuestionContext* ctx = nullptr;  // anchor image + question
  std::span<const int> anchor;
  std::span<const int> positive;
  std::span<const int> negative;
};
/// Mean InfoNCE over text [CLS] representations; scalar 0 for an empty batch.
Tensor text_contrastive_loss(const DdvqaModel& model, std::span<const TextTripletInput> batch,
                             double tau);

/// Image encodings shared within one batch graph.
class ImageCache {
 public:
  explicit ImageCache(const DdvqaModel& model) : model_(model) {}
  const Tensor& tokens(const Image& image);
  Tensor cls(const Image& image);

 private:
  const DdvqaModel& model_;
  std::map<const Image*, Tensor> cache_;
};

struct ImageTripletInput {
  const Image* anchor = nullptr;
  const Image* positive = nullptr;
  const Image* negative = nullptr;
};
/// Mean InfoNCE over image [CLS] representations; scalar 0 for an empty batch.
Tensor image_contrastive_loss(const DdvqaModel& model, std::span<const ImageTripletInput> batch,
                              double tau, ImageCache* cache = nullptr);

// ---- optimizer ------------------------------------------------------------------------

/// Adam moments with decoupled weight decay applied as p *= (1 - lr·wd).
class AdamW {
 public:
  AdamW(std::vector<Parameter> params, const TrainConfig& config);
  void step();
  void zero_grad();

  std::size_t steps() const { return t_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  std::vector<Parameter> params_;
  double lr_, beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Scales every gradient so the global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
double clip_grad_norm(std::span<const Parameter> params, double max_norm);

// ---- steps and the epoch loop ----------------------------------------------------------

struct Batch {
  std::vector<std::size_t> records;  // indices into the example list
  std::vector<data::ContrastiveTriplet> text_triplets;
  std::vector<data::ContrastiveTriplet> image_triplets;
};

struct BatchLoss {
  Tensor total;
  LossBreakdown breakdown;
};

/// Builds L = L_LM + L_T + L_I for one batch; disabled or empty terms are not
/// part of the graph.
BatchLoss batch_loss(const DdvqaModel& model, std::span<const Example> examples,
                     const ImageStore& images, const Batch& batch, const TrainConfig& config);

/// Loss, backward, gradient clipping, AdamW update, zeroed gradients.
LossBreakdown train_step(const DdvqaModel& model, AdamW& optimizer, std::span<const Example> examples,
                         const ImageStore& images, const Batch& batch, const TrainConfig& config);

/// Mean LM loss over records without building a graph.
double evaluate_lm(const DdvqaModel& model, std::span<const Example> examples, const ImageStore& images,
                   std::size_t limit = 0);

struct CurveRow {
  std::size_t epoch = 0;
  double lm = 0.0;
  double text_cl = 0.0;
  double image_cl = 0.0;
  double total = 0.0;
  double val_lm = 0.0;
};

std::string curve_header();
std::string curve_line(const CurveRow& row);

struct FitInputs {
  std::span<const data::QARecord> train;
  std::span<const data::QARecord> val;
  const ImageStore* images = nullptr;
  const text::Vocabulary* vocab = nullptr;
};

struct FitResult {
  std::filesystem::path final_checkpoint;
  std::optional<std::filesystem::path> best_checkpoint;
  std::filesystem::path curve_csv;
  std::filesystem::path train_state;
  std::vector<CurveRow> curve;
};

/// Epoch loop. Shuffling and mining use two streams forked from `root`, so
/// toggling the contrastive terms never changes the LM data order. With
/// `resume` set, continues from a train-state file written by an earlier run.
FitResult fit(DdvqaModel& model, const FitInputs& inputs, const TrainConfig& config,
              const std::filesystem::path& out_dir, Rng& root,
              const std::optional<std::filesystem::path>& resume = std::nullopt);

// ---- overfit recipe ----------------------------------------------------------------

/// Eight single-answer QA pairs over eight 32×32 synthetic faces, each image
/// contributing one question chosen by its index (general question or a
/// fine-grained one), plus the model and optimizer settings that memorize
/// them. Model and fit share one root generator seeded with `train.seed`.
struct OverfitSuite {
  std::vector<data::QARecord> records;
  ImageStore images;
};
OverfitSuite overfit_suite();
model::ModelConfig overfit_model_config(std::size_t vocab_size);
TrainConfig overfit_train_config();

}  // namespace ddvqa::train
