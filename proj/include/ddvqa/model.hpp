#pragma once

// Multimodal encoder-decoder: a patch-based image transformer, a question
// self-attention encoder, a cross-attention stack grounding the question on
// the image tokens, and a causal answer decoder that cross-attends to the
// grounded question. All blocks use pre-LayerNorm residual sublayers.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ddvqa/image.hpp"
#include "ddvqa/rng.hpp"
#include "ddvqa/tensor.hpp"
#include "json.hpp"

namespace ddvqa::model {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers_text = 2;
  std::size_t n_layers_image = 2;
  std::size_t n_layers_decoder = 2;
  std::size_t patch_size = 8;
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t channels = 3;
  std::size_t vocab_size = 0;
  std::size_t max_q_len = 32;
  std::size_t max_a_len = 50;
  std::size_t ffn_mult = 4;
  double ln_eps = 1e-5;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  std::size_t grid_height() const { return image_height / patch_size; }
  std::size_t grid_width() const { return image_width / patch_size; }
  std::size_t num_patches() const { return grid_height() * grid_width(); }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct Parameter {
  std::string name;
  Tensor tensor;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;
  Tensor operator()(const Tensor& x) const;
};

struct Attention {
  Linear q, k, v, o;
  std::size_t n_heads = 1;

  /// Multi-head attention of `query` rows over `kv` rows. `key_valid` masks
  /// kv rows (empty = all valid). Per-head weights are appended to
  /// `weights_out` when given.
  Tensor operator()(const Tensor& query, const Tensor& kv, std::span<const std::uint8_t> key_valid,
                    bool causal, std::vector<Tensor>* weights_out = nullptr) const;
};

struct FeedForward {
  Linear fc1, fc2;
  Tensor operator()(const Tensor& x) const;
};

/// Self-attention + feed-forward (image and question stacks).
struct EncoderBlock {
  LayerNorm ln1, ln2;
  Attention attn;
  FeedForward ffn;
};

/// Cross-attention + feed-forward (grounding stack).
struct GroundingBlock {
  LayerNorm ln1, ln2;
  Attention cross;
  FeedForward ffn;
};

/// Causal self-attention + cross-attention + feed-forward.
struct DecoderBlock {
  LayerNorm ln1, ln2, ln3;
  Attention attn, cross;
  FeedForward ffn;
};

/// Grounded question tokens and the validity of each row (PAD rows are
/// masked out of the decoder's cross-attention).
struct QuestionContext {
  Tensor grounded;
  std::vector<std::uint8_t> key_valid;
};

/// Captures per-head cross-attention weights of the final grounding layer.
struct AttentionRecorder {
  std::vector<Tensor> heads;  // each [query_len, num_patches + 1]
};

/// Sinusoidal position table, [length, d].
Tensor sinusoidal_positions(std::size_t length, std::size_t d);

class DdvqaModel {
 public:
  DdvqaModel(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  Tensor& parameter(const std::string& name);

  /// Patch vectors in row-major grid order, [m, p*p*C].
  Tensor patchify(const Image& image) const;
  /// [m+1, d]; row 0 is the image [CLS] token.
  Tensor encode_image(const Image& image) const;
  Tensor image_cls_representation(const Image& image) const;

  /// [len, d]; PAD ids are masked out as keys.
  Tensor encode_question(std::span<const int> ids) const;
  /// Cross-attention of question rows over image tokens; query-shaped output.
  Tensor ground_question(const Tensor& question, const Tensor& image_tokens,
                         AttentionRecorder* recorder = nullptr) const;
  QuestionContext question_context(const Image& image, std::span<const int> question_ids,
                                   AttentionRecorder* recorder = nullptr) const;
  QuestionContext question_context(const Tensor& image_tokens, std::span<const int> question_ids,
                                   AttentionRecorder* recorder = nullptr) const;

  /// Final-layer decoder states, [len, d]. `causal` selects the
  /// self-attention mask.
  Tensor decoder_states(std::span<const int> ids, const QuestionContext& ctx, bool causal) const;
  /// Next-token logits for every prefix position, [len, vocab].
  Tensor decode(std::span<const int> prefix, const QuestionContext& ctx) const;
  /// Row 0 of the decoder run over a framed answer [CLS] a.. [SEP] with
  /// bidirectional self-attention, [d].
  Tensor text_cls_representation(std::span<const int> answer_ids, const QuestionContext& ctx) const;

  // Blocks, exposed for inspection and tests.
  const std::vector<EncoderBlock>& image_blocks() const { return image_blocks_; }
  const std::vector<EncoderBlock>& question_blocks() const { return question_blocks_; }
  const std::vector<GroundingBlock>& grounding_blocks() const { return grounding_blocks_; }
  const std::vector<DecoderBlock>& decoder_blocks() const { return decoder_blocks_; }

 private:
  Tensor embed_text(std::span<const int> ids) const;
  Tensor head(const Tensor& states) const;

  ModelConfig config_;
  std::vector<Parameter> params_;

  Linear patch_proj_;
  Tensor image_cls_, image_pos_;
  std::vector<EncoderBlock> image_blocks_;
  LayerNorm image_ln_;

  Tensor token_embedding_;
  std::vector<EncoderBlock> question_blocks_;
  LayerNorm question_ln_;
  std::vector<GroundingBlock> grounding_blocks_;
  LayerNorm grounding_ln_;
  std::vector<DecoderBlock> decoder_blocks_;
  LayerNorm decoder_ln_;
  Linear head_fc1_, head_fc2_;
  Tensor positions_;
};

/// Weights as f32 in the tensor container plus a sidecar JSON
/// (`<path>.json`) with the config and the vocabulary hash.
void save_model(const std::filesystem::path& path, const DdvqaModel& model,
                const std::string& vocab_hash);
/// Loads weights into a freshly constructed model. When `expected_vocab_hash`
/// is non-empty it must match the sidecar's hash.
DdvqaModel load_model(const std::filesystem::path& path, const std::string& expected_vocab_hash = "");
std::string model_vocab_hash(const std::filesystem::path& path);

/// Copies leaf values between models of identical configuration.
void copy_parameters(const DdvqaModel& from, DdvqaModel& to);

}  // namespace ddvqa::model
