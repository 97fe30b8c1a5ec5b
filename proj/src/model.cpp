#include "ddvqa/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ddvqa/checkpoint.hpp"
#include "ddvqa/tokenizer.hpp"

namespace ddvqa::model {

using nlohmann::json;

// ---- config -------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
  if (d_model == 0 || n_heads == 0) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0)
    fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  if (patch_size == 0) fail("patch_size must be positive");
  if (image_height % patch_size != 0 || image_width % patch_size != 0)
    fail("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
         " is not divisible by patch " + std::to_string(patch_size));
  if (image_height == 0 || image_width == 0 || channels == 0) fail("empty image dimensions");
  if (n_layers_text == 0 || n_layers_image == 0 || n_layers_decoder == 0)
    fail("every stack needs at least one layer");
  if (vocab_size <= static_cast<std::size_t>(text::kNumSpecials))
    fail("vocab_size must exceed the special tokens");
  if (ffn_mult == 0) fail("ffn_mult must be positive");
  if (!(ln_eps > 0)) fail("ln_eps must be positive");
}

json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"n_heads", n_heads},
          {"n_layers_text", n_layers_text},
          {"n_layers_image", n_layers_image},
          {"n_layers_decoder", n_layers_decoder},
          {"patch_size", patch_size},
          {"image_height", image_height},
          {"image_width", image_width},
          {"channels", channels},
          {"vocab_size", vocab_size},
          {"max_q_len", max_q_len},
          {"max_a_len", max_a_len},
          {"ffn_mult", ffn_mult},
          {"ln_eps", ln_eps}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_layers_text = j.at("n_layers_text").get<std::size_t>();
  c.n_layers_image = j.at("n_layers_image").get<std::size_t>();
  c.n_layers_decoder = j.at("n_layers_decoder").get<std::size_t>();
  c.patch_size = j.at("patch_size").get<std::size_t>();
  c.image_height = j.at("image_height").get<std::size_t>();
  c.image_width = j.at("image_width").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_q_len = j.at("max_q_len").get<std::size_t>();
  c.max_a_len = j.at("max_a_len").get<std::size_t>();
  c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.validate();
  return c;
}

// ---- layers ---------------------------------------------------------------------

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

Tensor Attention::operator()(const Tensor& query, const Tensor& kv,
                             std::span<const std::uint8_t> key_valid, bool causal,
                             std::vector<Tensor>* weights_out) const {
  const Tensor qp = q(query);
  const Tensor kp = k(kv);
  const Tensor vp = v(kv);
  const std::size_t d = qp.cols();
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto b = h * dh, e = b + dh;
    const Tensor qh = n_heads == 1 ? qp : slice(qp, 1, b, e);
    const Tensor kh = n_heads == 1 ? kp : slice(kp, 1, b, e);
    const Tensor vh = n_heads == 1 ? vp : slice(vp, 1, b, e);
    const Tensor weights = masked_softmax(scale(matmul_nt(qh, kh), inv_sqrt), key_valid, causal);
    if (weights_out) weights_out->push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor merged = n_heads == 1 ? heads[0] : concat(heads, 1);
  return o(merged);
}

Tensor FeedForward::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
  std::vector<double> v(length * d);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      v[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from_data({length, d}, std::move(v));
}

// ---- model ------------------------------------------------------------------------

DdvqaModel::DdvqaModel(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t ff = d * config_.ffn_mult;

  auto normal_param = [&](const std::string& name, Shape shape, double sd = 0.02) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = normal(rng, 0.0, sd);
    auto t = Tensor::from_data(std::move(shape), std::move(v), true);
    params_.push_back({name, t});
    return t;
  };
  auto const_param = [&](const std::string& name, Shape shape, double value) {
    auto t = Tensor::full(std::move(shape), value, true);
    params_.push_back({name, t});
    return t;
  };
  auto linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    Linear l;
    l.weight = normal_param(prefix + ".weight", {in, out});
    l.bias = const_param(prefix + ".bias", {out}, 0.0);
    return l;
  };
  auto norm = [&](const std::string& prefix) {
    LayerNorm n;
    n.gain = const_param(prefix + ".gain", {d}, 1.0);
    n.bias = const_param(prefix + ".bias", {d}, 0.0);
    n.eps = config_.ln_eps;
    return n;
  };
  auto attention = [&](const std::string& prefix) {
    Attention a;
    a.n_heads = config_.n_heads;
    a.q = linear(prefix + ".wq", d, d);
    a.k = linear(prefix + ".wk", d, d);
    a.v = linear(prefix + ".wv", d, d);
    a.o = linear(prefix + ".wo", d, d);
    return a;
  };
  auto ffn = [&](const std::string& prefix) {
    FeedForward f;
    f.fc1 = linear(prefix + ".fc1", d, ff);
    f.fc2 = linear(prefix + ".fc2", ff, d);
    return f;
  };
  auto encoder_stack = [&](const std::string& prefix, std::size_t layers) {
    std::vector<EncoderBlock> blocks;
    for (std::size_t i = 0; i < layers; ++i) {
      const auto p = prefix + ".block" + std::to_string(i);
      EncoderBlock b;
      b.ln1 = norm(p + ".ln1");
      b.attn = attention(p + ".attn");
      b.ln2 = norm(p + ".ln2");
      b.ffn = ffn(p + ".ffn");
      blocks.push_back(std::move(b));
    }
    return blocks;
  };

  const std::size_t patch_dim = config_.patch_size * config_.patch_size * config_.channels;
  patch_proj_ = linear("image.patch_proj", patch_dim, d);
  image_cls_ = normal_param("image.cls", {1, d});
  image_pos_ = normal_param("image.pos", {config_.num_patches() + 1, d});
  image_blocks_ = encoder_stack("image", config_.n_layers_image);
  image_ln_ = norm("image.ln_f");

  // Unit scale after the sqrt(d) multiplier, comparable to the sinusoids.
  token_embedding_ = normal_param("token_embedding", {config_.vocab_size, d},
                                  1.0 / std::sqrt(static_cast<double>(d)));
  question_blocks_ = encoder_stack("question", config_.n_layers_text);
  question_ln_ = norm("question.ln_f");

  for (std::size_t i = 0; i < config_.n_layers_text; ++i) {
    const auto p = "grounding.block" + std::to_string(i);
    GroundingBlock b;
    b.ln1 = norm(p + ".ln1");
    b.cross = attention(p + ".cross");
    b.ln2 = norm(p + ".ln2");
    b.ffn = ffn(p + ".ffn");
    grounding_blocks_.push_back(std::move(b));
  }
  grounding_ln_ = norm("grounding.ln_f");

  for (std::size_t i = 0; i < config_.n_layers_decoder; ++i) {
    const auto p = "decoder.block" + std::to_string(i);
    DecoderBlock b;
    b.ln1 = norm(p + ".ln1");
    b.attn = attention(p + ".attn");
    b.ln2 = norm(p + ".ln2");
    b.cross = attention(p + ".cross");
    b.ln3 = norm(p + ".ln3");
    b.ffn = ffn(p + ".ffn");
    decoder_blocks_.push_back(std::move(b));
  }
  decoder_ln_ = norm("decoder.ln_f");
  head_fc1_ = linear("head.fc1", d, d);
  head_fc2_ = linear("head.fc2", d, config_.vocab_size);
  positions_ = sinusoidal_positions(std::max(config_.max_q_len, config_.max_a_len + 2), d);
}

std::size_t DdvqaModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

Tensor& DdvqaModel::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter named '" + name + "'");
}

Tensor DdvqaModel::patchify(const Image& image) const {
  if (image.height != config_.image_height || image.width != config_.image_width ||
      image.channels != config_.channels)
    throw DimensionError("encode_image: image is " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + "x" + std::to_string(image.channels) +
                         ", model expects " + std::to_string(config_.image_height) + "x" +
                         std::to_string(config_.image_width) + "x" + std::to_string(config_.channels));
  const std::size_t p = config_.patch_size, gh = config_.grid_height(), gw = config_.grid_width();
  const std::size_t c = config_.channels, dim = p * p * c;
  std::vector<double> v(gh * gw * dim);
  std::size_t i = 0;
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch)
            v[i++] = image.at(static_cast<std::uint32_t>(py * p + dy),
                              static_cast<std::uint32_t>(px * p + dx), static_cast<std::uint32_t>(ch));
  return Tensor::from_data({gh * gw, dim}, std::move(v));
}

Tensor DdvqaModel::encode_image(const Image& image) const {
  const Tensor patches = patch_proj_(patchify(image));
  const std::vector<Tensor> parts{image_cls_, patches};
  Tensor x = add(concat(parts, 0), image_pos_);
  for (const auto& b : image_blocks_) {
    const Tensor h = b.ln1(x);
    x = add(x, b.attn(h, h, {}, false));
    x = add(x, b.ffn(b.ln2(x)));
  }
  return image_ln_(x);
}

Tensor DdvqaModel::image_cls_representation(const Image& image) const {
  return reshape(slice(encode_image(image), 0, 0, 1), {config_.d_model});
}

Tensor DdvqaModel::embed_text(std::span<const int> ids) const {
  const Tensor tokens = scale(embedding(token_embedding_, ids),
                              std::sqrt(static_cast<double>(config_.d_model)));
  if (ids.size() > positions_.rows())
    throw std::invalid_argument("text length " + std::to_string(ids.size()) + " exceeds the position table");
  return add(tokens, slice(positions_, 0, 0, ids.size()));
}

Tensor DdvqaModel::encode_question(std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("encode_question: empty sequence");
  if (ids.size() > config_.max_q_len)
    throw std::invalid_argument("encode_question: length " + std::to_string(ids.size()) +
                                " exceeds max_q_len " + std::to_string(config_.max_q_len));
  std::vector<std::uint8_t> valid(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) valid[i] = ids[i] != text::kPad;
  Tensor x = embed_text(ids);
  for (const auto& b : question_blocks_) {
    const Tensor h = b.ln1(x);
    x = add(x, b.attn(h, h, valid, false));
    x = add(x, b.ffn(b.ln2(x)));
  }
  return question_ln_(x);
}

Tensor DdvqaModel::ground_question(const Tensor& question, const Tensor& image_tokens,
                                   AttentionRecorder* recorder) const {
  if (question.cols() != config_.d_model || image_tokens.cols() != config_.d_model)
    throw DimensionError("ground_question: width mismatch " + shape_to_string(question.shape()) +
                         " vs " + shape_to_string(image_tokens.shape()));
  Tensor x = question;
  for (std::size_t i = 0; i < grounding_blocks_.size(); ++i) {
    const auto& b = grounding_blocks_[i];
    const bool record = recorder && i + 1 == grounding_blocks_.size();
    if (record) recorder->heads.clear();
    x = add(x, b.cross(b.ln1(x), image_tokens, {}, false, record ? &recorder->heads : nullptr));
    x = add(x, b.ffn(b.ln2(x)));
  }
  return grounding_ln_(x);
}

QuestionContext DdvqaModel::question_context(const Tensor& image_tokens,
                                             std::span<const int> question_ids,
                                             AttentionRecorder* recorder) const {
  QuestionContext ctx;
  ctx.grounded = ground_question(encode_question(question_ids), image_tokens, recorder);
  ctx.key_valid.resize(question_ids.size());
  for (std::size_t i = 0; i < question_ids.size(); ++i) ctx.key_valid[i] = question_ids[i] != text::kPad;
  return ctx;
}

QuestionContext DdvqaModel::question_context(const Image& image, std::span<const int> question_ids,
                                             AttentionRecorder* recorder) const {
  return question_context(encode_image(image), question_ids, recorder);
}

Tensor DdvqaModel::decoder_states(std::span<const int> ids, const QuestionContext& ctx,
                                  bool causal) const {
  if (ids.empty()) throw std::invalid_argument("decoder: empty sequence");
  if (ids.size() > config_.max_a_len + 2)
    throw std::invalid_argument("decoder: length " + std::to_string(ids.size()) +
                                " exceeds max_a_len + 2 = " + std::to_string(config_.max_a_len + 2));
  Tensor x = embed_text(ids);
  for (const auto& b : decoder_blocks_) {
    const Tensor h = b.ln1(x);
    x = add(x, b.attn(h, h, {}, causal));
    x = add(x, b.cross(b.ln2(x), ctx.grounded, ctx.key_valid, false));
    x = add(x, b.ffn(b.ln3(x)));
  }
  return decoder_ln_(x);
}

Tensor DdvqaModel::head(const Tensor& states) const { return head_fc2_(gelu(head_fc1_(states))); }

Tensor DdvqaModel::decode(std::span<const int> prefix, const QuestionContext& ctx) const {
  return head(decoder_states(prefix, ctx, true));
}

Tensor DdvqaModel::text_cls_representation(std::span<const int> answer_ids,
                                           const QuestionContext& ctx) const {
  return reshape(slice(decoder_states(answer_ids, ctx, false), 0, 0, 1), {config_.d_model});
}

// ---- persistence --------------------------------------------------------------------

namespace {

std::filesystem::path sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

void save_model(const std::filesystem::path& path, const DdvqaModel& model,
                const std::string& vocab_hash) {
  Container c;
  for (const auto& p : model.parameters()) {
    const auto d = p.tensor.data();
    c.tensors[p.name] = {p.tensor.shape(), DType::kF32, std::vector<double>(d.begin(), d.end())};
  }
  const json meta{{"config", model.config().to_json()}, {"vocab_hash", vocab_hash}};
  c.metadata = meta;
  write_container(path, c);
  std::ofstream out(sidecar(path), std::ios::trunc);
  if (!out) throw std::runtime_error("save_model: cannot write '" + sidecar(path).string() + "'");
  out << meta.dump(2) << "\n";
}

std::string model_vocab_hash(const std::filesystem::path& path) {
  std::ifstream in(sidecar(path));
  if (!in) throw std::runtime_error("load_model: missing sidecar '" + sidecar(path).string() + "'");
  return json::parse(in).at("vocab_hash").get<std::string>();
}

DdvqaModel load_model(const std::filesystem::path& path, const std::string& expected_vocab_hash) {
  std::ifstream in(sidecar(path));
  if (!in) throw std::runtime_error("load_model: missing sidecar '" + sidecar(path).string() + "'");
  const json meta = json::parse(in);
  const std::string hash = meta.at("vocab_hash").get<std::string>();
  if (!expected_vocab_hash.empty() && hash != expected_vocab_hash)
    throw std::runtime_error("vocabulary mismatch: checkpoint '" + path.string() + "' was trained with " +
                             hash + ", current vocabulary is " + expected_vocab_hash);
  const auto config = ModelConfig::from_json(meta.at("config"));
  Rng rng(0);
  DdvqaModel model(config, rng);
  const Container c = read_container(path);
  for (const auto& p : model.parameters()) {
    const auto it = c.tensors.find(p.name);
    if (it == c.tensors.end())
      throw std::runtime_error("load_model: '" + path.string() + "' lacks tensor '" + p.name + "'");
    if (it->second.shape != p.tensor.shape())
      throw DimensionError("load_model: tensor '" + p.name + "' has shape " +
                           shape_to_string(it->second.shape) + ", expected " +
                           shape_to_string(p.tensor.shape()));
    Tensor t = p.tensor;
    std::copy(it->second.values.begin(), it->second.values.end(), t.mutable_data().begin());
  }
  if (c.tensors.size() != model.parameters().size())
    throw std::runtime_error("load_model: '" + path.string() + "' has unexpected extra tensors");
  return model;
}

void copy_parameters(const DdvqaModel& from, DdvqaModel& to) {
  if (!(from.config() == to.config())) throw std::invalid_argument("copy_parameters: config mismatch");
  for (std::size_t i = 0; i < from.parameters().size(); ++i) {
    const auto src = from.parameters()[i].tensor.data();
    Tensor dst = to.parameters()[i].tensor;
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

}  // namespace ddvqa::model
