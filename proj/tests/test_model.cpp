#include <cmath>
#include <filesystem>

#include "ddvqa/model.hpp"
#include "ddvqa/tokenizer.hpp"
#include "doctest.h"
#include "oracles/model_ref.hpp"

using namespace ddvqa;
using namespace ddvqa::model;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers_text = 2;
  c.n_layers_image = 2;
  c.n_layers_decoder = 2;
  c.patch_size = 4;
  c.image_height = 16;
  c.image_width = 16;
  c.vocab_size = 24;
  c.max_q_len = 12;
  c.max_a_len = 10;
  return c;
}

Image noise_image(std::uint32_t h, std::uint32_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image img = Image::blank(h, w, 3);
  for (auto& p : img.pixels) p = static_cast<float>(uniform01(rng));
  return img;
}

double max_diff(const Tensor& t, const oracle::Mat& m) {
  double worst = 0.0;
  const std::size_t c = t.shape().back();
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) worst = std::max(worst, std::abs(t.data()[i * c + j] - m[i][j]));
  return worst;
}

double row_diff(const Tensor& a, const Tensor& b, std::size_t rows) {
  double worst = 0.0;
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < rows * c; ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

const std::vector<int> kQuestion{text::kCls, 7, 9, 11, 13, text::kSep};
const std::vector<int> kAnswer{text::kCls, 5, 8, 12, 6, text::kSep};

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.image_width = 18;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  CHECK(ModelConfig::from_json(c.to_json()) == c);
}

TEST_CASE("image encoder sequence lengths") {
  ModelConfig c = small_config();
  c.image_height = c.image_width = 64;
  c.patch_size = 8;
  Rng rng(1);
  DdvqaModel m(c, rng);
  NoGradGuard g;
  CHECK(m.encode_image(noise_image(64, 64, 2)).shape() == Shape{65, 16});
  CHECK_THROWS_AS(m.encode_image(noise_image(32, 64, 2)), DimensionError);

  const Tensor zero = m.encode_image(Image::blank(64, 64, 3));
  for (double v : zero.data()) CHECK(std::isfinite(v));

  ModelConfig big = c;
  big.image_height = big.image_width = 480;
  big.patch_size = 16;
  big.n_layers_image = 1;
  Rng rng2(1);
  DdvqaModel mb(big, rng2);
  CHECK(mb.encode_image(Image::blank(480, 480, 3, 0.5f)).shape() == Shape{901, 16});
}

TEST_CASE("image CLS representation is row 0") {
  Rng rng(3);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  const Image img = noise_image(16, 16, 4);
  const Tensor full = m.encode_image(img);
  const Tensor cls = m.image_cls_representation(img);
  CHECK(cls.shape() == Shape{16});
  for (std::size_t j = 0; j < 16; ++j) CHECK(cls.data()[j] == full.at(0, j));
  const Tensor again = m.image_cls_representation(noise_image(16, 16, 4));
  CHECK(std::equal(cls.data().begin(), cls.data().end(), again.data().begin()));
}

TEST_CASE("question encoder shapes and padding") {
  Rng rng(5);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  CHECK(m.encode_question(kQuestion).shape() == Shape{6, 16});
  CHECK_THROWS_AS(m.encode_question(std::vector<int>(13, 7)), std::invalid_argument);

  std::vector<int> padded = kQuestion;
  padded.insert(padded.end(), 4, text::kPad);
  const Tensor a = m.encode_question(kQuestion);
  const Tensor b = m.encode_question(padded);
  CHECK(row_diff(a, b, 6) < 1e-12);

  // Rewriting the PAD embedding changes only what PAD rows read.
  Tensor table = m.parameter("token_embedding");
  for (std::size_t j = 0; j < 16; ++j) table.mutable_data()[j] += 0.3 * static_cast<double>(j + 1);
  const Tensor c = m.encode_question(padded);
  CHECK(row_diff(b, c, 6) < 1e-12);
  CHECK(row_diff(b, c, 10) > 1e-6);
}

TEST_CASE("attention rows sum to one with no mass on padded keys") {
  Rng rng(6);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  std::vector<int> ids = kQuestion;
  ids.insert(ids.end(), 3, text::kPad);
  const Tensor x = m.encode_question(ids);
  std::vector<std::uint8_t> valid;
  for (int id : ids) valid.push_back(id != text::kPad);
  std::vector<Tensor> weights;
  m.question_blocks()[0].attn(x, x, valid, false, &weights);
  REQUIRE(weights.size() == 2);
  for (const auto& w : weights)
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < w.cols(); ++k) {
        if (!valid[k]) CHECK(w.at(r, k) == 0.0);
        s += w.at(r, k);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("grounding output is query shaped") {
  Rng rng(7);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  const Tensor img = m.encode_image(noise_image(16, 16, 8));
  const Tensor q = m.encode_question(kQuestion);
  CHECK(m.ground_question(q, img).shape() == q.shape());
  CHECK_THROWS_AS(m.ground_question(q, Tensor::zeros({17, 8})), DimensionError);
}

TEST_CASE("attention over identical key rows returns that row") {
  Rng rng(9);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  const auto& attn = m.grounding_blocks()[0].cross;
  const Tensor q = m.encode_question(kQuestion);
  const Tensor img = m.encode_image(noise_image(16, 16, 10));
  const Tensor row = slice(img, 0, 3, 4);
  std::vector<Tensor> copies(17, row);
  const Tensor kv = concat(copies, 0);
  const Tensor out = attn(q, kv, {}, false);
  const Tensor expect = attn.o(attn.v(row));
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < out.cols(); ++j) CHECK(std::abs(out.at(r, j) - expect.at(0, j)) < 1e-12);
}

TEST_CASE("zero value projection removes the image from grounding") {
  Rng rng(11);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto p = "grounding.block" + std::to_string(l) + ".cross.wv.";
    for (auto& v : m.parameter(p + "weight").mutable_data()) v = 0.0;
    for (auto& v : m.parameter(p + "bias").mutable_data()) v = 0.0;
  }
  const Tensor q = m.encode_question(kQuestion);
  const Tensor img1 = m.encode_image(noise_image(16, 16, 1));
  const Tensor img2 = m.encode_image(noise_image(16, 16, 2));
  const auto& cross = m.grounding_blocks()[0].cross;
  const Tensor contribution = cross(q, img1, {}, false);
  for (double v : contribution.data()) CHECK(v == 0.0);
  const Tensor a = m.ground_question(q, img1);
  const Tensor b = m.ground_question(q, img2);
  CHECK(row_diff(a, b, a.rows()) == 0.0);
}

TEST_CASE("decoder logits shape and causality") {
  Rng rng(13);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  const auto ctx = m.question_context(noise_image(16, 16, 14), kQuestion);
  const std::vector<int> bos{text::kBos};
  CHECK(m.decode(bos, ctx).shape() == Shape{1, 24});

  const std::vector<int> prefix{text::kCls, text::kBos, 5, 8, 12, 6};
  const Tensor base = m.decode(prefix, ctx);
  CHECK(base.shape() == Shape{6, 24});
  for (std::size_t j = 1; j < prefix.size(); ++j) {
    auto changed = prefix;
    changed[j] = 20;
    const Tensor other = m.decode(changed, ctx);
    CHECK(row_diff(base, other, j) == 0.0);
    CHECK(row_diff(base, other, j + 1) > 0.0);
  }
  CHECK_THROWS_AS(m.decode(std::vector<int>(13, 5), ctx), std::invalid_argument);
}

TEST_CASE("causal mask is lower triangular") {
  Rng rng(15);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  Tensor x = Tensor::from_data({4, 16}, std::vector<double>(64));
  for (std::size_t i = 0; i < 64; ++i) x.mutable_data()[i] = std::sin(0.37 * static_cast<double>(i));
  std::vector<Tensor> w;
  m.decoder_blocks()[0].attn(x, x, {}, true, &w);
  for (const auto& h : w)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) CHECK((h.at(r, c) > 0.0) == (c <= r));
}

TEST_CASE("earlier logits carry no gradient from later tokens") {
  Rng rng(17);
  DdvqaModel m(small_config(), rng);
  const auto ctx = m.question_context(noise_image(16, 16, 18), kQuestion);
  // Token 21 appears only at position 4.
  const std::vector<int> prefix{text::kCls, text::kBos, 5, 8, 21, 6};
  const Tensor logits = m.decode(prefix, ctx);
  sum(slice(logits, 0, 0, 4)).backward();
  const Tensor& table = m.parameter("token_embedding");
  REQUIRE(table.has_grad());
  for (std::size_t j = 0; j < 16; ++j) CHECK(table.grad()[21 * 16 + j] == 0.0);
  double other = 0.0;
  for (std::size_t j = 0; j < 16; ++j) other += std::abs(table.grad()[5 * 16 + j]);
  CHECK(other > 0.0);
}

TEST_CASE("text CLS representation") {
  Rng rng(19);
  DdvqaModel m(small_config(), rng);
  NoGradGuard g;
  const auto ctx = m.question_context(noise_image(16, 16, 20), kQuestion);
  const Tensor a = m.text_cls_representation(kAnswer, ctx);
  CHECK(a.shape() == Shape{16});
  const std::vector<int> other{text::kCls, 5, 9, 12, 6, text::kSep};
  const Tensor b = m.text_cls_representation(other, ctx);
  CHECK(row_diff(reshape(a, {1, 16}), reshape(b, {1, 16}), 1) > 1e-9);
  const Tensor a2 = m.text_cls_representation(kAnswer, ctx);
  CHECK(std::equal(a.data().begin(), a.data().end(), a2.data().begin()));
}

TEST_CASE("forward matches loop-level re-implementation") {
  ModelConfig c = small_config();
  Rng rng(21);
  DdvqaModel m(c, rng);
  // Move norms and biases off their init values so they are exercised.
  Rng jitter(22);
  for (const auto& p : m.parameters())
    if (p.name.find("bias") != std::string::npos || p.name.find("gain") != std::string::npos) {
      Tensor t = p.tensor;
      for (auto& v : t.mutable_data()) v += normal(jitter, 0.0, 0.1);
    }
  NoGradGuard g;
  const oracle::ModelRef ref{m};
  const Image img = noise_image(16, 16, 23);
  std::vector<int> q = kQuestion;
  q.push_back(text::kPad);

  const Tensor img_tokens = m.encode_image(img);
  const auto ref_img = ref.encode_image(img);
  CHECK(max_diff(img_tokens, ref_img) < 1e-9);

  const auto ref_q = ref.encode_question(q);
  CHECK(max_diff(m.encode_question(q), ref_q) < 1e-9);

  AttentionRecorder rec;
  const auto ctx = m.question_context(img_tokens, q, &rec);
  std::vector<oracle::Mat> ref_w;
  const auto ref_ground = ref.ground(ref_q, ref_img, &ref_w);
  CHECK(max_diff(ctx.grounded, ref_ground) < 1e-9);
  REQUIRE(rec.heads.size() == ref_w.size());
  for (std::size_t h = 0; h < ref_w.size(); ++h) CHECK(max_diff(rec.heads[h], ref_w[h]) < 1e-9);

  const auto ref_states = ref.decoder(kAnswer, ref_ground, q, false);
  const Tensor cls = m.text_cls_representation(kAnswer, ctx);
  CHECK(max_diff(reshape(cls, {1, 16}), {ref_states[0]}) < 1e-9);

  const std::vector<int> prefix{text::kCls, text::kBos, 5, 8, 12};
  const auto ref_logits = ref.logits(ref.decoder(prefix, ref_ground, q, true));
  CHECK(max_diff(m.decode(prefix, ctx), ref_logits) < 1e-9);
}

TEST_CASE("save and load round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "ddvqa_test_model";
  std::filesystem::create_directories(dir);
  Rng rng(25);
  DdvqaModel m(small_config(), rng);
  save_model(dir / "m.bin", m, "abc123");
  CHECK(model_vocab_hash(dir / "m.bin") == "abc123");
  const DdvqaModel back = load_model(dir / "m.bin", "abc123");
  CHECK(back.config() == m.config());
  REQUIRE(back.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    CHECK(back.parameters()[i].name == m.parameters()[i].name);
    const auto a = m.parameters()[i].tensor.data();
    const auto b = back.parameters()[i].tensor.data();
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == static_cast<double>(static_cast<float>(a[k])));
  }
  try {
    load_model(dir / "m.bin", "zzz999");
    FAIL("expected a vocabulary mismatch");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("abc123") != std::string::npos);
    CHECK(msg.find("zzz999") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
