#include "ddvqa/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ddvqa/checkpoint.hpp"
#include "ddvqa/synthetic.hpp"

namespace ddvqa::train {

using nlohmann::json;

// ---- configuration ----------------------------------------------------------------

Ablation Ablation::parse(std::string_view s) {
  if (s == "lm") return {false, false};
  if (s == "lm+t") return {true, false};
  if (s == "lm+i") return {false, true};
  if (s == "lm+t+i") return {true, true};
  throw std::invalid_argument("unknown ablation '" + std::string(s) + "' (lm|lm+t|lm+i|lm+t+i)");
}

std::string Ablation::name() const {
  std::string s = "lm";
  if (text_cl) s += "+t";
  if (image_cl) s += "+i";
  return s;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("TrainConfig: lr must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("TrainConfig: temperature must be > 0");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("TrainConfig: grad_clip must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
}

// ---- examples ---------------------------------------------------------------------

text::Vocabulary build_vocabulary(std::span<const data::QARecord> records) {
  std::vector<std::string> texts;
  for (const auto& r : records) {
    texts.push_back(r.question);
    texts.insert(texts.end(), r.answers.begin(), r.answers.end());
  }
  return text::Vocabulary::build(texts);
}

std::vector<Example> encode_examples(std::span<const data::QARecord> records,
                                     const text::Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Example e;
    e.image_id = r.image_id;
    e.question = text::encode(r.question, text::SequenceKind::kQuestion, vocab).ids;
    for (const auto& a : r.answers) e.answers.push_back(text::encode(a, text::SequenceKind::kAnswer, vocab).ids);
    out.push_back(std::move(e));
  }
  return out;
}

TeacherForcing teacher_forcing(std::span<const int> framed) {
  if (framed.size() < 2 || framed.front() != text::kCls || framed.back() != text::kSep)
    throw std::invalid_argument("teacher_forcing: answer must be framed as [CLS] ... [SEP]");
  TeacherForcing tf;
  tf.inputs = {text::kCls, text::kBos};
  tf.targets = {kIgnoreIndex};
  for (std::size_t i = 1; i + 1 < framed.size(); ++i) {
    tf.inputs.push_back(framed[i]);
    tf.targets.push_back(framed[i]);
  }
  tf.targets.push_back(text::kSep);
  return tf;
}

// ---- losses -------------------------------------------------------------------------

namespace {

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return terms.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Tensor lm_loss(const DdvqaModel& model, const QuestionContext& ctx,
               std::span<const std::vector<int>> answers) {
  if (answers.empty()) throw std::invalid_argument("lm_loss: no answers");
  std::vector<Tensor> per_answer;
  per_answer.reserve(answers.size());
  for (const auto& a : answers) {
    const auto tf = teacher_forcing(a);
    per_answer.push_back(cross_entropy(model.decode(tf.inputs, ctx), tf.targets, kIgnoreIndex));
  }
  return mean_of(per_answer);
}

Tensor info_nce(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: temperature must be > 0");
  if (anchor.numel() != positive.numel() || anchor.numel() != negative.numel())
    throw DimensionError("info_nce: vector sizes differ: " + shape_to_string(anchor.shape()) + ", " +
                         shape_to_string(positive.shape()) + ", " + shape_to_string(negative.shape()));
  const Tensor a = l2_normalize(anchor);
  const Tensor s_ap = reshape(dot(a, l2_normalize(positive)), {1, 1});
  const Tensor s_an = reshape(dot(a, l2_normalize(negative)), {1, 1});
  const std::vector<Tensor> parts{s_ap, s_an};
  const std::vector<int> target{0};
  return cross_entropy(scale(concat(parts, 1), 1.0 / tau), target);
}

Tensor text_contrastive_loss(const DdvqaModel& model, std::span<const TextTripletInput> batch,
                             double tau) {
  if (batch.empty()) return Tensor::scalar(0.0);
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const auto& t : batch) {
    terms.push_back(info_nce(model.text_cls_representation(t.anchor, *t.ctx),
                             model.text_cls_representation(t.positive, *t.ctx),
                             model.text_cls_representation(t.negative, *t.ctx), tau));
  }
  return mean_of(terms);
}

const Tensor& ImageCache::tokens(const Image& image) {
  auto it = cache_.find(&image);
  if (it == cache_.end()) it = cache_.emplace(&image, model_.encode_image(image)).first;
  return it->second;
}

Tensor ImageCache::cls(const Image& image) {
  return reshape(slice(tokens(image), 0, 0, 1), {model_.config().d_model});
}

Tensor image_contrastive_loss(const DdvqaModel& model, std::span<const ImageTripletInput> batch,
                              double tau, ImageCache* cache) {
  if (batch.empty()) return Tensor::scalar(0.0);
  ImageCache local(model);
  ImageCache& c = cache ? *cache : local;
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const auto& t : batch)
    terms.push_back(info_nce(c.cls(*t.anchor), c.cls(*t.positive), c.cls(*t.negative), tau));
  return mean_of(terms);
}

// ---- optimizer ------------------------------------------------------------------------

AdamW::AdamW(std::vector<Parameter> params, const TrainConfig& config)
    : params_(std::move(params)),
      lr_(config.lr),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps),
      wd_(config.weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double shrink = 1.0 - lr_ * wd_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    const auto g = t.grad();
    auto p = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      p[j] *= shrink;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      p[j] -= lr_ * update;
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

double clip_grad_norm(std::span<const Parameter> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= s;
    }
  }
  return norm;
}

// ---- batch loss -----------------------------------------------------------------------

namespace {

const Image& image_of(const ImageStore& images, const std::string& id) {
  const auto it = images.find(id);
  if (it == images.end()) throw std::runtime_error("no image for image_id '" + id + "'");
  return it->second;
}

}  // namespace

BatchLoss batch_loss(const DdvqaModel& model, std::span<const Example> examples,
                     const ImageStore& images, const Batch& batch, const TrainConfig& config) {
  if (batch.records.empty()) throw std::invalid_argument("batch_loss: empty batch");
  ImageCache cache(model);
  std::map<std::size_t, QuestionContext> contexts;
  auto context_of = [&](std::size_t idx) -> const QuestionContext& {
    auto it = contexts.find(idx);
    if (it == contexts.end()) {
      const auto& ex = examples[idx];
      it = contexts.emplace(idx, model.question_context(cache.tokens(image_of(images, ex.image_id)), ex.question))
               .first;
    }
    return it->second;
  };

  BatchLoss out;
  std::vector<Tensor> lm_terms;
  for (auto idx : batch.records) lm_terms.push_back(lm_loss(model, context_of(idx), examples[idx].answers));
  Tensor total = mean_of(lm_terms);
  out.breakdown.lm = total.item();

  if (config.ablation.text_cl && !batch.text_triplets.empty()) {
    std::vector<TextTripletInput> inputs;
    for (const auto& t : batch.text_triplets) {
      TextTripletInput in;
      in.ctx = &context_of(t.anchor.record);
      in.anchor = examples[t.anchor.record].answers[t.anchor.answer];
      in.positive = examples[t.positive.record].answers[t.positive.answer];
      in.negative = examples[t.negative.record].answers[t.negative.answer];
      inputs.push_back(in);
    }
    const Tensor lt = text_contrastive_loss(model, inputs, config.temperature);
    out.breakdown.text_contrastive = lt.item();
    out.breakdown.n_text_triplets = inputs.size();
    total = add(total, lt);
  }
  if (config.ablation.image_cl && !batch.image_triplets.empty()) {
    std::vector<ImageTripletInput> inputs;
    for (const auto& t : batch.image_triplets)
      inputs.push_back({&image_of(images, examples[t.anchor.record].image_id),
                        &image_of(images, examples[t.positive.record].image_id),
                        &image_of(images, examples[t.negative.record].image_id)});
    const Tensor li = image_contrastive_loss(model, inputs, config.temperature, &cache);
    out.breakdown.image_contrastive = li.item();
    out.breakdown.n_image_triplets = inputs.size();
    total = add(total, li);
  }
  out.breakdown.total = total.item();
  out.total = total;
  return out;
}

LossBreakdown train_step(const DdvqaModel& model, AdamW& optimizer, std::span<const Example> examples,
                         const ImageStore& images, const Batch& batch, const TrainConfig& config) {
  auto loss = batch_loss(model, examples, images, batch, config);
  const auto& b = loss.breakdown;
  if (!std::isfinite(b.total)) {
    std::ostringstream os;
    os << "non-finite loss: lm=" << b.lm << " text_cl=" << b.text_contrastive
       << " image_cl=" << b.image_contrastive << " total=" << b.total;
    throw NonFiniteLoss(os.str(), b);
  }
  optimizer.zero_grad();
  loss.total.backward();
  clip_grad_norm(optimizer.params(), config.grad_clip);
  optimizer.step();
  optimizer.zero_grad();
  return loss.breakdown;
}

double evaluate_lm(const DdvqaModel& model, std::span<const Example> examples, const ImageStore& images,
                   std::size_t limit) {
  const std::size_t n = limit == 0 ? examples.size() : std::min(limit, examples.size());
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  NoGradGuard no_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ctx = model.question_context(image_of(images, examples[i].image_id), examples[i].question);
    acc += lm_loss(model, ctx, examples[i].answers).item();
  }
  return acc / static_cast<double>(n);
}

// ---- curve -----------------------------------------------------------------------------

std::string curve_header() { return "epoch,lm,text_cl,image_cl,total,val_lm"; }

std::string curve_line(const CurveRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch, r.lm, r.text_cl, r.image_cl,
                r.total, r.val_lm);
  return buf;
}

// ---- fit ---------------------------------------------------------------------------------

namespace {

json curve_to_json(const std::vector<CurveRow>& curve) {
  json rows = json::array();
  for (const auto& r : curve) rows.push_back({r.epoch, r.lm, r.text_cl, r.image_cl, r.total, r.val_lm});
  return rows;
}

std::vector<CurveRow> curve_from_json(const json& rows) {
  std::vector<CurveRow> out;
  for (const auto& r : rows)
    out.push_back({r[0].get<std::size_t>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                   r[4].get<double>(), r[5].is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                      : r[5].get<double>()});
  return out;
}

struct LoopState {
  std::size_t epoch = 0;
  Rng shuffle;
  Rng mining;
  std::vector<CurveRow> curve;
  double best_val = std::numeric_limits<double>::infinity();
};

void save_train_state(const std::filesystem::path& path, const DdvqaModel& model, AdamW& opt,
                      const LoopState& st) {
  Container c;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i];
    const auto d = p.tensor.data();
    c.tensors["param/" + p.name] = {p.tensor.shape(), DType::kF64, {d.begin(), d.end()}};
    c.tensors["adam_m/" + p.name] = {p.tensor.shape(), DType::kF64, opt.first_moments()[i]};
    c.tensors["adam_v/" + p.name] = {p.tensor.shape(), DType::kF64, opt.second_moments()[i]};
  }
  c.metadata = {{"epoch", st.epoch},
                {"adam_steps", opt.steps()},
                {"shuffle_rng", rng_state(st.shuffle)},
                {"mining_rng", rng_state(st.mining)},
                {"best_val", std::isfinite(st.best_val) ? json(st.best_val) : json(nullptr)},
                {"curve", curve_to_json(st.curve)},
                {"model_config", model.config().to_json()}};
  write_container(path, c);
}

void load_train_state(const std::filesystem::path& path, DdvqaModel& model, AdamW& opt, LoopState& st) {
  const Container c = read_container(path);
  if (!(model::ModelConfig::from_json(c.metadata.at("model_config")) == model.config()))
    throw std::runtime_error("resume: '" + path.string() + "' was written for a different model config");
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i];
    auto fetch = [&](const std::string& key) -> const std::vector<double>& {
      const auto it = c.tensors.find(key);
      if (it == c.tensors.end()) throw std::runtime_error("resume: '" + path.string() + "' lacks " + key);
      if (it->second.values.size() != p.tensor.numel())
        throw DimensionError("resume: " + key + " has the wrong size");
      return it->second.values;
    };
    const auto& values = fetch("param/" + p.name);
    Tensor t = p.tensor;
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
    opt.first_moments()[i] = fetch("adam_m/" + p.name);
    opt.second_moments()[i] = fetch("adam_v/" + p.name);
  }
  opt.set_steps(c.metadata.at("adam_steps").get<std::size_t>());
  st.epoch = c.metadata.at("epoch").get<std::size_t>();
  st.shuffle = rng_from_state(c.metadata.at("shuffle_rng").get<std::string>());
  st.mining = rng_from_state(c.metadata.at("mining_rng").get<std::string>());
  const auto& bv = c.metadata.at("best_val");
  st.best_val = bv.is_null() ? std::numeric_limits<double>::infinity() : bv.get<double>();
  st.curve = curve_from_json(c.metadata.at("curve"));
}

void write_curve(const std::filesystem::path& path, const std::vector<CurveRow>& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write loss curve '" + path.string() + "'");
  out << curve_header() << "\n";
  for (const auto& r : curve) out << curve_line(r) << "\n";
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace

FitResult fit(DdvqaModel& model, const FitInputs& inputs, const TrainConfig& config,
              const std::filesystem::path& out_dir, Rng& root,
              const std::optional<std::filesystem::path>& resume) {
  config.validate();
  if (!inputs.images || !inputs.vocab) throw std::invalid_argument("fit: images and vocabulary required");
  if (inputs.train.empty()) throw std::invalid_argument("fit: empty training split");
  std::filesystem::create_directories(out_dir);

  const auto train = encode_examples(inputs.train, *inputs.vocab);
  const auto val = encode_examples(inputs.val, *inputs.vocab);
  const std::string vocab_hash = inputs.vocab->hash();

  AdamW opt(model.parameters(), config);
  LoopState st{0, fork(root), fork(root), {}, std::numeric_limits<double>::infinity()};
  if (resume) load_train_state(*resume, model, opt, st);

  const bool mine = config.ablation.text_cl || config.ablation.image_cl || config.always_mine;
  std::optional<data::TripletMiner> miner;
  if (mine) miner.emplace(inputs.train);

  FitResult result;
  result.curve_csv = out_dir / "loss_curve.csv";
  result.final_checkpoint = out_dir / "final.bin";
  result.train_state = out_dir / "train_state.bin";
  if (std::filesystem::exists(out_dir / "best.bin")) result.best_checkpoint = out_dir / "best.bin";

  std::vector<std::size_t> order(train.size());
  for (std::size_t e = st.epoch + 1; e <= config.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(st.shuffle, order);

    CurveRow row;
    row.epoch = e;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      Batch batch;
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.records.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
      if (miner) {
        for (auto idx : batch.records) {
          if (auto t = miner->mine_text(idx, st.mining)) batch.text_triplets.push_back(*t);
          if (auto t = miner->mine_image(idx, st.mining)) batch.image_triplets.push_back(*t);
        }
      }
      const auto b = train_step(model, opt, train, *inputs.images, batch, config);
      row.lm += b.lm;
      row.text_cl += b.text_contrastive;
      row.image_cl += b.image_contrastive;
      row.total += b.total;
      ++n_batches;
    }
    const double nb = static_cast<double>(n_batches);
    row.lm /= nb;
    row.text_cl /= nb;
    row.image_cl /= nb;
    row.total /= nb;
    row.val_lm = evaluate_lm(model, val, *inputs.images, config.val_limit);
    st.curve.push_back(row);
    st.epoch = e;

    if (std::isfinite(row.val_lm) && row.val_lm < st.best_val) {
      st.best_val = row.val_lm;
      save_model(out_dir / "best.bin", model, vocab_hash);
      result.best_checkpoint = out_dir / "best.bin";
    }
    if (config.checkpoint_every > 0 && e % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04zu.bin", e);
      save_model(out_dir / name, model, vocab_hash);
      save_train_state(result.train_state, model, opt, st);
    }
    write_curve(result.curve_csv, st.curve);
  }

  write_curve(result.curve_csv, st.curve);
  save_model(result.final_checkpoint, model, vocab_hash);
  save_train_state(result.train_state, model, opt, st);
  result.curve = st.curve;
  return result;
}

// ---- overfit recipe ----------------------------------------------------------------

OverfitSuite overfit_suite() {
  data::SyntheticConfig sc;
  sc.n_images = 8;
  sc.image_size = 32;
  const auto corpus = data::generate_synthetic_corpus(sc, 1);
  OverfitSuite suite;
  std::map<std::string, std::size_t> index, seen;
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    suite.images.emplace(corpus.images[i].image_id, corpus.images[i].pixels);
    index[corpus.images[i].image_id] = i;
  }
  for (const auto& r : corpus.records) {
    const std::size_t k = seen[r.image_id]++;
    if (suite.records.size() < 8 && k == index.at(r.image_id) % 3) {
      auto c = r;
      c.answers.resize(1);
      c.split = data::Split::kTrain;
      suite.records.push_back(std::move(c));
    }
  }
  if (suite.records.size() != 8) throw std::logic_error("overfit_suite: expected 8 records");
  return suite;
}

model::ModelConfig overfit_model_config(std::size_t vocab_size) {
  model::ModelConfig mc;
  mc.d_model = 64;
  mc.image_height = mc.image_width = 32;
  mc.patch_size = 8;
  mc.vocab_size = vocab_size;
  return mc;
}

TrainConfig overfit_train_config() {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.weight_decay = 0.0;
  tc.batch_size = 2;
  tc.epochs = 200;
  tc.seed = 0;
  tc.ablation = Ablation::parse("lm+t+i");
  return tc;
}

}  // namespace ddvqa::train
