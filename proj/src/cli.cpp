#include "ddvqa/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "ddvqa/dataset.hpp"
#include "ddvqa/inference.hpp"
#include "ddvqa/metrics.hpp"
#include "ddvqa/synthetic.hpp"

namespace ddvqa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Copies j[key] into `field` when present and records the key as known.
template <typename T>
void take(const json& j, const char* key, T& field, std::set<std::string>& known) {
  known.insert(key);
  if (j.contains(key)) field = j.at(key).get<T>();
}

void take_path(const json& j, const char* key, fs::path& field, std::set<std::string>& known) {
  known.insert(key);
  if (j.contains(key)) field = j.at(key).get<std::string>();
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + where + k + "'");
}

json model_to_json(const model::ModelConfig& m) { return m.to_json(); }

void merge_model(const json& j, model::ModelConfig& m) {
  std::set<std::string> known;
  take(j, "d_model", m.d_model, known);
  take(j, "n_heads", m.n_heads, known);
  take(j, "n_layers_text", m.n_layers_text, known);
  take(j, "n_layers_image", m.n_layers_image, known);
  take(j, "n_layers_decoder", m.n_layers_decoder, known);
  take(j, "patch_size", m.patch_size, known);
  take(j, "image_height", m.image_height, known);
  take(j, "image_width", m.image_width, known);
  take(j, "channels", m.channels, known);
  take(j, "vocab_size", m.vocab_size, known);
  take(j, "max_q_len", m.max_q_len, known);
  take(j, "max_a_len", m.max_a_len, known);
  take(j, "ffn_mult", m.ffn_mult, known);
  take(j, "ln_eps", m.ln_eps, known);
  reject_unknown(j, known, "model.");
}

json train_to_json(const train::TrainConfig& t) {
  return {{"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"temperature", t.temperature},
          {"grad_clip", t.grad_clip},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"ablation", t.ablation.name()},
          {"always_mine", t.always_mine},
          {"checkpoint_every", t.checkpoint_every},
          {"val_limit", t.val_limit}};
}

void merge_train(const json& j, train::TrainConfig& t) {
  std::set<std::string> known;
  take(j, "lr", t.lr, known);
  take(j, "weight_decay", t.weight_decay, known);
  take(j, "batch_size", t.batch_size, known);
  take(j, "epochs", t.epochs, known);
  take(j, "temperature", t.temperature, known);
  take(j, "grad_clip", t.grad_clip, known);
  take(j, "beta1", t.beta1, known);
  take(j, "beta2", t.beta2, known);
  take(j, "adam_eps", t.adam_eps, known);
  std::string ablation = t.ablation.name();
  take(j, "ablation", ablation, known);
  t.ablation = train::Ablation::parse(ablation);
  take(j, "always_mine", t.always_mine, known);
  take(j, "checkpoint_every", t.checkpoint_every, known);
  take(j, "val_limit", t.val_limit, known);
  reject_unknown(j, known, "train.");
}

json fusion_to_json(const fusion::BenchmarkConfig& f) {
  return {{"seeds", f.seeds},
          {"n_train", f.n_train},
          {"n_test", f.n_test},
          {"p_fake", f.p_fake},
          {"detector",
           {{"image_size", f.detector.image_size},
            {"kernel", f.detector.kernel},
            {"channels", f.detector.channels},
            {"hidden", f.detector.hidden}}},
          {"lr", f.train.lr},
          {"weight_decay", f.train.weight_decay},
          {"epochs", f.train.epochs},
          {"batch_size", f.train.batch_size},
          {"freeze_projection_zero", f.train.freeze_projection_zero}};
}

void merge_fusion(const json& j, fusion::BenchmarkConfig& f) {
  std::set<std::string> known;
  take(j, "seeds", f.seeds, known);
  take(j, "n_train", f.n_train, known);
  take(j, "n_test", f.n_test, known);
  take(j, "p_fake", f.p_fake, known);
  known.insert("detector");
  if (j.contains("detector")) {
    const auto& d = j.at("detector");
    std::set<std::string> dk;
    take(d, "image_size", f.detector.image_size, dk);
    take(d, "kernel", f.detector.kernel, dk);
    take(d, "channels", f.detector.channels, dk);
    take(d, "hidden", f.detector.hidden, dk);
    reject_unknown(d, dk, "fusion.detector.");
  }
  take(j, "lr", f.train.lr, known);
  take(j, "weight_decay", f.train.weight_decay, known);
  take(j, "epochs", f.train.epochs, known);
  take(j, "batch_size", f.train.batch_size, known);
  take(j, "freeze_projection_zero", f.train.freeze_projection_zero, known);
  reject_unknown(j, known, "fusion.");
}

fs::path require_out(const RunConfig& c) {
  if (c.out.empty()) throw UsageError("--out is required");
  fs::create_directories(c.out);
  return c.out;
}

fs::path require_path(const fs::path& p, const char* flag) {
  if (p.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::exists(p)) throw std::runtime_error(p.string() + " does not exist");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void log_line(const RunConfig& c, const std::string& msg) {
  if (c.out.empty()) return;
  fs::create_directories(c.out);
  std::ofstream log(c.out / "run.log", std::ios::app);
  log << timestamp() << ' ' << msg << '\n';
}

fs::path image_path(const fs::path& data_dir, const std::string& image_id) {
  return data_dir / "images" / (image_id + ".img");
}

train::ImageStore load_images(const fs::path& data_dir, std::span<const data::QARecord> records) {
  train::ImageStore store;
  for (const auto& r : records)
    if (!store.count(r.image_id)) store.emplace(r.image_id, read_image(image_path(data_dir, r.image_id)));
  return store;
}

std::vector<data::QARecord> load_dataset(const fs::path& data_dir) {
  const fs::path file = data_dir / "dataset.jsonl";
  if (!fs::exists(file)) throw std::runtime_error("no dataset at " + file.string() + " (run build-dataset first)");
  return data::read_dataset(file);
}

struct Loaded {
  std::vector<data::QARecord> records;
  train::ImageStore images;
};

// Records and images for train/generate: the overfit suite or a dataset dir.
Loaded load_inputs(const RunConfig& c) {
  if (c.overfit && c.data.empty()) {
    auto suite = train::overfit_suite();
    return {std::move(suite.records), std::move(suite.images)};
  }
  if (c.data.empty()) throw UsageError("--data is required");
  Loaded l;
  l.records = load_dataset(c.data);
  l.images = load_images(c.data, l.records);
  return l;
}

void write_drops(const fs::path& path, std::span<const data::DropEntry> drops) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& d : drops)
    out << json{{"image_id", d.image_id}, {"component", data::to_string(d.component)}, {"reason", data::to_string(d.reason)}}
               .dump()
        << '\n';
}

}  // namespace

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"out", out.string()},
          {"data", data.string()},
          {"raw", raw.string()},
          {"checkpoint", checkpoint.string()},
          {"generations", generations.string()},
          {"eval_report", eval_report.string()},
          {"fusion_summary", fusion_summary.string()},
          {"synthetic", synthetic},
          {"n", n},
          {"image_size", image_size},
          {"test_percent", test_percent},
          {"overfit", overfit},
          {"generate_split", generate_split},
          {"model", model_to_json(model)},
          {"train", train_to_json(train)},
          {"fusion", fusion_to_json(fusion)}};
}

void RunConfig::merge_json(const json& j) {
  std::set<std::string> known;
  take(j, "seed", seed, known);
  take_path(j, "out", out, known);
  take_path(j, "data", data, known);
  take_path(j, "raw", raw, known);
  take_path(j, "checkpoint", checkpoint, known);
  take_path(j, "generations", generations, known);
  take_path(j, "eval_report", eval_report, known);
  take_path(j, "fusion_summary", fusion_summary, known);
  take(j, "synthetic", synthetic, known);
  take(j, "n", n, known);
  take(j, "image_size", image_size, known);
  take(j, "test_percent", test_percent, known);
  take(j, "overfit", overfit, known);
  take(j, "generate_split", generate_split, known);
  known.insert("model");
  known.insert("train");
  known.insert("fusion");
  if (j.contains("model")) merge_model(j.at("model"), model);
  if (j.contains("train")) merge_train(j.at("train"), train);
  if (j.contains("fusion")) merge_fusion(j.at("fusion"), fusion);
  reject_unknown(j, known, "");
  train.seed = seed;
}

fs::path default_out_root() {
  if (const char* env = std::getenv("DDVQA_OUT_ROOT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

void write_resolved_config(const RunConfig& config) {
  write_text(require_out(config) / "resolved_config.json", config.to_json().dump(2) + "\n");
}

void cmd_build_dataset(const RunConfig& c) {
  const fs::path out = require_out(c);
  std::vector<data::QARecord> records;
  std::vector<data::DropEntry> drops;
  fs::create_directories(out / "images");
  if (c.overfit) {
    auto suite = train::overfit_suite();
    records = std::move(suite.records);
    for (const auto& [id, img] : suite.images) write_image(image_path(out, id), img);
  } else if (c.synthetic) {
    data::SyntheticConfig sc;
    sc.n_images = c.n;
    sc.image_size = c.image_size;
    sc.test_percent = c.test_percent;
    auto corpus = data::generate_synthetic_corpus(sc, c.seed);
    records = std::move(corpus.records);
    drops = std::move(corpus.drops);
    for (const auto& img : corpus.images) write_image(image_path(out, img.image_id), img.pixels);
  } else {
    const auto raw = data::read_raw_annotations(require_path(c.raw, "--raw (or --synthetic)"));
    Rng rng(c.seed);
    auto built = data::build_dataset(raw, rng, c.test_percent);
    records = std::move(built.records);
    drops = std::move(built.drops);
  }
  data::write_dataset(out / "dataset.jsonl", records);
  write_drops(out / "drops.jsonl", drops);
  write_text(out / "stats.json", data::stats_to_json(data::corpus_stats(records)) + "\n");
  write_resolved_config(c);
}

train::FitResult cmd_train(const RunConfig& c) {
  const fs::path out = require_out(c);
  auto in = load_inputs(c);
  std::vector<data::QARecord> train_set, val_set;
  for (const auto& r : in.records) (r.split == data::Split::kTest ? val_set : train_set).push_back(r);
  if (c.overfit) val_set = train_set;
  if (train_set.empty()) throw std::runtime_error("dataset has no training records");

  const auto vocab = train::build_vocabulary(in.records);
  vocab.save(out / "vocab.json");
  RunConfig resolved = c;
  resolved.model.vocab_size = vocab.size();
  resolved.train.seed = c.seed;
  write_resolved_config(resolved);

  Rng root(c.seed);
  model::DdvqaModel m(resolved.model, root);
  train::FitInputs fi{train_set, val_set, &in.images, &vocab};
  return train::fit(m, fi, resolved.train, out, root);
}

void cmd_generate(const RunConfig& c) {
  const fs::path out = require_out(c);
  const fs::path ckpt = require_path(c.checkpoint, "--checkpoint");
  const fs::path vocab_path = ckpt.parent_path() / "vocab.json";
  if (!fs::exists(vocab_path)) throw std::runtime_error("no vocabulary next to the checkpoint: " + vocab_path.string());
  const auto vocab = text::Vocabulary::load(vocab_path);
  const auto m = model::load_model(ckpt, vocab.hash());
  auto in = load_inputs(c);
  if (c.generate_split != "train" && c.generate_split != "test" && c.generate_split != "all")
    throw UsageError("--split must be train, test or all");

  std::vector<infer::GenerationRecord> gens;
  for (const auto& r : in.records) {
    if (c.generate_split != "all" && data::to_string(r.split) != c.generate_split) continue;
    const auto g = infer::generate(m, vocab, in.images.at(r.image_id), r.question);
    infer::GenerationRecord rec;
    rec.image_id = r.image_id;
    rec.question = r.question;
    rec.generated = g.text;
    rec.verdict = g.verdict;
    rec.gold_verdict = r.verdict;
    rec.gold_answers = r.answers;
    gens.push_back(std::move(rec));
  }
  infer::write_generations(out / "generations.jsonl", gens);
  write_resolved_config(c);
}

metrics::EvalReport cmd_eval(const RunConfig& c) {
  const fs::path out = require_out(c);
  const auto gens = infer::read_generations(require_path(c.generations, "--generations"));
  if (gens.empty()) throw std::runtime_error("no generation records in " + c.generations.string());
  const auto report = metrics::evaluate(gens);
  write_text(out / "report.json", metrics::report_to_json(report).dump(2) + "\n");
  write_resolved_config(c);
  return report;
}

std::vector<fusion::BenchmarkRow> cmd_fuse(const RunConfig& c) {
  const fs::path out = require_out(c);
  const auto m = model::load_model(require_path(c.checkpoint, "--checkpoint"));
  // The detector sees the same images as the checkpoint.
  RunConfig resolved = c;
  resolved.fusion.detector.image_size = m.config().image_height;
  const auto rows = fusion::benchmark(m, resolved.fusion);
  fusion::write_benchmark_csv(out / "fusion.csv", rows);
  write_text(out / "fusion_summary.json", fusion::benchmark_summary(rows).dump(2) + "\n");
  write_resolved_config(resolved);
  return rows;
}

void cmd_report(const RunConfig& c) {
  const fs::path out = require_out(c);
  if (c.eval_report.empty() && c.fusion_summary.empty())
    throw UsageError("report needs --eval-report and/or --fusion-summary");
  std::string md = "# DD-VQA run report\n";
  char buf[256];
  if (!c.eval_report.empty()) {
    std::ifstream in(require_path(c.eval_report, "--eval-report"));
    const auto j = json::parse(in);
    md += "\n## Detection and answer quality\n\n";
    md += "| question | n | acc | precision | recall | f1 | bleu4 | rouge_l | meteor_lite | cider |\n";
    md += "|---|---|---|---|---|---|---|---|---|---|\n";
    auto row = [&](const std::string& name, const json& n, const json& d, const json& t) {
      std::snprintf(buf, sizeof buf, "| %s | %zu | %.4f | %.4f | %.4f | %.4f | %.4f | %.4f | %.4f | %.4f |\n",
                    name.c_str(), n.get<std::size_t>(), d.at("acc").get<double>(), d.at("precision").get<double>(),
                    d.at("recall").get<double>(), d.at("f1").get<double>(), t.at("bleu4").get<double>(),
                    t.at("rouge_l").get<double>(), t.at("meteor_lite").get<double>(), t.at("cider").get<double>());
      md += buf;
    };
    row("all", j.at("n"), j.at("detection"), j.at("text"));
    for (const auto& [type, v] : j.at("by_question_type").items()) row(type, v.at("n"), v.at("detection"), v.at("text"));
  }
  if (!c.fusion_summary.empty()) {
    std::ifstream in(require_path(c.fusion_summary, "--fusion-summary"));
    const auto j = json::parse(in);
    md += "\n## Detector enhancement\n\n| variant | corpus | seeds | acc | auc | eer |\n|---|---|---|---|---|---|\n";
    for (const auto& r : j) {
      auto ms = [&](const char* k) {
        std::snprintf(buf, sizeof buf, "%.4f ± %.4f", r.at(k).at("mean").get<double>(), r.at(k).at("sd").get<double>());
        return std::string(buf);
      };
      md += "| " + r.at("variant").get<std::string>() + " | " + r.at("corpus").get<std::string>() + " | " +
            std::to_string(r.at("n_seeds").get<std::size_t>()) + " | " + ms("acc") + " | " + ms("auc") + " | " +
            ms("eer") + " |\n";
    }
  }
  write_text(out / "report.md", md);
  write_resolved_config(c);
}

int run(int argc, char** argv) {
  CLI::App app{"Deepfake detection VQA: dataset, training, generation, evaluation and detector fusion"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out, data_dir, raw, checkpoint, generations, eval_report, fusion_summary, ablation, split;
  std::uint64_t seed = 0;
  std::size_t n = 0, epochs = 0;
  bool synthetic = false, freeze = false, overfit = false;
  app.add_option("--config", config_path, "JSON run configuration");
  auto* o_seed = app.add_option("--seed", seed, "seed of the run generator");
  app.add_option("--out", out, "run directory");
  app.add_option("--data", data_dir, "dataset directory from build-dataset");
  app.add_option("--raw", raw, "raw annotation JSONL for build-dataset");
  app.add_option("--checkpoint", checkpoint, "model file for generate / fuse");
  app.add_option("--generations", generations, "generation JSONL for eval");
  app.add_option("--eval-report", eval_report, "report.json for report");
  app.add_option("--fusion-summary", fusion_summary, "fusion_summary.json for report");
  app.add_option("--ablation", ablation, "lm | lm+t | lm+i | lm+t+i")->check(CLI::IsMember({"lm", "lm+t", "lm+i", "lm+t+i"}));
  app.add_option("--split", split, "generate on train, test or all records");
  auto* f_syn = app.add_flag("--synthetic", synthetic, "build a synthetic corpus");
  auto* o_n = app.add_option("--n", n, "synthetic image count");
  auto* o_epochs = app.add_option("--epochs", epochs, "training epochs");
  auto* f_freeze = app.add_flag("--freeze-projection-zero", freeze, "keep the fusion projection at zero");
  auto* f_overfit = app.add_flag("--overfit", overfit, "use the 8-pair overfit suite and its recipe");

  auto* build = app.add_subcommand("build-dataset", "emit dataset JSONL, images, drop log and statistics");
  auto* trn = app.add_subcommand("train", "fit a model on a built dataset");
  auto* gen = app.add_subcommand("generate", "greedy answers for a dataset split");
  auto* ev = app.add_subcommand("eval", "score a generation file");
  auto* fuse = app.add_subcommand("fuse", "baseline vs enhanced detector benchmark");
  auto* rep = app.add_subcommand("report", "markdown tables from eval and fusion outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig cfg;
  std::string command = app.get_subcommands().front()->get_name();
  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw UsageError("cannot read --config " + config_path);
      cfg.merge_json(json::parse(in));
    }
    if (*f_overfit) {
      cfg.overfit = true;
      cfg.model = train::overfit_model_config(0);
      cfg.train = train::overfit_train_config();
    }
    if (*o_seed) cfg.seed = seed;
    cfg.train.seed = cfg.seed;
    if (!out.empty()) cfg.out = out;
    if (cfg.out.empty()) cfg.out = default_out_root() / command;
    if (!data_dir.empty()) cfg.data = data_dir;
    if (!raw.empty()) cfg.raw = raw;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (!generations.empty()) cfg.generations = generations;
    if (!eval_report.empty()) cfg.eval_report = eval_report;
    if (!fusion_summary.empty()) cfg.fusion_summary = fusion_summary;
    if (!ablation.empty()) cfg.train.ablation = train::Ablation::parse(ablation);
    if (!split.empty()) cfg.generate_split = split;
    if (*f_syn) cfg.synthetic = true;
    if (*o_n) cfg.n = n;
    if (*o_epochs) cfg.train.epochs = epochs;
    if (*f_freeze) cfg.fusion.train.freeze_projection_zero = true;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: bad configuration: " << e.what() << '\n';
    return 1;
  }

  try {
    log_line(cfg, "start " + command);
    if (*build) cmd_build_dataset(cfg);
    else if (*trn) cmd_train(cfg);
    else if (*gen) cmd_generate(cfg);
    else if (*ev) cmd_eval(cfg);
    else if (*fuse) cmd_fuse(cfg);
    else if (*rep) cmd_report(cfg);
    log_line(cfg, "done " + command);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    log_line(cfg, std::string("failed ") + command + ": " + e.what());
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::cout << command << ": wrote " << cfg.out.string() << '\n';
  return 0;
}

}  // namespace ddvqa::cli
