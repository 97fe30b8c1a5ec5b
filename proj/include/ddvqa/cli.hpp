#pragma once

// Run configuration and the subcommands behind the `ddvqa` executable:
// build-dataset, train, generate, eval, fuse, report.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddvqa/fusion.hpp"
#include "ddvqa/metrics.hpp"
#include "ddvqa/model.hpp"
#include "ddvqa/training.hpp"
#include "json.hpp"

namespace ddvqa::cli {

/// Bad or missing flags; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::filesystem::path data;         // dataset directory
  std::filesystem::path raw;          // raw annotation JSONL for build-dataset
  std::filesystem::path checkpoint;   // model file for generate / fuse
  std::filesystem::path generations;  // generation JSONL for eval
  std::filesystem::path eval_report;  // inputs of report
  std::filesystem::path fusion_summary;

  bool synthetic = false;
  std::size_t n = 300;
  std::uint32_t image_size = 64;
  int test_percent = 10;
  bool overfit = false;
  std::string generate_split = "test";  // "train", "test" or "all"

  model::ModelConfig model;  // vocab_size is filled in from the vocabulary
  train::TrainConfig train;
  fusion::BenchmarkConfig fusion;

  nlohmann::json to_json() const;
  /// Keys absent from `j` keep their current value; unknown keys throw.
  void merge_json(const nlohmann::json& j);
};

/// Output root used when --out is not given: $DDVQA_OUT_ROOT or "runs".
std::filesystem::path default_out_root();

/// Writes `resolved_config.json` into the run directory.
void write_resolved_config(const RunConfig& config);

void cmd_build_dataset(const RunConfig& config);
train::FitResult cmd_train(const RunConfig& config);
void cmd_generate(const RunConfig& config);
metrics::EvalReport cmd_eval(const RunConfig& config);
std::vector<fusion::BenchmarkRow> cmd_fuse(const RunConfig& config);
void cmd_report(const RunConfig& config);

/// Parses argv, runs the subcommand and returns the exit code: 0 success,
/// 1 usage error, 2 runtime error.
int run(int argc, char** argv);

}  // namespace ddvqa::cli
