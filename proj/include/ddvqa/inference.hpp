#pragma once

// Greedy answer generation, verdict extraction and attention export.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddvqa/dataset.hpp"
#include "ddvqa/model.hpp"
#include "ddvqa/tokenizer.hpp"

namespace ddvqa::infer {

enum class PredictedVerdict { kReal, kFake, kUndetermined };
enum class StopReason { kEos, kMaxLen };

std::string_view to_string(PredictedVerdict v);
std::string_view to_string(StopReason s);
PredictedVerdict parse_predicted_verdict(std::string_view s);

struct GeneratedAnswer {
  std::string text;
  std::vector<int> token_ids;  // generated tokens, excluding the final [SEP]
  PredictedVerdict verdict = PredictedVerdict::kUndetermined;
  StopReason stop_reason = StopReason::kEos;
};

inline constexpr std::size_t kMaxGeneratedTokens = 50;

/// Greedy argmax decoding from [CLS][BOS]; stops at [SEP] or after
/// `max_tokens` generated tokens.
GeneratedAnswer generate(const model::DdvqaModel& model, const text::Vocabulary& vocab,
                         const Image& image, std::string_view question,
                         std::size_t max_tokens = kMaxGeneratedTokens);
GeneratedAnswer generate(const model::DdvqaModel& model, const text::Vocabulary& vocab,
                         const model::QuestionContext& ctx, std::size_t max_tokens = kMaxGeneratedTokens);

/// Verdict from the tokens of the first sentence ('.', '!' or '?' end a
/// sentence). Exactly one of "fake"/"real" present decides it.
PredictedVerdict extract_verdict(std::string_view text);

struct AttentionMap {
  std::size_t layer = 0;
  std::size_t head = 0;  // == n_heads for the head average
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::vector<double> weights;  // query_len × key_len
  std::vector<std::string> query_tokens;
  std::string key_kind = "image_patches";
};

struct AttentionExport {
  std::vector<AttentionMap> heads;
  AttentionMap mean;  // head average
  /// Head-averaged patch weights per query row reshaped to the patch grid,
  /// [query][grid_h * grid_w], and the [CLS] key column reported separately.
  std::vector<std::vector<double>> grids;
  std::vector<double> cls_column;
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
};

/// Weights of the final grounding layer for one (image, question). Throws
/// when the recorder captured nothing.
AttentionExport export_attention(const model::DdvqaModel& model, const text::Vocabulary& vocab,
                                 const Image& image, std::string_view question);
AttentionExport attention_from_recorder(const model::DdvqaModel& model,
                                        const model::AttentionRecorder& recorder,
                                        std::vector<std::string> query_tokens);

/// One CSV grid per (layer, head) plus the head mean, and a manifest JSON.
void write_attention(const std::filesystem::path& dir, const AttentionExport& att,
                     const std::string& stem);

struct GenerationRecord {
  std::string image_id;
  std::string question;
  std::string generated;
  PredictedVerdict verdict = PredictedVerdict::kUndetermined;
  data::Verdict gold_verdict = data::Verdict::kReal;
  std::vector<std::string> gold_answers;
};

std::string generation_to_json_line(const GenerationRecord& r);
GenerationRecord generation_from_json_line(std::string_view line);
void write_generations(const std::filesystem::path& path, std::span<const GenerationRecord> records);
std::vector<GenerationRecord> read_generations(const std::filesystem::path& path);

}  // namespace ddvqa::infer
