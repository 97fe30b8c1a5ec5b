#pragma once

// Whitespace + punctuation tokenizer with a corpus-induced vocabulary.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ddvqa::text {

inline constexpr int kPad = 0;
inline constexpr int kCls = 1;
inline constexpr int kSep = 2;
inline constexpr int kUnk = 3;
inline constexpr int kBos = 4;
inline constexpr int kNumSpecials = 5;

inline constexpr std::size_t kMaxQuestionLen = 32;
inline constexpr std::size_t kMaxAnswerLen = 50;

enum class SequenceKind { kQuestion, kAnswer };

struct TokenSequence {
  std::vector<int> ids;
  SequenceKind kind = SequenceKind::kQuestion;
};

/// Lowercases, splits on whitespace and emits every ASCII punctuation
/// character as its own token.
std::vector<std::string> split_tokens(std::string_view text);

/// Tokens of `text` joined by single spaces.
std::string normalize(std::string_view text);

class Vocabulary {
 public:
  /// Tokens with count >= min_count, ordered by frequency then lexicographically.
  static Vocabulary build(std::span<const std::string> corpus, int min_count = 1);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id_of(std::string_view token) const;
  const std::string& token_of(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// Stable FNV-1a digest of the token list, hex encoded.
  std::string hash() const;

 private:
  void add(std::string token);

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Frames as [CLS] t1..tn [SEP]; truncates content so the framed length is at
/// most `max_len`, always keeping the terminal [SEP].
TokenSequence encode(std::string_view text, SequenceKind kind, const Vocabulary& vocab,
                     std::size_t max_len);
TokenSequence encode(std::string_view text, SequenceKind kind, const Vocabulary& vocab);

/// Drops special ids and joins the remaining tokens with single spaces.
std::string decode(std::span<const int> ids, const Vocabulary& vocab);

/// Sentence-style rendering of non-special tokens: no space before
/// punctuation, first letter capitalized.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

}  // namespace ddvqa::text
