#include "ddvqa/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ddvqa::text {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{"[PAD]", "[CLS]", "[SEP]", "[UNK]", "[BOS]"};
  return specials;
}

bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }
bool is_space(unsigned char c) { return c < 128 && std::isspace(c) != 0; }

}  // namespace

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

std::string normalize(std::string_view text) {
  std::string out;
  for (const auto& tok : split_tokens(text)) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

void Vocabulary::add(std::string token) {
  const int id = static_cast<int>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, int min_count) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, long> counts;
  for (const auto& doc : corpus)
    for (auto& tok : split_tokens(doc)) ++counts[tok];

  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary v;
  for (const auto& s : special_tokens()) v.add(s);
  for (auto& [tok, n] : kept) v.add(tok);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocab: cannot open '" + path.string() + "'");
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (lineno < special_tokens().size() && line != special_tokens()[lineno])
      throw std::runtime_error("vocab: '" + path.string() + "' line " + std::to_string(lineno + 1) +
                               " should be special token " + special_tokens()[lineno]);
    if (v.token_to_id_.count(line))
      throw std::runtime_error("vocab: duplicate token '" + line + "' in '" + path.string() + "'");
    v.add(line);
    ++lineno;
  }
  if (v.size() < special_tokens().size())
    throw std::runtime_error("vocab: '" + path.string() + "' is missing special tokens");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("vocab: cannot write '" + path.string() + "'");
  for (const auto& t : id_to_token_) out << t << '\n';
}

int Vocabulary::id_of(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " outside [0," +
                            std::to_string(id_to_token_.size()) + ")");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) != 0;
}

std::string Vocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : id_to_token_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0x0A;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

TokenSequence encode(std::string_view text, SequenceKind kind, const Vocabulary& vocab,
                     std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("encode: max_len must leave room for [CLS]/[SEP]");
  TokenSequence seq;
  seq.kind = kind;
  seq.ids.push_back(kCls);
  for (const auto& tok : split_tokens(text)) {
    if (seq.ids.size() + 1 >= max_len) break;
    seq.ids.push_back(vocab.id_of(tok));
  }
  seq.ids.push_back(kSep);
  return seq;
}

TokenSequence encode(std::string_view text, SequenceKind kind, const Vocabulary& vocab) {
  return encode(text, kind, vocab,
                kind == SequenceKind::kQuestion ? kMaxQuestionLen : kMaxAnswerLen);
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const auto& tok = vocab.token_of(id);
    if (id < kNumSpecials) continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const auto& tok = vocab.token_of(id);
    if (id < kNumSpecials) continue;
    const bool punct = tok.size() == 1 && std::ispunct(static_cast<unsigned char>(tok[0])) && tok != "/";
    if (!out.empty() && !punct) out.push_back(' ');
    out += tok;
  }
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace ddvqa::text
