#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nacap {

using TokenId = std::uint32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kReservedTokens = 4;

inline const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return r;
}

/// Lowercases and splits on whitespace.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join(std::span<const std::string> tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// Token <-> id bijection with PAD=0, BOS=1, EOS=2, UNK=3.
class Vocabulary {
 public:
  Vocabulary() : tokens_(reserved_tokens()) { reindex(); }

  /// `tokens` lists the non-reserved tokens in id order (first gets id 4).
  static Vocabulary from_tokens(std::span<const std::string> tokens) {
    Vocabulary v;
    for (const std::string& t : tokens) {
      if (v.index_.count(t)) throw std::invalid_argument("vocabulary: duplicate token '" + t + "'");
      v.index_.emplace(t, static_cast<TokenId>(v.tokens_.size()));
      v.tokens_.push_back(t);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  /// All tokens in id order, reserved ones included.
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const {
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  /// Drops PAD/BOS/EOS.
  std::vector<std::string> decode(std::span<const TokenId> ids) const {
    std::vector<std::string> out;
    for (TokenId i : ids) {
      if (i == kPad || i == kBos || i == kEos) continue;
      out.push_back(token(i));
    }
    return out;
  }

  std::string decode_text(std::span<const TokenId> ids) const {
    auto words = decode(ids);
    return join(words);
  }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<TokenId>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Tokens with count >= min_count get ids 4.. in descending frequency, ties
/// broken lexicographically.
inline Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus, std::size_t min_count) {
  if (corpus.empty()) throw std::invalid_argument("build_vocabulary: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& tok : sentence) ++counts[tok];
  for (const auto& r : reserved_tokens()) counts.erase(r);
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocabulary::from_tokens(tokens);
}

// Vocabulary file: the four reserved tokens on the first four lines, then one
// token per line; line index i (0-based, after the header) holds id i + 4.

inline void write_vocabulary(std::ostream& os, const Vocabulary& vocab) {
  for (const auto& t : vocab.tokens()) os << t << '\n';
}

inline Vocabulary read_vocabulary(std::istream& is) {
  std::string line;
  for (std::size_t i = 0; i < kReservedTokens; ++i) {
    if (!std::getline(is, line) || line != reserved_tokens()[i]) {
      throw std::runtime_error("vocabulary file: line " + std::to_string(i + 1) + " must be " +
                               reserved_tokens()[i]);
    }
  }
  std::vector<std::string> tokens;
  std::size_t lineno = kReservedTokens;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) throw std::runtime_error("vocabulary file: empty token on line " + std::to_string(lineno));
    tokens.push_back(line);
  }
  return Vocabulary::from_tokens(tokens);
}

}  // namespace nacap
