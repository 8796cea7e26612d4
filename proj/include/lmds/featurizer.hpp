#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lmds/error.hpp"
#include "lmds/hash.hpp"

namespace lmds {

enum class TokenPattern {
  alnum,       // maximal runs of ASCII alphanumerics or non-ASCII bytes
  whitespace,  // maximal runs of non-whitespace
};

inline std::string to_string(TokenPattern p) {
  return p == TokenPattern::alnum ? "alnum" : "whitespace";
}

inline TokenPattern parse_token_pattern(std::string_view s) {
  if (s == "alnum") return TokenPattern::alnum;
  if (s == "whitespace") return TokenPattern::whitespace;
  fail(ErrorKind::config, "unknown token pattern: " + std::string(s));
}

struct FeaturizerConfig {
  std::vector<int> ngram_orders = {1, 2, 3};
  int hash_bits = 18;
  bool lowercase = true;
  TokenPattern token_pattern = TokenPattern::alnum;
  /// Model inputs are count / ||counts||_2 when set.
  bool normalize = true;

  std::size_t dimension() const { return std::size_t{1} << hash_bits; }

  void validate() const {
    if (hash_bits < 8 || hash_bits > 26) fail(ErrorKind::config, "hash_bits must lie in [8, 26]");
    if (ngram_orders.empty()) fail(ErrorKind::config, "ngram_orders must be non-empty");
    for (int n : ngram_orders)
      if (n < 1 || n > 8) fail(ErrorKind::config, "n-gram orders must lie in [1, 8]");
  }

  bool operator==(const FeaturizerConfig&) const = default;
};

inline nlohmann::json to_json(const FeaturizerConfig& c) {
  return {{"ngram_orders", c.ngram_orders},
          {"hash_bits", c.hash_bits},
          {"lowercase", c.lowercase},
          {"token_pattern", to_string(c.token_pattern)},
          {"normalize", c.normalize}};
}

inline FeaturizerConfig featurizer_from_json(const nlohmann::json& j) {
  FeaturizerConfig c;
  c.ngram_orders = j.at("ngram_orders").get<std::vector<int>>();
  c.hash_bits = j.at("hash_bits").get<int>();
  c.lowercase = j.at("lowercase").get<bool>();
  c.token_pattern = parse_token_pattern(j.at("token_pattern").get<std::string>());
  c.normalize = j.at("normalize").get<bool>();
  c.validate();
  return c;
}

struct FeatureEntry {
  std::uint32_t index = 0;
  double value = 0.0;

  bool operator==(const FeatureEntry&) const = default;
};

/// Sorted by index, no duplicate indices.
using SparseVector = std::vector<FeatureEntry>;

inline std::vector<std::string> tokenize(std::string_view text, const FeaturizerConfig& config) {
  std::vector<std::string> tokens;
  std::string current;
  auto in_token = [&](unsigned char c) {
    if (config.token_pattern == TokenPattern::whitespace) return std::isspace(c) == 0;
    return c >= 0x80 || std::isalnum(c) != 0;
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (in_token(c)) {
      current += config.lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : ch;
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Bucket of the n-gram tokens[begin, begin + order).
inline std::uint32_t ngram_index(const std::vector<std::string>& tokens, std::size_t begin,
                                 int order, int hash_bits) {
  std::uint64_t h = fnv1a(std::string_view("\x1e", 1), mix64(static_cast<std::uint64_t>(order)));
  for (int k = 0; k < order; ++k) {
    if (k > 0) h = fnv1a(std::string_view("\x1f", 1), h);
    h = fnv1a(tokens[begin + static_cast<std::size_t>(k)], h);
  }
  return static_cast<std::uint32_t>(mix64(h) >> (64 - hash_bits));
}

/// Hashed bag of n-grams with counts. Colliding n-grams add up.
inline SparseVector featurize(std::string_view text, const FeaturizerConfig& config) {
  const auto tokens = tokenize(text, config);
  std::vector<std::uint32_t> indices;
  for (int order : config.ngram_orders) {
    const auto n = static_cast<std::size_t>(order);
    if (tokens.size() < n) continue;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
      indices.push_back(ngram_index(tokens, i, order, config.hash_bits));
  }
  std::sort(indices.begin(), indices.end());
  SparseVector out;
  for (std::uint32_t idx : indices) {
    if (!out.empty() && out.back().index == idx) out.back().value += 1.0;
    else out.push_back({idx, 1.0});
  }
  return out;
}

/// Scales a count vector to unit L2 norm (no-op for empty vectors).
inline SparseVector l2_normalized(SparseVector v) {
  double sq = 0.0;
  for (const auto& e : v) sq += e.value * e.value;
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& e : v) e.value *= inv;
  }
  return v;
}

}  // namespace lmds
