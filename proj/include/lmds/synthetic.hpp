#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "lmds/corpus_io.hpp"
#include "lmds/error.hpp"
#include "lmds/lexicon.hpp"

namespace lmds {

/// How the high-quality stratum differs from the low-quality one.
enum class SignalTask {
  marker_tokens,  // strata carry words from the high/low quality lexicons
  bigram_pairs,   // strata carry word pairs; unigram statistics are balanced
};

inline std::string to_string(SignalTask t) {
  return t == SignalTask::marker_tokens ? "marker_tokens" : "bigram_pairs";
}

inline SignalTask parse_signal_task(std::string_view s) {
  if (s == "marker_tokens") return SignalTask::marker_tokens;
  if (s == "bigram_pairs") return SignalTask::bigram_pairs;
  fail(ErrorKind::config, "unknown synthetic task: " + std::string(s));
}

struct SyntheticCorpusSpec {
  std::size_t n_docs = 10000;
  double high_quality_fraction = 0.25;
  /// Probability that a document carries its stratum's planted signal.
  /// 1.0 makes strata separable, 0.0 makes them indistinguishable.
  double signal_strength = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t vocabulary_seed = 7;
  std::size_t vocabulary_size = 5000;
  std::size_t min_words = 60;
  std::size_t max_words = 140;
  std::size_t markers_per_doc = 3;
  SignalTask task = SignalTask::marker_tokens;
  std::size_t pair_count = 100;  // bigram_pairs: distinct pairs per stratum

  void validate() const {
    if (n_docs < 100) fail(ErrorKind::invalid_argument, "synthetic corpus needs n_docs >= 100");
    if (!(high_quality_fraction > 0.0 && high_quality_fraction < 1.0))
      fail(ErrorKind::invalid_argument, "high_quality_fraction must lie in (0, 1)");
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0))
      fail(ErrorKind::invalid_argument, "signal_strength must lie in [0, 1]");
    if (min_words == 0 || min_words > max_words)
      fail(ErrorKind::invalid_argument, "need 0 < min_words <= max_words");
    if (vocabulary_size < 100) fail(ErrorKind::invalid_argument, "vocabulary_size must be >= 100");
    if (task == SignalTask::bigram_pairs && 2 * pair_count > vocabulary_size)
      fail(ErrorKind::invalid_argument, "pair_count too large for the vocabulary");
  }
};

/// Multi-n-gram task for capacity sweeps: the signal lives only in word
/// pairs, so hash collisions among bigrams cost accuracy at low hash_bits.
inline SyntheticCorpusSpec capacity_task_spec(std::uint64_t seed = 0) {
  SyntheticCorpusSpec spec;
  spec.task = SignalTask::bigram_pairs;
  spec.pair_count = 100;
  spec.markers_per_doc = 4;
  spec.seed = seed;
  return spec;
}

/// Hidden ground truth lives in meta under this key ("high" or "low").
inline constexpr std::string_view kStratumKey = "stratum";

inline bool is_high_quality(const Document& doc) {
  auto it = doc.meta.find(std::string(kStratumKey));
  return it != doc.meta.end() && it->second == "high";
}

struct SyntheticCorpus {
  SyntheticCorpusSpec spec;
  std::vector<Document> documents;
  std::size_t high_quality = 0;
};

namespace detail {
/// Pronounceable pseudo-words that never collide with the lexicons.
inline std::vector<std::string> make_vocabulary(std::size_t size, std::uint64_t seed) {
  static constexpr std::string_view consonants = "bcdfghjklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::unordered_set<std::string> reserved;
  for (auto w : lexicon::kHighQuality) reserved.emplace(w);
  for (auto w : lexicon::kLowQuality) reserved.emplace(w);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_c(0, consonants.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_v(0, vowels.size() - 1);
  std::uniform_int_distribution<int> syllables(2, 4);
  std::unordered_set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < size) {
    std::string w;
    const int n = syllables(rng);
    for (int i = 0; i < n; ++i) {
      w += consonants[pick_c(rng)];
      w += vowels[pick_v(rng)];
    }
    if (reserved.contains(w) || !seen.insert(w).second) continue;
    words.push_back(std::move(w));
  }
  return words;
}
}  // namespace detail

/// Deterministic per spec. Exactly round(n_docs * high_quality_fraction)
/// documents are high quality; their ids are "syn-NNNNNN" in generation order.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  const auto vocab = detail::make_vocabulary(spec.vocabulary_size, spec.vocabulary_seed);

  // Pair tables for the bigram task: high (a_i, b_i), low (a_i, b_{i+1}), so
  // every pair word is equally frequent in both strata.
  std::vector<std::string> first_words;
  std::vector<std::string> second_words;
  if (spec.task == SignalTask::bigram_pairs) {
    std::vector<std::string> shuffled = vocab;
    std::mt19937_64 prng(spec.vocabulary_seed ^ 0x5eedULL);
    std::shuffle(shuffled.begin(), shuffled.end(), prng);
    first_words.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(spec.pair_count));
    second_words.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(spec.pair_count),
                        shuffled.begin() + static_cast<std::ptrdiff_t>(2 * spec.pair_count));
  }

  std::mt19937_64 rng(spec.seed);
  SyntheticCorpus corpus;
  corpus.spec = spec;
  corpus.high_quality = static_cast<std::size_t>(
      std::llround(spec.high_quality_fraction * static_cast<double>(spec.n_docs)));
  std::vector<char> high(spec.n_docs, 0);
  std::fill(high.begin(), high.begin() + static_cast<std::ptrdiff_t>(corpus.high_quality), 1);
  std::shuffle(high.begin(), high.end(), rng);

  std::uniform_int_distribution<std::size_t> length(spec.min_words, spec.max_words);
  std::uniform_int_distribution<std::size_t> word(0, vocab.size() - 1);
  std::uniform_int_distribution<std::size_t> hq_marker(0, lexicon::kHighQuality.size() - 1);
  std::uniform_int_distribution<std::size_t> lq_marker(0, lexicon::kLowQuality.size() - 1);
  std::uniform_int_distribution<std::size_t> pair(0, std::max<std::size_t>(spec.pair_count, 1) - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> sentence(8, 16);

  corpus.documents.reserve(spec.n_docs);
  for (std::size_t d = 0; d < spec.n_docs; ++d) {
    const bool is_high = high[d] != 0;
    std::vector<std::string> words;
    const std::size_t n = length(rng);
    words.reserve(n + 2 * spec.markers_per_doc);
    for (std::size_t i = 0; i < n; ++i) words.push_back(vocab[word(rng)]);

    if (coin(rng) < spec.signal_strength) {
      for (std::size_t m = 0; m < spec.markers_per_doc; ++m) {
        std::uniform_int_distribution<std::size_t> at(0, words.size());
        const auto pos = words.begin() + static_cast<std::ptrdiff_t>(at(rng));
        if (spec.task == SignalTask::marker_tokens) {
          words.insert(pos, std::string(is_high ? lexicon::kHighQuality[hq_marker(rng)]
                                                : lexicon::kLowQuality[lq_marker(rng)]));
        } else {
          const std::size_t p = pair(rng);
          const std::string& second =
              second_words[is_high ? p : (p + 1) % spec.pair_count];
          words.insert(words.insert(pos, second), first_words[p]);
        }
      }
    }

    std::string text;
    int until_stop = sentence(rng);
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i > 0) text += ' ';
      text += words[i];
      if (--until_stop == 0 || i + 1 == words.size()) {
        text += '.';
        until_stop = sentence(rng);
      }
    }

    char id[32];
    std::snprintf(id, sizeof id, "syn-%06zu", d);
    Document doc;
    doc.id = id;
    doc.text = std::move(text);
    doc.meta[std::string(kStratumKey)] = is_high ? "high" : "low";
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

/// Writes the corpus as `num_shards` roughly equal shards.
inline ShardSet write_synthetic_corpus(const SyntheticCorpus& corpus, const fs::path& out_dir,
                                       std::size_t num_shards, const WriteOptions& options = {}) {
  if (num_shards == 0) fail(ErrorKind::invalid_argument, "num_shards must be >= 1");
  const std::size_t per_shard = (corpus.documents.size() + num_shards - 1) / num_shards;
  return write_shards(corpus.documents, out_dir, std::max<std::size_t>(per_shard, 1), options);
}

}  // namespace lmds
