#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <memory>
#include <string>
#include <string_view>

#include "lmds/hash.hpp"
#include "lmds/labeler.hpp"
#include "lmds/lexicon.hpp"

namespace lmds {

namespace detail {
inline bool in_list(std::string_view word, auto const& list) {
  return std::find(list.begin(), list.end(), word) != list.end();
}
}  // namespace detail

/// Deterministic offline labeler: Yes iff the snippet has more high-quality
/// lexicon words than low-quality ones (and at least one).
inline Label mock_label(const Snippet& snippet) {
  std::size_t high = 0;
  std::size_t low = 0;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (detail::in_list(word, lexicon::kHighQuality)) ++high;
    else if (detail::in_list(word, lexicon::kLowQuality)) ++low;
    word.clear();
  };
  for (char c : snippet.text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) != 0) word += static_cast<char>(std::tolower(u));
    else flush();
  }
  flush();
  return high > 0 && high > low ? Label::Yes : Label::No;
}

inline std::string answer(Label l) { return to_string(l); }

/// Endpoint stand-in answering with mock_label of the query snippet; ignores
/// the instruction and any demonstrations.
class LexicalMockBackend : public CompletionBackend {
 public:
  std::string complete(const std::string& prompt) override {
    return answer(mock_label({"", inspect_prompt(prompt).snippet, 0, 0, 0}));
  }
  std::string id() const override { return "mock-lexical"; }
};

/// Per-version disagreement: documents are split by a keyed uniform u, and
/// version k flips the lexical answer when u falls in its own slice of width
/// flip_rate / 2. Any two versions therefore disagree on flip_rate of the
/// documents.
class VersionSensitiveMockBackend : public CompletionBackend {
 public:
  explicit VersionSensitiveMockBackend(double flip_rate, std::uint64_t seed = 0)
      : flip_rate_(flip_rate), seed_(seed) {
    // Each version flips a disjoint band of width flip_rate / 2.
    if (!(flip_rate >= 0.0 && flip_rate <= 2.0 / 3.0))
      fail(ErrorKind::config, "version-sensitive flip rate must lie in [0, 2/3]");
  }

  std::string complete(const std::string& prompt) override {
    const auto view = inspect_prompt(prompt);
    Label l = mock_label({"", view.snippet, 0, 0, 0});
    const double u = keyed_uniform(view.snippet, seed_);
    const double width = flip_rate_ / 2.0;
    const int k = static_cast<int>(view.version.value_or(PromptVersion::V1));
    if (u >= k * width && u < (k + 1) * width) l = l == Label::Yes ? Label::No : Label::Yes;
    return answer(l);
  }
  std::string id() const override { return "mock-version-sensitive"; }

 private:
  double flip_rate_;
  std::uint64_t seed_;
};

/// Weak labeler with a fidelity knob: agrees with the lexical labeler on a
/// `fidelity` fraction of documents, using zero_shot or few_shot fidelity
/// depending on whether demonstrations are present. The same keyed uniform
/// is used in both settings, so the few-shot agreement set contains the
/// zero-shot one when few_shot >= zero_shot.
class FidelityMockBackend : public CompletionBackend {
 public:
  FidelityMockBackend(double zero_shot, double few_shot, std::uint64_t seed = 0)
      : zero_shot_(zero_shot), few_shot_(few_shot), seed_(seed) {}

  std::string complete(const std::string& prompt) override {
    const auto view = inspect_prompt(prompt);
    Label l = mock_label({"", view.snippet, 0, 0, 0});
    const double fidelity = view.shots > 0 ? few_shot_ : zero_shot_;
    if (keyed_uniform(view.snippet, seed_) >= fidelity) l = l == Label::Yes ? Label::No : Label::Yes;
    return answer(l);
  }
  std::string id() const override { return "mock-fidelity"; }

 private:
  double zero_shot_;
  double few_shot_;
  std::uint64_t seed_;
};

/// Answers Yes on a `yes_rate` fraction of documents regardless of content.
class BiasedMockBackend : public CompletionBackend {
 public:
  explicit BiasedMockBackend(double yes_rate, std::uint64_t seed = 0)
      : yes_rate_(yes_rate), seed_(seed) {}

  std::string complete(const std::string& prompt) override {
    return keyed_uniform(inspect_prompt(prompt).snippet, seed_) < yes_rate_ ? "Yes" : "No";
  }
  std::string id() const override { return "mock-biased"; }

 private:
  double yes_rate_;
  std::uint64_t seed_;
};

/// Always returns the same text.
class ConstantMockBackend : public CompletionBackend {
 public:
  explicit ConstantMockBackend(std::string response) : response_(std::move(response)) {}
  std::string complete(const std::string&) override { return response_; }
  std::string id() const override { return "mock-constant"; }

 private:
  std::string response_;
};

/// Builds a mock by name: "lexical", "version-sensitive[:flip]",
/// "fidelity[:zero:few]", "biased[:rate]", "constant:<text>".
inline std::unique_ptr<CompletionBackend> make_mock_backend(std::string_view spec,
                                                            std::uint64_t seed = 0) {
  const auto colon = spec.find(':');
  const std::string_view kind = spec.substr(0, colon);
  const std::string args = colon == std::string_view::npos ? "" : std::string(spec.substr(colon + 1));
  auto number = [&](std::size_t index, double fallback) {
    std::size_t start = 0;
    for (std::size_t i = 0; i < index; ++i) {
      start = args.find(':', start);
      if (start == std::string::npos) return fallback;
      ++start;
    }
    if (start >= args.size()) return fallback;
    try {
      return std::stod(args.substr(start, args.find(':', start) - start));
    } catch (const std::exception&) {
      fail(ErrorKind::config, "bad mock parameter in \"" + std::string(spec) + "\"");
    }
  };
  if (kind == "lexical") return std::make_unique<LexicalMockBackend>();
  if (kind == "version-sensitive")
    return std::make_unique<VersionSensitiveMockBackend>(number(0, 0.05), seed);
  if (kind == "fidelity")
    return std::make_unique<FidelityMockBackend>(number(0, 0.60), number(1, 0.75), seed);
  if (kind == "biased") return std::make_unique<BiasedMockBackend>(number(0, 0.98), seed);
  if (kind == "constant") return std::make_unique<ConstantMockBackend>(args);
  fail(ErrorKind::config, "unknown mock labeler: " + std::string(spec));
}

}  // namespace lmds
