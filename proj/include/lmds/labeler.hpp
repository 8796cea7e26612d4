#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "lmds/corpus_io.hpp"
#include "lmds/error.hpp"

namespace lmds {

// ---------------------------------------------------------------------------
// Prompt templates.

enum class PromptVersion { V1, V2, V3 };

inline constexpr PromptVersion kAllPromptVersions[] = {PromptVersion::V1, PromptVersion::V2,
                                                       PromptVersion::V3};

inline std::string to_string(PromptVersion v) {
  switch (v) {
    case PromptVersion::V1: return "V1";
    case PromptVersion::V2: return "V2";
    case PromptVersion::V3: return "V3";
  }
  return "V1";
}

inline PromptVersion parse_prompt_version(std::string_view s) {
  if (s == "V1" || s == "v1") return PromptVersion::V1;
  if (s == "V2" || s == "v2") return PromptVersion::V2;
  if (s == "V3" || s == "v3") return PromptVersion::V3;
  fail(ErrorKind::config, "unknown prompt version: " + std::string(s));
}

namespace detail {
inline constexpr std::string_view kSnippetPreface =
    "In the above we provide a document snippet. The start and end of the snippet may contain "
    "only a partial word, as we sliced at the character level. ";
inline constexpr std::string_view kAnswerFormat =
    " Answer with \"Yes\" or \"No\" without any additional comments.";
}  // namespace detail

inline std::string instruction_text(PromptVersion v) {
  std::string_view question;
  switch (v) {
    case PromptVersion::V1:
      question =
          "Is the document snippet educational and engaging for a college student studying a "
          "STEM subject or the humanities?";
      break;
    case PromptVersion::V2:
      question =
          "Does the document look like it would be helpful for a STEM or Humanities student who "
          "is struggling with their course?";
      break;
    case PromptVersion::V3:
      question =
          "Does the document look like it would be educational and helpful for a STEM or "
          "Humanities student to help understanding material from their course?";
      break;
  }
  return std::string(detail::kSnippetPreface) + std::string(question) +
         std::string(detail::kAnswerFormat);
}

inline constexpr std::string_view kSnippetPlaceholder = "{snippet}";
inline constexpr std::string_view kInstructionPlaceholder = "{instruction}";
inline constexpr std::string_view kAnswerMarker = "[Answer] ";

struct PromptTemplate {
  PromptVersion version = PromptVersion::V1;
  std::string instruction_text;
  std::string preamble_format = "[Document]\n\n{snippet}\n\n[Instruction] {instruction}";

  static PromptTemplate for_version(PromptVersion v) {
    PromptTemplate t;
    t.version = v;
    t.instruction_text = lmds::instruction_text(v);
    return t;
  }

  /// Single-pass placeholder substitution; inserted text is never rescanned.
  std::string render(std::string_view snippet) const {
    std::string out;
    out.reserve(preamble_format.size() + snippet.size() + instruction_text.size());
    std::size_t i = 0;
    while (i < preamble_format.size()) {
      std::string_view rest = std::string_view(preamble_format).substr(i);
      if (rest.starts_with(kSnippetPlaceholder)) {
        out += snippet;
        i += kSnippetPlaceholder.size();
      } else if (rest.starts_with(kInstructionPlaceholder)) {
        out += instruction_text;
        i += kInstructionPlaceholder.size();
      } else {
        out += preamble_format[i++];
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Labels.

enum class Label { No = 0, Yes = 1 };
enum class ParsedLabel { Yes, No, Ambiguous };

inline std::string to_string(Label l) { return l == Label::Yes ? "Yes" : "No"; }

inline Label parse_label_name(std::string_view s) {
  if (s == "Yes") return Label::Yes;
  if (s == "No") return Label::No;
  fail(ErrorKind::format, "label must be \"Yes\" or \"No\", got \"" + std::string(s) + "\"");
}

/// Case-insensitive match of the first alphabetic token against yes/no.
inline ParsedLabel parse_label(std::string_view raw) {
  auto is_alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
  auto first = std::find_if(raw.begin(), raw.end(), is_alpha);
  if (first == raw.end()) return ParsedLabel::Ambiguous;
  auto last = std::find_if_not(first, raw.end(), is_alpha);
  std::string token(first, last);
  for (auto& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (token == "yes") return ParsedLabel::Yes;
  if (token == "no") return ParsedLabel::No;
  return ParsedLabel::Ambiguous;
}

struct QualityLabel {
  std::string doc_id;
  Label label = Label::No;
  PromptVersion prompt_version = PromptVersion::V1;
  std::string labeler_id;
  std::string raw_response;
  int icl_shots = 0;

  bool operator==(const QualityLabel&) const = default;
};

struct IclDemonstration {
  std::string snippet_text;
  Label label = Label::No;
  std::string source_labeler;
};

inline constexpr std::size_t kIclShots = 5;

/// Zero-shot: the template rendering. Few-shot: five answered blocks
/// ("<rendering>\n\n[Answer] Yes") joined by blank lines, then the query.
inline std::string build_prompt(const Snippet& snippet, const PromptTemplate& tmpl,
                                std::span<const IclDemonstration> demos = {}) {
  if (snippet.text.empty()) fail(ErrorKind::invalid_argument, "empty snippet");
  if (!demos.empty() && demos.size() != kIclShots)
    fail(ErrorKind::invalid_argument,
         "ICL demonstrations must number 0 or 5, got " + std::to_string(demos.size()));
  std::string prompt;
  for (const auto& demo : demos) {
    prompt += tmpl.render(demo.snippet_text);
    prompt += "\n\n";
    prompt += kAnswerMarker;
    prompt += to_string(demo.label);
    prompt += "\n\n";
  }
  prompt += tmpl.render(snippet.text);
  return prompt;
}

/// Inverse of build_prompt for prompts made from the default layout: recovers
/// the query snippet, the prompt version, and the shot count. Used by mock
/// endpoints, which only see the prompt text.
struct PromptView {
  std::string snippet;
  std::optional<PromptVersion> version;
  std::size_t shots = 0;
};

inline PromptView inspect_prompt(std::string_view prompt) {
  PromptView view;
  std::string_view body = prompt;
  for (PromptVersion v : kAllPromptVersions) {
    const std::string suffix = "\n\n[Instruction] " + instruction_text(v);
    if (body.ends_with(suffix)) {
      view.version = v;
      body.remove_suffix(suffix.size());
      break;
    }
  }
  std::size_t pos = 0;
  while ((pos = body.find(kAnswerMarker, pos)) != std::string_view::npos) {
    ++view.shots;
    pos += kAnswerMarker.size();
  }
  std::size_t query_start = 0;
  if (view.shots > 0) query_start = body.rfind(kAnswerMarker);
  constexpr std::string_view kDocHeader = "[Document]\n\n";
  const std::size_t header = body.find(kDocHeader, query_start);
  if (header != std::string_view::npos) body.remove_prefix(header + kDocHeader.size());
  view.snippet = std::string(body);
  return view;
}

// ---------------------------------------------------------------------------
// Yes-fraction diagnostics.

inline constexpr double kDegenerateLow = 0.05;
inline constexpr double kDegenerateHigh = 0.95;

inline double yes_fraction(std::span<const QualityLabel> labels) {
  if (labels.empty()) fail(ErrorKind::invalid_argument, "yes_fraction of an empty label set");
  const auto yes = std::count_if(labels.begin(), labels.end(),
                                 [](const QualityLabel& l) { return l.label == Label::Yes; });
  return static_cast<double>(yes) / static_cast<double>(labels.size());
}

/// True outside [0.05, 0.95]: the labeler is not separating documents.
inline bool is_degenerate_yes_fraction(double fraction) {
  return fraction < kDegenerateLow || fraction > kDegenerateHigh;
}

inline std::string degenerate_labeler_warning(double fraction) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "degenerate labeler: yes_fraction %.4f is outside [%.2f, %.2f]", fraction,
                kDegenerateLow, kDegenerateHigh);
  return buf;
}

// ---------------------------------------------------------------------------
// Endpoint contract.

/// Transport-level failure (connection, timeout, non-2xx, unreadable body).
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorKind::endpoint, what) {}
};

/// A chat-completion style model: prompt in, raw text out. Implementations
/// must be safe to call concurrently.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string id() const = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{200};

  /// Delay before retry number `attempt` (0-based): base * 2^attempt.
  std::chrono::milliseconds delay(int attempt) const {
    return backoff_base * (std::int64_t{1} << std::min(attempt, 20));
  }
};

struct LabelerConfig {
  std::string endpoint_url = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model_name = "llama-2-70b-chat";
  double temperature = 0.2;
  int max_output_tokens = 8;
  int max_concurrent_requests = 8;
  RetryPolicy retry;
  std::chrono::milliseconds request_timeout{60000};
  std::string api_key_env = "LMDS_API_KEY";
  double failure_ceiling = 0.05;

  void validate() const {
    if (!(temperature >= 0.0)) fail(ErrorKind::config, "labeler temperature must be >= 0");
    if (max_concurrent_requests < 1)
      fail(ErrorKind::config, "max_concurrent_requests must be >= 1");
    if (max_output_tokens < 1) fail(ErrorKind::config, "max_output_tokens must be >= 1");
    if (retry.max_retries < 0) fail(ErrorKind::config, "max_retries must be >= 0");
    if (failure_ceiling < 0.0 || failure_ceiling > 1.0)
      fail(ErrorKind::config, "failure_ceiling must lie in [0, 1]");
  }
};

struct LabelRunStats {
  std::size_t requested = 0;
  std::size_t labeled = 0;
  std::size_t ambiguous_dropped = 0;
  std::size_t transport_failures = 0;
  std::optional<double> yes_fraction;
  bool aborted = false;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"requested", requested},
                        {"labeled", labeled},
                        {"ambiguous_dropped", ambiguous_dropped},
                        {"transport_failures", transport_failures},
                        {"aborted", aborted},
                        {"warnings", warnings}};
    j["yes_fraction"] = yes_fraction ? nlohmann::json(*yes_fraction) : nlohmann::json();
    return j;
  }
};

struct LabelRun {
  std::vector<QualityLabel> labels;  // input order
  LabelRunStats stats;
};

/// Thrown when transport failures exceed the configured ceiling. Carries the
/// labels collected before the abort.
class LabelingAborted : public Error {
 public:
  LabelingAborted(const std::string& what, LabelRun partial)
      : Error(ErrorKind::endpoint, what), partial_(std::move(partial)) {}
  const LabelRun& partial() const { return partial_; }

 private:
  LabelRun partial_;
};

namespace detail {
inline std::optional<std::string> complete_with_retries(CompletionBackend& backend,
                                                        const std::string& prompt,
                                                        const RetryPolicy& retry,
                                                        const std::atomic<bool>& stop) {
  for (int attempt = 0;; ++attempt) {
    try {
      return backend.complete(prompt);
    } catch (const TransportError&) {
      if (attempt >= retry.max_retries || stop.load()) return std::nullopt;
    }
    std::this_thread::sleep_for(retry.delay(attempt));
  }
}
}  // namespace detail

/// Labels every snippet through `backend` with at most
/// config.max_concurrent_requests requests in flight. Ambiguous answers are
/// retried once with the same prompt and then dropped. Output preserves input
/// order regardless of completion order.
inline LabelRun label_documents(std::span<const Snippet> snippets, const LabelerConfig& config,
                                const PromptTemplate& tmpl,
                                std::span<const IclDemonstration> demos,
                                CompletionBackend& backend) {
  config.validate();
  if (!demos.empty() && demos.size() != kIclShots)
    fail(ErrorKind::invalid_argument,
         "ICL demonstrations must number 0 or 5, got " + std::to_string(demos.size()));

  for (const auto& s : snippets)
    if (s.text.empty()) fail(ErrorKind::invalid_argument, "empty snippet: " + s.doc_id);

  const std::size_t n = snippets.size();
  const auto max_failures =
      static_cast<std::size_t>(std::floor(config.failure_ceiling * static_cast<double>(n)));

  std::vector<std::optional<QualityLabel>> slots(n);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> ambiguous{0};
  std::atomic<std::size_t> failures{0};
  std::atomic<bool> stop{false};
  const std::string labeler_id = backend.id();
  const int shots = static_cast<int>(demos.size());

  auto work = [&] {
    for (;;) {
      if (stop.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const Snippet& snippet = snippets[i];
      const std::string prompt = build_prompt(snippet, tmpl, demos);
      std::optional<std::string> raw;
      ParsedLabel parsed = ParsedLabel::Ambiguous;
      for (int round = 0; round < 2 && parsed == ParsedLabel::Ambiguous; ++round) {
        raw = detail::complete_with_retries(backend, prompt, config.retry, stop);
        if (!raw) break;
        parsed = parse_label(*raw);
      }
      if (!raw) {
        if (failures.fetch_add(1) + 1 > max_failures) stop.store(true);
        continue;
      }
      if (parsed == ParsedLabel::Ambiguous) {
        ambiguous.fetch_add(1);
        continue;
      }
      slots[i] = QualityLabel{snippet.doc_id,
                              parsed == ParsedLabel::Yes ? Label::Yes : Label::No,
                              tmpl.version,
                              labeler_id,
                              *raw,
                              shots};
    }
  };

  const std::size_t workers = std::min<std::size_t>(
      static_cast<std::size_t>(config.max_concurrent_requests), std::max<std::size_t>(n, 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  LabelRun run;
  for (auto& s : slots)
    if (s) run.labels.push_back(std::move(*s));
  run.stats.requested = n;
  run.stats.labeled = run.labels.size();
  run.stats.ambiguous_dropped = ambiguous.load();
  run.stats.transport_failures = failures.load();
  run.stats.aborted = stop.load();
  if (!run.labels.empty()) {
    const double yf = yes_fraction(run.labels);
    run.stats.yes_fraction = yf;
    if (is_degenerate_yes_fraction(yf)) run.stats.warnings.push_back(degenerate_labeler_warning(yf));
  }
  if (run.stats.aborted) {
    const std::string msg = "labeling aborted: " + std::to_string(run.stats.transport_failures) +
                            " transport failures exceed the ceiling of " +
                            std::to_string(max_failures) + " for " + std::to_string(n) +
                            " requests";
    throw LabelingAborted(msg, std::move(run));
  }
  return run;
}

// ---------------------------------------------------------------------------
// Label and demonstration stores (newline-delimited JSON).

inline nlohmann::json label_to_json(const QualityLabel& l) {
  return {{"doc_id", l.doc_id},
          {"label", to_string(l.label)},
          {"prompt_version", to_string(l.prompt_version)},
          {"labeler_id", l.labeler_id},
          {"raw_response", l.raw_response},
          {"icl_shots", l.icl_shots}};
}

inline QualityLabel label_from_json(const nlohmann::json& j) {
  try {
    QualityLabel l;
    l.doc_id = j.at("doc_id").get<std::string>();
    l.label = parse_label_name(j.at("label").get<std::string>());
    l.prompt_version = parse_prompt_version(j.at("prompt_version").get<std::string>());
    l.labeler_id = j.at("labeler_id").get<std::string>();
    l.raw_response = j.value("raw_response", std::string{});
    l.icl_shots = j.value("icl_shots", 0);
    return l;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("malformed label record: ") + e.what());
  }
}

inline void write_labels(const fs::path& path, std::span<const QualityLabel> labels) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  LineWriter out(path, is_gzip_path(path));
  for (const auto& l : labels) out.write_line(label_to_json(l).dump());
  out.close();
}

inline std::vector<QualityLabel> read_labels(const fs::path& path) {
  std::vector<QualityLabel> labels;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::format, "malformed label line in " + path.string());
    labels.push_back(label_from_json(j));
  }
  return labels;
}

inline void write_demonstrations(const fs::path& path, std::span<const IclDemonstration> demos) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  LineWriter out(path, false);
  for (const auto& d : demos)
    out.write_line(nlohmann::json{{"snippet_text", d.snippet_text},
                                  {"label", to_string(d.label)},
                                  {"source_labeler", d.source_labeler}}
                       .dump());
  out.close();
}

inline std::vector<IclDemonstration> read_demonstrations(const fs::path& path) {
  std::vector<IclDemonstration> demos;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::format, "malformed demonstration in " + path.string());
    try {
      demos.push_back({j.at("snippet_text").get<std::string>(),
                       parse_label_name(j.at("label").get<std::string>()),
                       j.value("source_labeler", std::string{})});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, std::string("malformed demonstration: ") + e.what());
    }
  }
  return demos;
}

/// Picks 5 demonstrations from a stronger labeler's output by seeded draw.
/// No class balancing is applied.
inline std::vector<IclDemonstration> select_demonstrations(std::span<const Snippet> snippets,
                                                           std::span<const QualityLabel> labels,
                                                           std::uint64_t seed) {
  std::unordered_map<std::string, const Snippet*> by_id;
  for (const auto& s : snippets) by_id.emplace(s.doc_id, &s);
  std::vector<IclDemonstration> pool;
  for (const auto& l : labels) {
    auto it = by_id.find(l.doc_id);
    if (it != by_id.end()) pool.push_back({it->second->text, l.label, l.labeler_id});
  }
  if (pool.size() < kIclShots)
    fail(ErrorKind::degenerate_data, "need at least 5 labeled snippets to build demonstrations");
  std::mt19937_64 rng(seed);
  std::vector<IclDemonstration> out;
  for (std::size_t k = 0; k < kIclShots; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
    out.push_back(pool[k]);
  }
  return out;
}

}  // namespace lmds
