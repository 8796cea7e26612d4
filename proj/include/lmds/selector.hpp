#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "lmds/classifier.hpp"
#include "lmds/corpus_io.hpp"
#include "lmds/error.hpp"
#include "lmds/labeler.hpp"
#include "lmds/parallel.hpp"

namespace lmds {

struct ScoreRecord {
  std::string doc_id;
  double score = 0.0;
  std::string shard;

  bool operator==(const ScoreRecord&) const = default;
};

struct ShardScores {
  std::string shard;  // corpus shard file name
  std::vector<ScoreRecord> records;

  bool operator==(const ShardScores&) const = default;
};

/// Scores for a whole corpus, one entry per corpus shard, in shard order.
struct ScoreSet {
  static constexpr int kFormatVersion = 1;

  std::string classifier_id;
  int format_version = kFormatVersion;
  std::vector<ShardScores> shards;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.records.size();
    return n;
  }

  std::vector<double> all_scores() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& s : shards)
      for (const auto& r : s.records) out.push_back(r.score);
    return out;
  }

  bool operator==(const ScoreSet&) const = default;
};

struct ShardTiming {
  std::string shard;
  std::size_t documents = 0;
  double seconds = 0.0;
};

struct ScoreRun {
  ScoreSet scores;
  std::size_t skipped_empty = 0;
  RunSummary ingest;
  std::vector<ShardTiming> timings;
  double seconds = 0.0;

  double docs_per_second() const {
    return seconds > 0.0 ? static_cast<double>(scores.size()) / seconds : 0.0;
  }

  nlohmann::json to_json() const {
    nlohmann::json per_shard = nlohmann::json::array();
    for (const auto& t : timings)
      per_shard.push_back({{"shard", t.shard}, {"documents", t.documents}, {"seconds", t.seconds}});
    return {{"classifier_id", scores.classifier_id},
            {"scored", scores.size()},
            {"skipped_empty", skipped_empty},
            {"ingest", ingest.to_json()},
            {"seconds", seconds},
            {"docs_per_second", docs_per_second()},
            {"shards", per_shard}};
  }
};

/// Scores every document shard-parallel. Output is identical for any worker
/// count. Documents with empty text cannot be scored and are counted.
inline ScoreRun score_corpus(const ShardSet& shard_set, const QualityClassifier& classifier,
                             std::size_t workers, const IngestOptions& options = {}) {
  if (workers == 0) fail(ErrorKind::invalid_argument, "workers must be >= 1");
  const auto started = std::chrono::steady_clock::now();
  ScoreRun run;
  auto contents = read_shards_parallel(shard_set, workers, options, &run.ingest);

  run.scores.classifier_id = classifier_id(classifier);
  run.scores.shards.resize(contents.size());
  run.timings.resize(contents.size());
  std::vector<std::size_t> skipped(contents.size(), 0);
  parallel_for(contents.size(), workers, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto& out = run.scores.shards[i];
    out.shard = contents[i].shard.name();
    for (const auto& doc : contents[i].documents) {
      if (doc.text.empty()) {
        ++skipped[i];
        continue;
      }
      out.records.push_back({doc.id, classifier.score(doc), out.shard});
    }
    run.timings[i] = {out.shard, out.records.size(),
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
  });
  for (std::size_t s : skipped) run.skipped_empty += s;
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return run;
}

// ---------------------------------------------------------------------------
// Score-set files: one "<shard stem>.scores.jsonl" per corpus shard. The first
// line is a header {classifier_id, format_version, shard}; the rest are
// {doc_id, score}.

inline std::string shard_stem(const std::string& shard_name) {
  for (std::string_view suffix : {".jsonl.gz", ".jsonl", ".gz"}) {
    if (shard_name.size() > suffix.size() && shard_name.ends_with(suffix))
      return shard_name.substr(0, shard_name.size() - suffix.size());
  }
  return shard_name;
}

inline void write_score_set(const fs::path& dir, const ScoreSet& set) {
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().ends_with(".scores.jsonl")) fs::remove(entry.path());
  }
  for (const auto& shard : set.shards) {
    LineWriter out(dir / (shard_stem(shard.shard) + ".scores.jsonl"), false);
    out.write_line(nlohmann::json{{"classifier_id", set.classifier_id},
                                  {"format_version", set.format_version},
                                  {"shard", shard.shard}}
                       .dump());
    for (const auto& r : shard.records)
      out.write_line(nlohmann::json{{"doc_id", r.doc_id}, {"score", r.score}}.dump());
    out.close();
  }
}

inline ScoreSet read_score_set(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) fail(ErrorKind::io, "score-set directory not found: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().filename().string().ends_with(".scores.jsonl")) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  ScoreSet set;
  bool first = true;
  for (const auto& path : files) {
    const auto lines = read_lines(path);
    if (lines.empty()) fail(ErrorKind::format, "score file without header: " + path.string());
    auto header = nlohmann::json::parse(lines[0], nullptr, false);
    if (header.is_discarded() || !header.contains("classifier_id"))
      fail(ErrorKind::format, "bad score file header: " + path.string());
    const int version = header.value("format_version", 0);
    if (version != ScoreSet::kFormatVersion)
      fail(ErrorKind::format, "unsupported score-set format version " + std::to_string(version));
    const auto id = header["classifier_id"].get<std::string>();
    if (first) set.classifier_id = id;
    else if (id != set.classifier_id)
      fail(ErrorKind::format, "score files from different classifiers in " + dir.string());
    first = false;

    ShardScores shard;
    shard.shard = header.value("shard", path.filename().string());
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto j = nlohmann::json::parse(lines[i], nullptr, false);
      if (j.is_discarded() || !j.contains("doc_id") || !j.contains("score") || !j["score"].is_number())
        fail(ErrorKind::format, "malformed score record in " + path.string());
      shard.records.push_back({j["doc_id"].get<std::string>(), j["score"].get<double>(), shard.shard});
    }
    set.shards.push_back(std::move(shard));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Cutoff selection.

struct SelectionDecision {
  double cutoff = 0.0;
  double target_ratio = 1.0;
  double achieved_ratio = 1.0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::string classifier_id;
  std::string tie_rule = "keep documents with score strictly greater than cutoff";
  bool tie_degenerate = false;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    return {{"cutoff", cutoff},           {"target_ratio", target_ratio},
            {"achieved_ratio", achieved_ratio}, {"kept", kept},
            {"dropped", dropped},         {"classifier_id", classifier_id},
            {"tie_rule", tie_rule},       {"tie_degenerate", tie_degenerate},
            {"warnings", warnings}};
  }

  static SelectionDecision from_json(const nlohmann::json& j) {
    try {
      SelectionDecision d;
      d.cutoff = j.at("cutoff").get<double>();
      d.target_ratio = j.at("target_ratio").get<double>();
      d.achieved_ratio = j.at("achieved_ratio").get<double>();
      d.kept = j.at("kept").get<std::size_t>();
      d.dropped = j.at("dropped").get<std::size_t>();
      d.classifier_id = j.at("classifier_id").get<std::string>();
      d.tie_rule = j.value("tie_rule", d.tie_rule);
      d.tie_degenerate = j.value("tie_degenerate", false);
      d.warnings = j.value("warnings", std::vector<std::string>{});
      return d;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, std::string("malformed selection decision: ") + e.what());
    }
  }
};

/// Cutoff at the (1 - target_ratio) empirical quantile, by full sort.
/// With k = floor(target_ratio * N), the cutoff is the (N - k)-th smallest
/// score, so exactly k documents score strictly above it when scores are
/// distinct. target_ratio = 1 puts the cutoff just below the minimum.
/// Equal scores straddling the cutoff keep fewer than k; that is reported as
/// tie degeneracy rather than resolved.
inline SelectionDecision select_cutoff(std::span<const double> scores, double target_ratio,
                                       std::string classifier_id = {}) {
  if (scores.empty()) fail(ErrorKind::invalid_argument, "cannot select from an empty score-set");
  if (!(target_ratio > 0.0 && target_ratio <= 1.0))
    fail(ErrorKind::invalid_argument, "target_ratio must lie in (0, 1]");

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const auto k = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::floor(target_ratio * static_cast<double>(n) + 1e-9)));

  SelectionDecision d;
  d.target_ratio = target_ratio;
  d.classifier_id = std::move(classifier_id);
  d.cutoff = k == n ? std::nextafter(sorted.front(), -std::numeric_limits<double>::infinity())
                    : sorted[n - k - 1];
  d.kept = static_cast<std::size_t>(
      sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), d.cutoff));
  d.dropped = n - d.kept;
  d.achieved_ratio = static_cast<double>(d.kept) / static_cast<double>(n);
  if (d.kept != k) {
    d.tie_degenerate = true;
    const auto tied = std::equal_range(sorted.begin(), sorted.end(), d.cutoff);
    d.warnings.push_back("tie degeneracy: " + std::to_string(tied.second - tied.first) +
                         " documents share the cutoff score; kept " + std::to_string(d.kept) +
                         " instead of " + std::to_string(k));
  }
  return d;
}

inline SelectionDecision select_cutoff(const ScoreSet& set, double target_ratio) {
  const auto scores = set.all_scores();
  return select_cutoff(scores, target_ratio, set.classifier_id);
}

struct RatioSuggestion {
  double ratio = 1.0;
  bool degenerate = false;
  std::vector<std::string> warnings;
};

/// The labeler's Yes share as the suggested keep ratio.
inline RatioSuggestion default_ratio_from_labels(std::span<const QualityLabel> labels) {
  RatioSuggestion s;
  s.ratio = yes_fraction(labels);
  s.degenerate = is_degenerate_yes_fraction(s.ratio);
  if (s.degenerate) s.warnings.push_back(degenerate_labeler_warning(s.ratio));
  return s;
}

// ---------------------------------------------------------------------------
// Filtering.

struct ShardSelection {
  std::string shard;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::size_t unscorable = 0;
};

struct Manifest {
  SelectionDecision decision;
  std::vector<ShardSelection> shards;
  std::size_t input_documents = 0;
  std::size_t output_documents = 0;
  std::size_t unscorable = 0;
  std::string started_at;
  std::string finished_at;

  nlohmann::json to_json() const {
    nlohmann::json per_shard = nlohmann::json::array();
    for (const auto& s : shards)
      per_shard.push_back({{"shard", s.shard},
                           {"kept", s.kept},
                           {"dropped", s.dropped},
                           {"unscorable", s.unscorable}});
    return {{"cutoff", decision.cutoff},
            {"target_ratio", decision.target_ratio},
            {"achieved_ratio", decision.achieved_ratio},
            {"kept", decision.kept},
            {"dropped", decision.dropped},
            {"classifier_id", decision.classifier_id},
            {"input_documents", input_documents},
            {"output_documents", output_documents},
            {"unscorable", unscorable},
            {"shards", per_shard},
            {"started_at", started_at},
            {"finished_at", finished_at}};
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct FilterResult {
  ShardSet output;
  Manifest manifest;
};

inline constexpr std::string_view kSelectionManifestName = "selection_manifest.json";

/// Writes the kept documents of each input shard to a shard of the same name
/// under out_dir, preserving order. Every scorable document must have a score
/// (fail-fast join); empty-text documents are dropped and counted as
/// unscorable.
inline FilterResult filter_corpus(const ShardSet& shard_set, const ScoreSet& scores,
                                  const SelectionDecision& decision, const fs::path& out_dir,
                                  std::size_t workers = 1, const IngestOptions& options = {}) {
  if (workers == 0) fail(ErrorKind::invalid_argument, "workers must be >= 1");
  FilterResult result;
  result.manifest.started_at = utc_timestamp();
  result.manifest.decision = decision;

  std::unordered_map<std::string, double> by_id;
  by_id.reserve(scores.size());
  for (const auto& shard : scores.shards)
    for (const auto& r : shard.records) by_id.emplace(r.doc_id, r.score);

  auto contents = read_shards_parallel(shard_set, workers, options);
  for (const auto& c : contents) {
    for (const auto& doc : c.documents) {
      if (!doc.text.empty() && !by_id.contains(doc.id))
        fail(ErrorKind::format, "join failure: document " + doc.id + " (shard " + c.shard.name() +
                                    ") has no score");
    }
  }

  fs::create_directories(out_dir);
  result.output.shards.resize(contents.size());
  result.manifest.shards.resize(contents.size());
  parallel_for(contents.size(), workers, [&](std::size_t i) {
    const auto& shard = contents[i].shard;
    const fs::path path = out_dir / shard.name();
    LineWriter out(path, shard.compressed);
    auto& counts = result.manifest.shards[i];
    counts.shard = shard.name();
    for (const auto& doc : contents[i].documents) {
      if (doc.text.empty()) {
        ++counts.unscorable;
        continue;
      }
      if (by_id.at(doc.id) > decision.cutoff) {
        out.write_line(document_to_json(doc).dump());
        ++counts.kept;
      } else {
        ++counts.dropped;
      }
    }
    out.close();
    result.output.shards[i] = {path, shard.compressed, counts.kept};
  });

  auto& m = result.manifest;
  std::size_t dropped = 0;
  for (const auto& s : m.shards) {
    m.output_documents += s.kept;
    dropped += s.dropped;
    m.unscorable += s.unscorable;
  }
  m.input_documents = m.output_documents + dropped + m.unscorable;
  if (m.output_documents != decision.kept || dropped != decision.dropped)
    fail(ErrorKind::format, "selection decision does not match this corpus and score-set (kept " +
                                std::to_string(m.output_documents) + ", decision says " +
                                std::to_string(decision.kept) + ")");
  m.finished_at = utc_timestamp();
  write_text_file(out_dir / kSelectionManifestName, m.to_json().dump(2) + "\n");
  return result;
}

}  // namespace lmds
