#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lmds/classifier.hpp"
#include "lmds/corpus_io.hpp"
#include "lmds/labeler.hpp"
#include "lmds/parallel.hpp"
#include "lmds/selector.hpp"
#include "lmds/synthetic.hpp"

namespace lmds {

inline constexpr std::string_view kProxyHeader =
    "Proxy metrics: downstream LLM pretraining and benchmark evaluation are replaced by "
    "label-level and kept-set-level measurements (F1, agreement, precision/recall against "
    "planted truth).";

inline const std::vector<double> kDefaultRatios = {0.20, 0.25, 0.30, 0.40, 0.50, 1.00};
inline const std::vector<int> kDefaultHashBits = {10, 14, 18};

/// Report values are rounded to 4 decimals so the structured and the text
/// renderings carry the same numbers.
inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct SweepRow {
  std::string group;
  std::string setting;
  std::vector<std::pair<std::string, double>> metrics;

  double metric(std::string_view name) const {
    for (const auto& [k, v] : metrics)
      if (k == name) return v;
    fail(ErrorKind::invalid_argument, "no metric " + std::string(name) + " in row " + setting);
  }
};

struct SweepAggregate {
  std::string group;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
};

struct SweepReport {
  std::string axis;
  std::string header = std::string(kProxyHeader);
  std::vector<SweepRow> rows;
  std::vector<SweepAggregate> aggregates;
  std::map<std::string, std::string> metadata;
  std::map<std::string, bool> flags;
  std::vector<std::string> notes;

  void add_row(std::string group, std::string setting,
               std::vector<std::pair<std::string, double>> metrics) {
    for (auto& [k, v] : metrics) v = round4(v);
    rows.push_back({std::move(group), std::move(setting), std::move(metrics)});
  }

  const SweepRow& row(std::string_view setting, std::string_view group = {}) const {
    for (const auto& r : rows)
      if (r.setting == setting && r.group == group) return r;
    fail(ErrorKind::invalid_argument, "no row " + std::string(setting));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["axis"] = axis;
    j["header"] = header;
    j["metadata"] = metadata;
    j["flags"] = flags;
    j["notes"] = notes;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json metrics = nlohmann::json::object();
      for (const auto& [k, v] : r.metrics) metrics[k] = v;
      j["rows"].push_back({{"group", r.group}, {"setting", r.setting}, {"metrics", metrics}});
    }
    j["aggregates"] = nlohmann::json::array();
    for (const auto& a : aggregates)
      j["aggregates"].push_back(
          {{"group", a.group}, {"metric", a.metric}, {"mean", a.mean}, {"std", a.std}});
    return j;
  }

  /// Column-aligned table. Aggregates print as "mean (std)".
  std::string render_table() const {
    std::vector<std::string> columns;
    for (const auto& r : rows)
      for (const auto& [k, v] : r.metrics)
        if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);

    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head = {"group", "setting"};
    head.insert(head.end(), columns.begin(), columns.end());
    cells.push_back(head);
    for (const auto& r : rows) {
      std::vector<std::string> line = {r.group.empty() ? "-" : r.group, r.setting};
      for (const auto& c : columns) {
        auto it = std::find_if(r.metrics.begin(), r.metrics.end(),
                               [&](const auto& kv) { return kv.first == c; });
        line.push_back(it == r.metrics.end() ? "-" : format_number(it->second));
      }
      cells.push_back(std::move(line));
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& line : cells)
      for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());

    std::string out = "# " + axis + " sweep\n# " + header + "\n";
    for (const auto& [k, v] : metadata) out += "# " + k + ": " + v + "\n";
    for (const auto& line : cells) {
      for (std::size_t i = 0; i < line.size(); ++i) {
        out += line[i];
        if (i + 1 < line.size()) out += std::string(width[i] - line[i].size() + 2, ' ');
      }
      out += '\n';
    }
    if (!aggregates.empty()) {
      out += "\nAvg. (Std)\n";
      for (const auto& a : aggregates)
        out += (a.group.empty() ? "-" : a.group) + "  " + a.metric + "  " + format_number(a.mean) +
               " (" + format_number(a.std) + ")\n";
    }
    for (const auto& [k, v] : flags) out += "flag " + k + ": " + (v ? "true" : "false") + "\n";
    for (const auto& n : notes) out += "note: " + n + "\n";
    return out;
  }
};

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
inline std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                      static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size() - 1))};
}

inline double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorKind::invalid_argument, "median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline std::string percent_label(double ratio) {
  return std::to_string(static_cast<int>(std::lround(ratio * 100.0))) + "%";
}

// ---------------------------------------------------------------------------
// Selection-ratio sweep.

/// Kept-set precision and recall against per-document truth for each ratio.
/// `kept_sets`, when given, receives the kept ids per ratio.
inline SweepReport ratio_sweep(const ScoreSet& scores,
                               const std::unordered_map<std::string, bool>& is_high,
                               std::span<const double> ratios,
                               std::vector<std::unordered_set<std::string>>* kept_sets = nullptr) {
  SweepReport report;
  report.axis = "selection_ratio";
  report.metadata["classifier_id"] = scores.classifier_id;
  report.metadata["documents"] = std::to_string(scores.size());
  std::size_t total_high = 0;
  for (const auto& shard : scores.shards)
    for (const auto& r : shard.records) {
      auto it = is_high.find(r.doc_id);
      if (it == is_high.end()) fail(ErrorKind::format, "no ground truth for " + r.doc_id);
      total_high += it->second ? 1 : 0;
    }

  std::vector<double> sorted_ratios(ratios.begin(), ratios.end());
  std::sort(sorted_ratios.begin(), sorted_ratios.end());
  std::vector<std::unordered_set<std::string>> kept(sorted_ratios.size());
  for (std::size_t i = 0; i < sorted_ratios.size(); ++i) {
    const auto decision = select_cutoff(scores, sorted_ratios[i]);
    std::size_t kept_high = 0;
    for (const auto& shard : scores.shards)
      for (const auto& r : shard.records)
        if (r.score > decision.cutoff) {
          kept[i].insert(r.doc_id);
          kept_high += is_high.at(r.doc_id) ? 1 : 0;
        }
    const double precision =
        decision.kept == 0 ? 0.0 : static_cast<double>(kept_high) / static_cast<double>(decision.kept);
    const double recall =
        total_high == 0 ? 0.0 : static_cast<double>(kept_high) / static_cast<double>(total_high);
    report.add_row("", percent_label(sorted_ratios[i]),
                   {{"target_ratio", sorted_ratios[i]},
                    {"achieved_ratio", decision.achieved_ratio},
                    {"kept", static_cast<double>(decision.kept)},
                    {"cutoff", decision.cutoff},
                    {"precision", precision},
                    {"recall", recall}});
  }
  bool nested = true;
  for (std::size_t i = 1; i < kept.size(); ++i)
    for (const auto& id : kept[i - 1])
      if (!kept[i].contains(id)) nested = false;
  report.flags["nested"] = nested;
  report.notes.push_back(
      "Reference finding (not asserted here): downstream quality improved as the ratio shrank "
      "toward 25% and degraded with overly aggressive pruning at 20%.");
  if (kept_sets != nullptr) *kept_sets = std::move(kept);
  return report;
}

/// Scores the corpus and runs ratio_sweep against the planted stratum.
inline SweepReport run_ratio_sweep(const ShardSet& corpus, const QualityClassifier& classifier,
                                   std::span<const double> ratios = kDefaultRatios,
                                   std::size_t workers = 1) {
  const auto run = score_corpus(corpus, classifier, workers);
  std::unordered_map<std::string, bool> truth;
  for (const auto& doc : ingest_shards(corpus)) truth.emplace(doc.id, is_high_quality(doc));
  return ratio_sweep(run.scores, truth, ratios);
}

// ---------------------------------------------------------------------------
// Classifier-capacity sweep.

struct LabeledText {
  std::string doc_id;
  std::string text;
  int target = 0;
};

struct CapacitySweepConfig {
  std::vector<int> hash_bits = kDefaultHashBits;
  FeaturizerConfig featurizer;  // hash_bits overridden per point
  TrainConfig train;
  std::size_t seeds = 3;        // seeds train.seed, train.seed + 1, ...
  double val_fraction = 0.1;
  std::size_t workers = 1;
};

inline constexpr std::size_t kMinCapacityExamples = 1000;

/// Validation F1 per capacity (median over seeds). Flags whether medians are
/// non-decreasing in hash_bits and whether every capacity saturates (>= 0.95).
inline SweepReport run_capacity_sweep(std::span<const LabeledText> data,
                                      const CapacitySweepConfig& config = {}) {
  if (data.size() < kMinCapacityExamples)
    fail(ErrorKind::degenerate_data, "capacity sweep needs at least 1000 labeled examples, got " +
                                         std::to_string(data.size()));
  if (config.seeds == 0 || config.hash_bits.empty())
    fail(ErrorKind::config, "capacity sweep needs at least one seed and one capacity");

  const std::size_t points = config.hash_bits.size() * config.seeds;
  std::vector<double> f1s(points, 0.0);
  parallel_for(points, config.workers, [&](std::size_t p) {
    const std::size_t b = p / config.seeds;
    const std::uint64_t seed = config.train.seed + p % config.seeds;
    FeaturizerConfig fc = config.featurizer;
    fc.hash_bits = config.hash_bits[b];
    fc.validate();
    std::vector<LabeledExample> examples;
    examples.reserve(data.size());
    for (const auto& d : data) examples.push_back({d.doc_id, featurize(d.text, fc), d.target});
    const auto split = split_train_val(examples, config.val_fraction, seed);
    TrainConfig tc = config.train;
    tc.seed = seed;
    f1s[p] = train_classifier(split.train, split.val, fc, tc).meta.val_f1;
  });

  SweepReport report;
  report.axis = "classifier_capacity";
  report.metadata["examples"] = std::to_string(data.size());
  report.metadata["seeds"] = std::to_string(config.seeds);
  report.metadata["base_seed"] = std::to_string(config.train.seed);
  std::vector<double> medians;
  for (std::size_t b = 0; b < config.hash_bits.size(); ++b) {
    std::vector<std::pair<std::string, double>> metrics = {
        {"hash_bits", static_cast<double>(config.hash_bits[b])}};
    std::vector<double> per_seed;
    for (std::size_t s = 0; s < config.seeds; ++s) {
      per_seed.push_back(f1s[b * config.seeds + s]);
      metrics.emplace_back("f1_seed" + std::to_string(s), per_seed.back());
    }
    const double med = median(per_seed);
    medians.push_back(round4(med));
    metrics.emplace_back("median_f1", med);
    report.add_row("", "2^" + std::to_string(config.hash_bits[b]), std::move(metrics));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < medians.size(); ++i) monotone = monotone && medians[i] >= medians[i - 1];
  report.flags["monotone"] = monotone;
  report.flags["saturated"] =
      std::all_of(medians.begin(), medians.end(), [](double m) { return m >= 0.95; });
  if (report.flags["saturated"])
    report.notes.push_back("All capacities reach F1 >= 0.95; the ordering is degenerate.");
  report.notes.push_back(
      "Reference ordering for transformer distillation targets: F1 0.78 (85M) < 0.81 (302M) < "
      "0.84 (1B); hash_bits is the capacity stand-in, values are not comparable.");
  return report;
}

// ---------------------------------------------------------------------------
// Label agreement studies.

/// Fraction of documents labeled by both runs that received the same label.
inline double label_agreement(std::span<const QualityLabel> a, std::span<const QualityLabel> b) {
  std::unordered_map<std::string, Label> by_id;
  for (const auto& l : a) by_id.emplace(l.doc_id, l.label);
  std::size_t common = 0;
  std::size_t same = 0;
  for (const auto& l : b) {
    auto it = by_id.find(l.doc_id);
    if (it == by_id.end()) continue;
    ++common;
    same += it->second == l.label ? 1 : 0;
  }
  if (common == 0) fail(ErrorKind::degenerate_data, "label runs share no documents");
  return static_cast<double>(same) / static_cast<double>(common);
}

struct LabelerUnderTest {
  std::string name;
  CompletionBackend* backend = nullptr;
};

/// Labels the sample under each prompt version per labeler and reports
/// yes_fraction, pairwise agreement and Avg. (Std) across versions.
inline SweepReport run_prompt_robustness(std::span<const Snippet> sample,
                                         std::span<const LabelerUnderTest> labelers,
                                         const LabelerConfig& config,
                                         std::span<const PromptVersion> versions = kAllPromptVersions) {
  SweepReport report;
  report.axis = "prompt_robustness";
  report.metadata["documents"] = std::to_string(sample.size());
  report.notes.push_back(
      "Agreement is measured on labels; the reference study measured agreement of downstream "
      "accuracy across prompts, which is out of reach here.");
  for (const auto& labeler : labelers) {
    std::vector<std::vector<QualityLabel>> runs;
    for (PromptVersion v : versions)
      runs.push_back(label_documents(sample, config, PromptTemplate::for_version(v), {},
                                     *labeler.backend)
                         .labels);
    std::vector<double> yes, agreement;
    for (std::size_t i = 0; i < versions.size(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < versions.size(); ++j)
        if (i != j) sum += label_agreement(runs[i], runs[j]);
      const double mean_agree =
          versions.size() > 1 ? sum / static_cast<double>(versions.size() - 1) : 1.0;
      yes.push_back(runs[i].empty() ? 0.0 : yes_fraction(runs[i]));
      agreement.push_back(mean_agree);
      report.add_row(labeler.name, to_string(versions[i]),
                     {{"labeled", static_cast<double>(runs[i].size())},
                      {"yes_fraction", yes.back()},
                      {"agreement", mean_agree}});
    }
    for (std::size_t i = 0; i < versions.size(); ++i)
      for (std::size_t j = i + 1; j < versions.size(); ++j)
        report.add_row(labeler.name, to_string(versions[i]) + "-" + to_string(versions[j]),
                       {{"pairwise_agreement", label_agreement(runs[i], runs[j])}});
    for (auto [name, values] : {std::pair{"agreement", &agreement}, std::pair{"yes_fraction", &yes}}) {
      std::vector<double> rounded;
      for (double v : *values) rounded.push_back(round4(v));
      const auto [m, s] = mean_std(rounded);
      report.aggregates.push_back({labeler.name, name, round4(m), round4(s)});
    }
  }
  return report;
}

/// Weak labeler at 0-shot and 5-shot against a stronger reference labeler.
inline SweepReport run_icl_comparison(std::span<const Snippet> sample, CompletionBackend& strong,
                                      CompletionBackend& weak,
                                      std::span<const IclDemonstration> demos,
                                      const LabelerConfig& config,
                                      PromptVersion version = PromptVersion::V1) {
  if (demos.size() != kIclShots)
    fail(ErrorKind::invalid_argument,
         "ICL comparison needs exactly 5 demonstrations, got " + std::to_string(demos.size()));
  const auto tmpl = PromptTemplate::for_version(version);
  const auto reference = label_documents(sample, config, tmpl, {}, strong).labels;
  const auto zero = label_documents(sample, config, tmpl, {}, weak).labels;
  const auto few = label_documents(sample, config, tmpl, demos, weak).labels;

  SweepReport report;
  report.axis = "icl";
  report.metadata["documents"] = std::to_string(sample.size());
  report.metadata["strong_labeler"] = strong.id();
  report.metadata["weak_labeler"] = weak.id();
  auto yf = [](const std::vector<QualityLabel>& l) { return l.empty() ? 0.0 : yes_fraction(l); };
  report.add_row("strong", "0-shot", {{"yes_fraction", yf(reference)}, {"agreement_with_strong", 1.0}});
  const double a0 = label_agreement(zero, reference);
  const double a5 = label_agreement(few, reference);
  report.add_row("weak", "0-shot", {{"yes_fraction", yf(zero)}, {"agreement_with_strong", a0}});
  report.add_row("weak", "5-shot", {{"yes_fraction", yf(few)}, {"agreement_with_strong", a5}});
  report.flags["icl_improves"] = a5 >= a0;
  report.notes.push_back(
      "Reference context (not reproducible here): a 7B labeler improved downstream CoreEN(All) "
      "from 48.13 to 48.80 with 5 demonstrations from the 70B labeler, still below the 70B "
      "labeler's 51.41.");
  return report;
}

// ---------------------------------------------------------------------------
// Report files.

struct ReportFiles {
  fs::path json_path;
  fs::path text_path;
};

/// Writes "<axis>-seed<seed>-<UTC timestamp>.{json,txt}" under dir.
inline ReportFiles write_report(const fs::path& dir, const SweepReport& report, std::uint64_t seed) {
  std::string stamp = utc_timestamp();
  std::erase(stamp, ':');
  std::erase(stamp, '-');
  const std::string base = report.axis + "-seed" + std::to_string(seed) + "-" + stamp;
  ReportFiles files{dir / (base + ".json"), dir / (base + ".txt")};
  write_text_file(files.json_path, report.to_json().dump(2) + "\n");
  write_text_file(files.text_path, report.render_table());
  return files;
}

}  // namespace lmds
