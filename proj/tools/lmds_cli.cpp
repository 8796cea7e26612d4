// lmds: command-line front end for the document selection pipeline.
//
//   lmds synth    write a synthetic corpus with planted quality strata
//   lmds sample   reservoir-sample documents and extract snippets
//   lmds label    label snippets through an endpoint or a mock labeler
//   lmds train    distill labels into a quality classifier
//   lmds score    score every corpus document
//   lmds select   choose the cutoff for a target keep ratio
//   lmds filter   write the kept documents and a selection manifest
//   lmds ablate   ratio | capacity | prompt | icl sweeps
//
// Settings come from a JSON config with sections corpus, labeler, distiller,
// selector and ablation; every key is also a flag (--labeler.temperature).
// Flags override the config file. Stages talk to each other only via files.

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lmds/lmds.hpp"

namespace {

using nlohmann::json;
using namespace lmds;

// ---------------------------------------------------------------------------
// Exit codes.

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitEndpoint = 4;
constexpr int kExitDegenerate = 5;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::config:
      return kExitConfig;
    case ErrorKind::io:
    case ErrorKind::format:
      return kExitIo;
    case ErrorKind::endpoint:
      return kExitEndpoint;
    case ErrorKind::degenerate_data:
      return kExitDegenerate;
  }
  return kExitUnexpected;
}

// ---------------------------------------------------------------------------
// Logging.

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };
Level g_level = Level::info;

Level parse_level(const std::string& s) {
  if (s == "error") return Level::error;
  if (s == "warn") return Level::warn;
  if (s == "info") return Level::info;
  if (s == "debug") return Level::debug;
  fail(ErrorKind::config, "unknown log level: " + s);
}

void log(Level level, const std::string& msg) {
  static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
  if (level <= g_level) std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Config file: {"section": {"key": value}} flattened to "section.key" items.

class JsonSectionsConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json root;
    try {
      root = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : root.items()) {
      if (value.is_object()) {
        for (const auto& [name, v] : value.items()) items.push_back(item(key + "." + name, v));
      } else {
        items.push_back(item(key, value));
      }
    }
    return items;
  }

 private:
  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static CLI::ConfigItem item(const std::string& name, const json& v) {
    CLI::ConfigItem it;
    it.name = name;
    if (v.is_array()) {
      for (const auto& e : v) it.inputs.push_back(scalar(e));
    } else {
      it.inputs.push_back(scalar(v));
    }
    return it;
  }
};

// ---------------------------------------------------------------------------
// Run configuration.

struct CorpusSection {
  std::string input;
  std::size_t sample_size = 2000000;
  int token_budget = 1500;
  int chars_per_token = 4;
  bool strict = false;
  std::size_t records_per_shard = 10000;
};

struct LabelerSection {
  LabelerConfig client;
  int backoff_base_ms = 200;
  int request_timeout_ms = 60000;
  std::string prompt_version = "v1";
  std::string icl_demos;
  std::string mock;  // empty: use the HTTP endpoint
};

struct DistillerSection {
  FeaturizerConfig featurizer;
  std::string token_pattern = "alnum";
  TrainConfig train;
  double val_fraction = 0.1;
};

struct SelectorSection {
  std::size_t workers = 1;
  std::string target_ratio = "0.25";
};

struct AblationSection {
  std::vector<double> ratios = kDefaultRatios;
  std::vector<int> hash_bits = kDefaultHashBits;
  std::size_t seeds = 3;
  std::size_t n_docs = 10000;
  double high_quality_fraction = 0.25;
  double signal_strength = 1.0;
  std::string task = "marker_tokens";
  std::size_t num_shards = 4;
  std::vector<std::string> labelers = {"lexical", "version-sensitive:0.05"};
  std::string strong_labeler = "lexical";
  std::string weak_labeler = "fidelity:0.60:0.75";
  std::size_t workers = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_root = "lmds-out";
  std::string log_level = "info";
  CorpusSection corpus;
  LabelerSection labeler;
  DistillerSection distiller;
  SelectorSection selector;
  AblationSection ablation;

  /// Same layout as the config file, so a snapshot can be fed back via --config.
  json to_json() const {
    const auto& c = labeler.client;
    return {{"seed", seed},
            {"output_root", output_root},
            {"log_level", log_level},
            {"corpus",
             {{"input", corpus.input},
              {"sample_size", corpus.sample_size},
              {"token_budget", corpus.token_budget},
              {"chars_per_token", corpus.chars_per_token},
              {"strict", corpus.strict},
              {"records_per_shard", corpus.records_per_shard}}},
            {"labeler",
             {{"endpoint_url", c.endpoint_url},
              {"model_name", c.model_name},
              {"temperature", c.temperature},
              {"max_output_tokens", c.max_output_tokens},
              {"max_concurrent_requests", c.max_concurrent_requests},
              {"max_retries", c.retry.max_retries},
              {"backoff_base_ms", labeler.backoff_base_ms},
              {"request_timeout_ms", labeler.request_timeout_ms},
              {"api_key_env", c.api_key_env},
              {"failure_ceiling", c.failure_ceiling},
              {"prompt_version", prompt_version_upper()},
              {"icl_demos", labeler.icl_demos},
              {"mock", labeler.mock}}},
            {"distiller",
             {{"ngram_orders", distiller.featurizer.ngram_orders},
              {"hash_bits", distiller.featurizer.hash_bits},
              {"lowercase", distiller.featurizer.lowercase},
              {"token_pattern", distiller.token_pattern},
              {"normalize", distiller.featurizer.normalize},
              {"val_fraction", distiller.val_fraction},
              {"max_epochs", distiller.train.max_epochs},
              {"learning_rate", distiller.train.learning_rate},
              {"batch_size", distiller.train.batch_size},
              {"class_weighting", distiller.train.class_weighting},
              {"patience", distiller.train.patience},
              {"l2", distiller.train.l2}}},
            {"selector", {{"workers", selector.workers}, {"target_ratio", selector.target_ratio}}},
            {"ablation",
             {{"ratios", ablation.ratios},
              {"hash_bits", ablation.hash_bits},
              {"seeds", ablation.seeds},
              {"n_docs", ablation.n_docs},
              {"high_quality_fraction", ablation.high_quality_fraction},
              {"signal_strength", ablation.signal_strength},
              {"task", ablation.task},
              {"num_shards", ablation.num_shards},
              {"labelers", ablation.labelers},
              {"strong_labeler", ablation.strong_labeler},
              {"weak_labeler", ablation.weak_labeler},
              {"workers", ablation.workers}}}};
  }

  std::string prompt_version_upper() const { return to_string(parse_prompt_version(labeler.prompt_version)); }

  fs::path root() const { return output_root; }

  SnippetConfig snippet() const {
    SnippetConfig s;
    s.token_budget = static_cast<std::size_t>(corpus.token_budget);
    s.chars_per_token = static_cast<std::size_t>(corpus.chars_per_token);
    return s;
  }

  IngestOptions ingest() const {
    IngestOptions o;
    o.strict = corpus.strict;
    return o;
  }

  LabelerConfig labeler_config() const {
    LabelerConfig c = labeler.client;
    c.retry.backoff_base = std::chrono::milliseconds(labeler.backoff_base_ms);
    c.request_timeout = std::chrono::milliseconds(labeler.request_timeout_ms);
    c.validate();
    return c;
  }

  FeaturizerConfig featurizer() const {
    FeaturizerConfig f = distiller.featurizer;
    f.token_pattern = parse_token_pattern(distiller.token_pattern);
    f.validate();
    return f;
  }

  TrainConfig train() const {
    TrainConfig t = distiller.train;
    t.seed = seed;
    return t;
  }

  SyntheticCorpusSpec synthetic() const {
    SyntheticCorpusSpec s;
    s.n_docs = ablation.n_docs;
    s.high_quality_fraction = ablation.high_quality_fraction;
    s.signal_strength = ablation.signal_strength;
    s.task = parse_signal_task(ablation.task);
    s.seed = seed;
    return s;
  }

  /// Fails early on values that would only surface mid-run.
  void validate() const {
    g_level = parse_level(log_level);
    if (corpus.token_budget < 1 || corpus.chars_per_token < 1)
      fail(ErrorKind::config, "token_budget and chars_per_token must be >= 1");
    if (corpus.records_per_shard < 1) fail(ErrorKind::config, "records_per_shard must be >= 1");
    (void)labeler_config();
    (void)featurizer();
    (void)parse_prompt_version(labeler.prompt_version);
    (void)parse_signal_task(ablation.task);
    if (!(distiller.val_fraction > 0.0 && distiller.val_fraction < 1.0))
      fail(ErrorKind::config, "val_fraction must lie in (0, 1)");
    if (selector.workers < 1 || ablation.workers < 1)
      fail(ErrorKind::config, "workers must be >= 1");
    if (labeler.backoff_base_ms < 0 || labeler.request_timeout_ms < 1)
      fail(ErrorKind::config, "backoff_base_ms must be >= 0 and request_timeout_ms >= 1");
  }
};

void add_config_options(CLI::App& app, RunConfig& rc) {
  app.add_option("--seed", rc.seed, "Global seed");
  app.add_option("--output-root,--output_root", rc.output_root, "Root directory for stage outputs");
  app.add_option("--log-level,--log_level", rc.log_level, "error | warn | info | debug");

  auto& c = rc.corpus;
  app.add_option("--corpus.input", c.input, "Corpus directory or shard file");
  app.add_option("--corpus.sample_size", c.sample_size);
  app.add_option("--corpus.token_budget", c.token_budget);
  app.add_option("--corpus.chars_per_token", c.chars_per_token);
  app.add_option("--corpus.strict", c.strict);
  app.add_option("--corpus.records_per_shard", c.records_per_shard);

  auto& l = rc.labeler;
  app.add_option("--labeler.endpoint_url", l.client.endpoint_url);
  app.add_option("--labeler.model_name", l.client.model_name);
  app.add_option("--labeler.temperature", l.client.temperature);
  app.add_option("--labeler.max_output_tokens", l.client.max_output_tokens);
  app.add_option("--labeler.max_concurrent_requests", l.client.max_concurrent_requests);
  app.add_option("--labeler.max_retries", l.client.retry.max_retries);
  app.add_option("--labeler.backoff_base_ms", l.backoff_base_ms);
  app.add_option("--labeler.request_timeout_ms", l.request_timeout_ms);
  app.add_option("--labeler.api_key_env", l.client.api_key_env);
  app.add_option("--labeler.failure_ceiling", l.client.failure_ceiling);
  app.add_option("--labeler.prompt_version", l.prompt_version);
  app.add_option("--labeler.icl_demos", l.icl_demos);
  app.add_option("--labeler.mock", l.mock);

  auto& d = rc.distiller;
  app.add_option("--distiller.ngram_orders", d.featurizer.ngram_orders);
  app.add_option("--distiller.hash_bits", d.featurizer.hash_bits);
  app.add_option("--distiller.lowercase", d.featurizer.lowercase);
  app.add_option("--distiller.token_pattern", d.token_pattern);
  app.add_option("--distiller.normalize", d.featurizer.normalize);
  app.add_option("--distiller.val_fraction", d.val_fraction);
  app.add_option("--distiller.max_epochs", d.train.max_epochs);
  app.add_option("--distiller.learning_rate", d.train.learning_rate);
  app.add_option("--distiller.batch_size", d.train.batch_size);
  app.add_option("--distiller.class_weighting", d.train.class_weighting);
  app.add_option("--distiller.patience", d.train.patience);
  app.add_option("--distiller.l2", d.train.l2);

  app.add_option("--selector.workers", rc.selector.workers);
  app.add_option("--selector.target_ratio", rc.selector.target_ratio);

  auto& a = rc.ablation;
  app.add_option("--ablation.ratios", a.ratios);
  app.add_option("--ablation.hash_bits", a.hash_bits);
  app.add_option("--ablation.seeds", a.seeds);
  app.add_option("--ablation.n_docs", a.n_docs);
  app.add_option("--ablation.high_quality_fraction", a.high_quality_fraction);
  app.add_option("--ablation.signal_strength", a.signal_strength);
  app.add_option("--ablation.task", a.task);
  app.add_option("--ablation.num_shards", a.num_shards);
  app.add_option("--ablation.labelers", a.labelers);
  app.add_option("--ablation.strong_labeler", a.strong_labeler);
  app.add_option("--ablation.weak_labeler", a.weak_labeler);
  app.add_option("--ablation.workers", a.workers);
}

void write_resolved_config(const fs::path& dir, const RunConfig& rc) {
  fs::create_directories(dir);
  write_text_file(dir / "resolved_config.json", rc.to_json().dump(2) + "\n");
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  write_text_file(path, j.dump(2) + "\n");
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

ShardSet corpus_input(const RunConfig& rc) {
  if (rc.corpus.input.empty()) fail(ErrorKind::config, "corpus.input is not set");
  auto set = ShardSet::discover(rc.corpus.input);
  if (set.empty()) fail(ErrorKind::io, "no *.jsonl or *.jsonl.gz shards under " + rc.corpus.input);
  return set;
}

std::unique_ptr<CompletionBackend> make_backend(const std::string& spec, const RunConfig& rc) {
  if (spec.empty() || spec == "endpoint") return std::make_unique<HttpChatBackend>(rc.labeler_config());
  return make_mock_backend(spec, rc.seed);
}

void log_ingest(const RunSummary& s) {
  log(Level::info, "read " + std::to_string(s.records_read) + " records from " +
                       std::to_string(s.shards) + " shards, skipped " +
                       std::to_string(s.records_skipped));
  for (const auto& reason : s.skip_reasons) log(Level::debug, "skipped: " + reason);
}

// ---------------------------------------------------------------------------
// Commands.

struct Paths {
  std::string out;
  std::string snippets;
  std::string labels;
  std::string model;
  std::string scores;
  std::string decision;
  std::string write_demos;
};

std::string or_default(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback.string() : value;
}

int cmd_synth(const RunConfig& rc, const Paths& p) {
  const fs::path out = or_default(p.out, rc.root() / "corpus");
  const auto corpus = generate_synthetic_corpus(rc.synthetic());
  const auto shards = write_synthetic_corpus(corpus, out, rc.ablation.num_shards);
  log(Level::info, "wrote " + std::to_string(corpus.documents.size()) + " documents (" +
                       std::to_string(corpus.high_quality) + " high quality) in " +
                       std::to_string(shards.size()) + " shards to " + out.string());
  return kExitOk;
}

int cmd_sample(const RunConfig& rc, const Paths& p) {
  const fs::path out = or_default(p.out, rc.root() / "sample");
  DocumentStream stream(corpus_input(rc), rc.ingest());
  const auto docs = reservoir_sample(stream, rc.corpus.sample_size, rc.seed);
  log_ingest(stream.summary());

  std::vector<Snippet> snippets;
  std::size_t empty = 0;
  for (const auto& d : docs) {
    if (d.text.empty()) {
      ++empty;
      continue;
    }
    snippets.push_back(extract_snippet(d, rc.snippet()));
  }
  if (empty > 0) log(Level::warn, "skipped " + std::to_string(empty) + " empty documents");

  fs::create_directories(out);
  {
    LineWriter w(out / "documents.jsonl", false);
    for (const auto& d : docs) w.write_line(document_to_json(d).dump());
    w.close();
  }
  write_snippets(out / "snippets.jsonl", snippets);
  write_resolved_config(out, rc);
  log(Level::info, "sampled " + std::to_string(docs.size()) + " documents, " +
                       std::to_string(snippets.size()) + " snippets to " + out.string());
  return kExitOk;
}

int cmd_label(const RunConfig& rc, const Paths& p) {
  const fs::path out = or_default(p.out, rc.root() / "labels");
  const auto snippets = read_snippets(or_default(p.snippets, rc.root() / "sample" / "snippets.jsonl"));
  const auto tmpl = PromptTemplate::for_version(parse_prompt_version(rc.labeler.prompt_version));
  std::vector<IclDemonstration> demos;
  if (!rc.labeler.icl_demos.empty()) demos = read_demonstrations(rc.labeler.icl_demos);

  auto backend = make_backend(rc.labeler.mock, rc);
  const auto config = rc.labeler_config();
  fs::create_directories(out);
  write_resolved_config(out, rc);

  LabelRun run;
  int code = kExitOk;
  try {
    run = label_documents(snippets, config, tmpl, demos, *backend);
  } catch (const LabelingAborted& e) {
    run = e.partial();
    log(Level::error, e.what());
    code = kExitEndpoint;
  }
  write_labels(out / "labels.jsonl", run.labels);
  write_json(out / "label_stats.json", run.stats.to_json());
  for (const auto& w : run.stats.warnings) log(Level::warn, w);
  log(Level::info, "labeled " + std::to_string(run.stats.labeled) + "/" +
                       std::to_string(run.stats.requested) + ", ambiguous dropped " +
                       std::to_string(run.stats.ambiguous_dropped) + ", transport failures " +
                       std::to_string(run.stats.transport_failures) +
                       (run.stats.yes_fraction ? ", yes_fraction " + fixed4(*run.stats.yes_fraction)
                                               : std::string()));
  if (code == kExitOk && !p.write_demos.empty()) {
    const auto picked = select_demonstrations(snippets, run.labels, rc.seed);
    write_demonstrations(p.write_demos, picked);
    log(Level::info, "wrote 5 demonstrations to " + p.write_demos);
  }
  return code;
}

int cmd_train(const RunConfig& rc, const Paths& p) {
  const fs::path out = or_default(p.out, rc.root() / "model");
  const auto snippets = read_snippets(or_default(p.snippets, rc.root() / "sample" / "snippets.jsonl"));
  const auto labels = read_labels(or_default(p.labels, rc.root() / "labels" / "labels.jsonl"));
  const auto fc = rc.featurizer();
  const auto examples = make_examples(snippets, labels, fc);
  const auto split = split_train_val(examples, rc.distiller.val_fraction, rc.seed);
  const auto model = train_classifier(split.train, split.val, fc, rc.train(), rc.snippet());

  fs::create_directories(out);
  save_model(model, out / "model.lmds");
  write_json(out / "training_report.json", training_report(model));
  write_resolved_config(out, rc);
  log(Level::info, "trained " + classifier_id(model) + ": val_f1 " + fixed4(model.meta.val_f1) +
                       " after " + std::to_string(model.meta.epochs_run) + " epochs (best " +
                       std::to_string(model.meta.epochs) + ")");
  return kExitOk;
}

int cmd_score(const RunConfig& rc, const Paths& p) {
  const fs::path out = or_default(p.out, rc.root() / "scores");
  const auto model = load_model(or_default(p.model, rc.root() / "model" / "model.lmds"));
  const auto run = score_corpus(corpus_input(rc), model, rc.selector.workers, rc.ingest());
  log_ingest(run.ingest);
  write_score_set(out, run.scores);
  write_json(out / "scoring_manifest.json", run.to_json());
  write_resolved_config(out, rc);
  if (run.skipped_empty > 0)
    log(Level::warn, "skipped " + std::to_string(run.skipped_empty) + " empty documents");
  log(Level::info, "scored " + std::to_string(run.scores.size()) + " documents at " +
                       std::to_string(static_cast<long long>(run.docs_per_second())) + " docs/s");
  return kExitOk;
}

int cmd_select(const RunConfig& rc, const Paths& p) {
  const fs::path out = or_default(p.out, rc.root() / "selection");
  const auto scores = read_score_set(or_default(p.scores, rc.root() / "scores"));
  double ratio = 0.0;
  std::vector<std::string> warnings;
  if (rc.selector.target_ratio == "from-labels") {
    const auto labels = read_labels(or_default(p.labels, rc.root() / "labels" / "labels.jsonl"));
    const auto suggestion = default_ratio_from_labels(labels);
    ratio = suggestion.ratio;
    warnings = suggestion.warnings;
    log(Level::info, "target ratio from labels: " + fixed4(ratio));
  } else {
    try {
      std::size_t used = 0;
      ratio = std::stod(rc.selector.target_ratio, &used);
      if (used != rc.selector.target_ratio.size()) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      fail(ErrorKind::config, "target_ratio must be a number in (0, 1] or from-labels, got " +
                                  rc.selector.target_ratio);
    }
  }
  auto decision = select_cutoff(scores, ratio);
  decision.warnings.insert(decision.warnings.begin(), warnings.begin(), warnings.end());
  for (const auto& w : decision.warnings) log(Level::warn, w);
  write_json(out / "decision.json", decision.to_json());
  write_resolved_config(out, rc);
  log(Level::info, "cutoff " + std::to_string(decision.cutoff) + " keeps " +
                       std::to_string(decision.kept) + " of " +
                       std::to_string(decision.kept + decision.dropped) + " (achieved ratio " +
                       fixed4(decision.achieved_ratio) + ")");
  return kExitOk;
}

int cmd_filter(const RunConfig& rc, const Paths& p) {
  const fs::path out = or_default(p.out, rc.root() / "filtered");
  const auto scores = read_score_set(or_default(p.scores, rc.root() / "scores"));
  const auto decision_json =
      json::parse(read_text_file(or_default(p.decision, rc.root() / "selection" / "decision.json")),
                  nullptr, false);
  if (decision_json.is_discarded()) fail(ErrorKind::format, "decision file is not valid JSON");
  const auto decision = SelectionDecision::from_json(decision_json);
  if (decision.classifier_id != scores.classifier_id)
    fail(ErrorKind::format, "decision was made for classifier " + decision.classifier_id +
                                 ", score-set comes from " + scores.classifier_id);
  const auto result =
      filter_corpus(corpus_input(rc), scores, decision, out, rc.selector.workers, rc.ingest());
  write_resolved_config(out, rc);
  log(Level::info, "kept " + std::to_string(result.manifest.output_documents) + " of " +
                       std::to_string(result.manifest.input_documents) + " documents in " +
                       out.string());
  return kExitOk;
}

std::vector<Snippet> ablation_snippets(const RunConfig& rc, const Paths& p) {
  if (!p.snippets.empty()) return read_snippets(p.snippets);
  const auto corpus = generate_synthetic_corpus(rc.synthetic());
  std::vector<Snippet> out;
  out.reserve(corpus.documents.size());
  for (const auto& d : corpus.documents) out.push_back(extract_snippet(d, rc.snippet()));
  return out;
}

int cmd_ablate(const RunConfig& rc, const Paths& p, const std::string& sweep) {
  const fs::path out = or_default(p.out, rc.root() / "reports");
  SweepReport report;
  if (sweep == "ratio") {
    const auto model = load_model(or_default(p.model, rc.root() / "model" / "model.lmds"));
    report = run_ratio_sweep(corpus_input(rc), model, rc.ablation.ratios, rc.ablation.workers);
  } else if (sweep == "capacity") {
    std::vector<LabeledText> data;
    if (!p.labels.empty()) {
      const auto snippets = read_snippets(or_default(p.snippets, rc.root() / "sample" / "snippets.jsonl"));
      std::unordered_map<std::string, const Snippet*> by_id;
      for (const auto& s : snippets) by_id.emplace(s.doc_id, &s);
      for (const auto& l : read_labels(p.labels)) {
        auto it = by_id.find(l.doc_id);
        if (it == by_id.end()) fail(ErrorKind::format, "label for unknown snippet: " + l.doc_id);
        data.push_back({l.doc_id, it->second->text, l.label == Label::Yes ? 1 : 0});
      }
    } else {
      // Multi-n-gram synthetic task labeled by its planted strata.
      auto spec = capacity_task_spec(rc.seed);
      spec.n_docs = rc.ablation.n_docs;
      spec.high_quality_fraction = rc.ablation.high_quality_fraction;
      spec.signal_strength = rc.ablation.signal_strength;
      for (const auto& d : generate_synthetic_corpus(spec).documents)
        data.push_back({d.id, d.text, is_high_quality(d) ? 1 : 0});
    }
    CapacitySweepConfig cfg;
    cfg.hash_bits = rc.ablation.hash_bits;
    cfg.featurizer = rc.featurizer();
    cfg.train = rc.train();
    cfg.seeds = rc.ablation.seeds;
    cfg.val_fraction = rc.distiller.val_fraction;
    cfg.workers = rc.ablation.workers;
    report = run_capacity_sweep(data, cfg);
    if (!report.flags.at("monotone"))
      log(Level::warn, "median F1 is not non-decreasing in hash_bits");
  } else if (sweep == "prompt") {
    const auto snippets = ablation_snippets(rc, p);
    std::vector<std::unique_ptr<CompletionBackend>> owned;
    std::vector<LabelerUnderTest> labelers;
    for (const auto& spec : rc.ablation.labelers) {
      owned.push_back(make_backend(spec, rc));
      labelers.push_back({spec, owned.back().get()});
    }
    report = run_prompt_robustness(snippets, labelers, rc.labeler_config());
  } else if (sweep == "icl") {
    const auto snippets = ablation_snippets(rc, p);
    auto strong = make_backend(rc.ablation.strong_labeler, rc);
    auto weak = make_backend(rc.ablation.weak_labeler, rc);
    std::vector<IclDemonstration> demos;
    if (!rc.labeler.icl_demos.empty()) {
      demos = read_demonstrations(rc.labeler.icl_demos);
    } else {
      const auto reference = label_documents(snippets, rc.labeler_config(),
                                             PromptTemplate::for_version(PromptVersion::V1), {},
                                             *strong);
      demos = select_demonstrations(snippets, reference.labels, rc.seed);
    }
    report = run_icl_comparison(snippets, *strong, *weak, demos, rc.labeler_config(),
                                parse_prompt_version(rc.labeler.prompt_version));
  } else {
    fail(ErrorKind::config, "unknown sweep: " + sweep + " (ratio | capacity | prompt | icl)");
  }
  report.metadata["seed"] = std::to_string(rc.seed);
  const auto files = write_report(out, report, rc.seed);
  write_resolved_config(out, rc);
  std::cout << report.render_table();
  log(Level::info, "wrote " + files.json_path.string() + " and " + files.text_path.string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLM-guided corpus selection: sample, label, distill, score, select, filter."};
  app.name("lmds");
  app.config_formatter(std::make_shared<JsonSectionsConfig>());
  app.set_config("--config", "", "JSON config file with sections corpus, labeler, distiller, selector, ablation");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig rc;
  Paths paths;
  add_config_options(app, rc);

  // Shortcut flags for common settings; applied after parsing so they win
  // over the config file.
  std::optional<std::string> prompt_version, icl_demos, mock, target_ratio, input;
  std::optional<std::size_t> sample_n;
  std::optional<std::size_t> workers;
  std::string sweep;

  auto out_opt = [&](CLI::App* sub, const std::string& what) {
    sub->add_option("--out", paths.out, "Output " + what + " (default under output root)");
  };

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with planted quality strata");
  out_opt(synth, "directory");

  auto* sample = app.add_subcommand("sample", "Reservoir-sample documents and extract snippets");
  out_opt(sample, "directory");
  sample->add_option("--input", input, "Corpus directory or shard (corpus.input)");
  sample->add_option("--n", sample_n, "Sample size (corpus.sample_size)");

  auto* label = app.add_subcommand("label", "Label snippets via the endpoint or a mock");
  out_opt(label, "directory");
  label->add_option("--snippets", paths.snippets, "Snippet file");
  label->add_option("--prompt-version", prompt_version, "v1 | v2 | v3");
  label->add_option("--icl-demos", icl_demos, "File with 5 demonstrations");
  label->add_option("--mock", mock, "Use a mock labeler (default lexical)")
      ->expected(0, 1)
      ->default_str("lexical");
  label->add_option("--write-demos", paths.write_demos, "Also write 5 demonstrations drawn from the labels");

  auto* train = app.add_subcommand("train", "Distill labels into a quality classifier");
  out_opt(train, "directory");
  train->add_option("--snippets", paths.snippets, "Snippet file");
  train->add_option("--labels", paths.labels, "Label file");

  auto* score = app.add_subcommand("score", "Score every corpus document");
  out_opt(score, "score-set directory");
  score->add_option("--input", input, "Corpus directory or shard (corpus.input)");
  score->add_option("--model", paths.model, "Model file");
  score->add_option("--workers", workers, "Worker threads (selector.workers)");

  auto* select = app.add_subcommand("select", "Choose the cutoff for a target keep ratio");
  out_opt(select, "directory");
  select->add_option("--scores", paths.scores, "Score-set directory");
  select->add_option("--labels", paths.labels, "Label file for --target-ratio from-labels");
  select->add_option("--target-ratio", target_ratio, "Keep ratio in (0, 1] or from-labels");

  auto* filter = app.add_subcommand("filter", "Write kept documents and a selection manifest");
  out_opt(filter, "directory");
  filter->add_option("--input", input, "Corpus directory or shard (corpus.input)");
  filter->add_option("--scores", paths.scores, "Score-set directory");
  filter->add_option("--decision", paths.decision, "Decision file from select");
  filter->add_option("--workers", workers, "Worker threads (selector.workers)");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
  out_opt(ablate, "report directory");
  ablate->add_option("sweep", sweep, "ratio | capacity | prompt | icl")->required();
  ablate->add_option("--input", input, "Corpus for the ratio sweep (corpus.input)");
  ablate->add_option("--model", paths.model, "Model for the ratio sweep");
  ablate->add_option("--snippets", paths.snippets, "Snippets (prompt, icl, capacity sweeps)");
  ablate->add_option("--labels", paths.labels, "Labels for the capacity sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (prompt_version) rc.labeler.prompt_version = *prompt_version;
  if (icl_demos) rc.labeler.icl_demos = *icl_demos;
  if (mock) rc.labeler.mock = *mock;
  if (target_ratio) rc.selector.target_ratio = *target_ratio;
  if (input) rc.corpus.input = *input;
  if (sample_n) rc.corpus.sample_size = *sample_n;
  if (workers) {
    rc.selector.workers = *workers;
    rc.ablation.workers = *workers;
  }

  try {
    rc.validate();
    if (*synth) return cmd_synth(rc, paths);
    if (*sample) return cmd_sample(rc, paths);
    if (*label) return cmd_label(rc, paths);
    if (*train) return cmd_train(rc, paths);
    if (*score) return cmd_score(rc, paths);
    if (*select) return cmd_select(rc, paths);
    if (*filter) return cmd_filter(rc, paths);
    if (*ablate) return cmd_ablate(rc, paths, sweep);
  } catch (const Error& e) {
    log(Level::error, std::string(to_string(e.kind())) + ": " + e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    log(Level::error, std::string("io: ") + e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    log(Level::error, std::string("unexpected: ") + e.what());
    return kExitUnexpected;
  }
  return kExitUnexpected;
}
