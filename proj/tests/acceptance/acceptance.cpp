// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <thread>

#include "lmds/lmds.hpp"
#include "../unit/test_support.hpp"

using namespace lmds;
using lmds::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::size_t hardware_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

LabelerConfig mock_config() {
  LabelerConfig c;
  c.max_concurrent_requests = 8;
  c.retry.backoff_base = std::chrono::milliseconds(0);
  return c;
}

std::vector<Snippet> snippets_of(const std::vector<Document>& docs) {
  std::vector<Snippet> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(extract_snippet(d));
  return out;
}

/// Precision and recall of the documents in `kept` against planted truth.
std::pair<double, double> kept_precision_recall(const std::vector<Document>& kept,
                                                const std::vector<Document>& all) {
  std::size_t kept_high = 0, total_high = 0;
  for (const auto& d : kept) kept_high += is_high_quality(d) ? 1 : 0;
  for (const auto& d : all) total_high += is_high_quality(d) ? 1 : 0;
  const double p = kept.empty() ? 0.0 : static_cast<double>(kept_high) / static_cast<double>(kept.size());
  const double r = total_high == 0 ? 0.0 : static_cast<double>(kept_high) / static_cast<double>(total_high);
  return {p, r};
}

// 1. sample(2000) -> mock label -> train -> score -> select(0.25) -> filter on
// a 10k planted corpus.
Outcome end_to_end() {
  const auto started = std::chrono::steady_clock::now();
  TempDir dir;
  SyntheticCorpusSpec spec;
  spec.seed = 1;
  const auto corpus = write_synthetic_corpus(generate_synthetic_corpus(spec), dir / "corpus", 8);

  DocumentStream stream(corpus);
  const auto sample = snippets_of(reservoir_sample(stream, 2000, 1));
  LexicalMockBackend labeler;
  const auto labels =
      label_documents(sample, mock_config(), PromptTemplate::for_version(PromptVersion::V1), {}, labeler)
          .labels;
  const FeaturizerConfig fc;
  const auto split = split_train_val(make_examples(sample, labels, fc), 0.1, 1);
  TrainConfig tc;
  tc.seed = 1;
  const auto model = train_classifier(split.train, split.val, fc, tc);
  const auto scores = score_corpus(corpus, model, hardware_workers()).scores;
  const auto decision = select_cutoff(scores, 0.25);
  const auto result = filter_corpus(corpus, scores, decision, dir / "filtered", hardware_workers());

  const auto [p, r] = kept_precision_recall(ingest_shards(result.output), ingest_shards(corpus));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {p >= 0.90 && r >= 0.85 && seconds < 120.0,
          fmt("precision %.4f recall %.4f, %.1f s", p, r, seconds)};
}

// 2. |achieved - target| <= 1/N on distinct scores, nested kept sets.
Outcome ratio_fidelity() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScoreSet set;
  set.shards.push_back({"a.jsonl", {}});
  std::unordered_map<std::string, bool> truth;
  std::set<double> distinct;
  const std::size_t n = 10000;
  while (distinct.size() < n) distinct.insert(u(rng));
  std::vector<double> values(distinct.begin(), distinct.end());
  std::shuffle(values.begin(), values.end(), rng);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "d" + std::to_string(i);
    set.shards[0].records.push_back({id, values[i], "a.jsonl"});
    truth[id] = false;
  }
  std::vector<std::unordered_set<std::string>> kept;
  const auto report = ratio_sweep(set, truth, kDefaultRatios, &kept);
  double worst = 0.0;
  for (std::size_t i = 0; i < kDefaultRatios.size(); ++i) {
    const auto d = select_cutoff(set, kDefaultRatios[i]);
    worst = std::max(worst, std::abs(d.achieved_ratio - kDefaultRatios[i]));
  }
  const bool nested = report.flags.at("nested");
  return {worst <= 1.0 / static_cast<double>(n) && nested,
          fmt("max |achieved - target| %.6f (1/N = %.6f), nested %.0f", worst, 1.0 / n, nested ? 1 : 0)};
}

// 3. from-labels with 25% Yes drops 75% of N = 10,000.
Outcome drop_rule() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<QualityLabel> labels(10000);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i].doc_id = "d" + std::to_string(i);
    labels[i].label = i % 4 == 0 ? Label::Yes : Label::No;
  }
  std::vector<double> scores(10000);
  for (auto& s : scores) s = u(rng);
  const auto suggestion = default_ratio_from_labels(labels);
  const auto d = select_cutoff(scores, suggestion.ratio);
  const double drop = static_cast<double>(d.dropped) / static_cast<double>(scores.size());
  return {std::abs(drop - 0.75) <= 0.01, fmt("ratio %.4f, drop fraction %.4f", suggestion.ratio, drop)};
}

// 4. Median F1 over 3 seeds non-decreasing in hash_bits {10, 14, 18}.
Outcome capacity_ordering() {
  std::vector<LabeledText> data;
  for (const auto& d : generate_synthetic_corpus(capacity_task_spec(4)).documents)
    data.push_back({d.id, d.text, is_high_quality(d) ? 1 : 0});
  CapacitySweepConfig cfg;
  cfg.workers = hardware_workers();
  cfg.train.seed = 4;
  const auto report = run_capacity_sweep(data, cfg);
  std::string medians;
  for (const auto& r : report.rows) medians += (medians.empty() ? "" : " < ") + format_number(r.metric("median_f1"));
  return {report.flags.at("monotone"), "median F1 " + medians};
}

// 5. Gradients, F1 oracle, separable and shuffled training.
Outcome classifier_correctness() {
  // Finite differences.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 0.5);
  std::uniform_int_distribution<std::uint32_t> idx(0, 255);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<SparseVector> inputs;
    std::vector<int> targets;
    for (int i = 0; i < 16; ++i) {
      std::set<std::uint32_t> used;
      while (used.size() < 10) used.insert(idx(rng));
      SparseVector x;
      for (auto k : used) x.push_back({k, normal(rng)});
      inputs.push_back(x);
      targets.push_back(i % 4 == 0);
    }
    std::vector<double> w(256);
    for (auto& v : w) v = normal(rng);
    const double b = normal(rng);
    const auto cw = inverse_frequency_weights(4, 12);
    std::vector<double> gw;
    double gb = 0.0;
    logistic_gradient(w, b, inputs, targets, cw, 0.0, gw, gb);
    const double h = 1e-5;
    for (std::size_t j = 0; j < w.size(); ++j) {
      auto wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      const double num = (logistic_loss(wp, b, inputs, targets, cw) - logistic_loss(wm, b, inputs, targets, cw)) / (2 * h);
      const double denom = std::abs(num) + std::abs(gw[j]);
      if (denom > 1e-9) worst_rel = std::max(worst_rel, std::abs(num - gw[j]) / denom);
    }
  }

  // F1 against a count oracle on every length-4 pair.
  bool f1_exact = true;
  for (int pm = 0; pm < 16; ++pm)
    for (int gm = 0; gm < 16; ++gm) {
      std::vector<int> p(4), g(4);
      int tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < 4; ++i) {
        p[i] = (pm >> i) & 1;
        g[i] = (gm >> i) & 1;
        tp += p[i] && g[i];
        fp += p[i] && !g[i];
        fn += !p[i] && g[i];
      }
      const double oracle = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
      f1_exact = f1_exact && std::abs(f1(p, g) - oracle) < 1e-12;
    }

  // Separable and shuffled training.
  auto train_on = [](bool shuffle, double& chance) {
    SyntheticCorpusSpec spec;
    spec.n_docs = 4000;
    spec.seed = 6;
    const FeaturizerConfig fc;
    std::vector<LabeledExample> ex;
    for (const auto& d : generate_synthetic_corpus(spec).documents)
      ex.push_back({d.id, featurize(d.text, fc), is_high_quality(d) ? 1 : 0});
    if (shuffle) {
      std::vector<int> t;
      for (const auto& e : ex) t.push_back(e.target);
      std::mt19937_64 r(60);
      std::shuffle(t.begin(), t.end(), r);
      for (std::size_t i = 0; i < ex.size(); ++i) ex[i].target = t[i];
    }
    const auto split = split_train_val(ex, 0.25, 6);
    const auto m = train_classifier(split.train, split.val, fc, TrainConfig{});
    const auto preds = detail::predict_all(m, detail::model_inputs(split.val, fc));
    double p = 0.0, q = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      p += split.val[i].target;
      q += preds[i];
    }
    p /= static_cast<double>(preds.size());
    q /= static_cast<double>(preds.size());
    chance = p + q > 0.0 ? 2 * p * q / (p + q) : 0.0;
    return evaluate_f1(m, split.val);
  };
  double unused = 0.0, chance = 0.0;
  const double separable = train_on(false, unused);
  const double shuffled = train_on(true, chance);

  const bool ok = worst_rel <= 1e-4 && f1_exact && separable >= 0.95 && std::abs(shuffled - chance) <= 0.05;
  return {ok, fmt("grad rel err %.2e, separable F1 %.4f, shuffled F1 %.4f vs chance %.4f", worst_rel, separable,
                  shuffled, chance) +
                  (f1_exact ? ", F1 oracle exact" : ", F1 oracle MISMATCH")};
}

// 6. V1 rendering and instruction texts, transcribed from the published prompt figure and table.
Outcome prompt_fidelity() {
  const std::string v1 =
      "[Instruction] In the above we provide a document snippet. The start and end of the snippet may "
      "contain only a partial word, as we sliced at the character level. Is the document snippet "
      "educational and engaging for a college student studying a STEM subject or the humanities? "
      "Answer with \"Yes\" or \"No\" without any additional comments.";
  const std::string v2 =
      "[Instruction] In the above we provide a document snippet. The start and end of the snippet may "
      "contain only a partial word, as we sliced at the character level. Does the document look like it "
      "would be helpful for a STEM or Humanities student who is struggling with their course? Answer "
      "with \"Yes\" or \"No\" without any additional comments.";
  const std::string v3 =
      "[Instruction] In the above we provide a document snippet. The start and end of the snippet may "
      "contain only a partial word, as we sliced at the character level. Does the document look like it "
      "would be educational and helpful for a STEM or Humanities student to help understanding material "
      "from their course? Answer with \"Yes\" or \"No\" without any additional comments.";
  const auto tmpl = PromptTemplate::for_version(PromptVersion::V1);
  const std::string figure = "[Document]\n\nI am a document.\n\n" + v1;
  const std::string figure_literal = "[Document]\n\n<I am a document.>\n\n" + v1;
  const bool rendered = build_prompt({"d", "I am a document.", 0, 0, 0}, tmpl) == figure &&
                        build_prompt({"d", "<I am a document.>", 0, 0, 0}, tmpl) == figure_literal;
  const bool table = "[Instruction] " + instruction_text(PromptVersion::V1) == v1 &&
                     "[Instruction] " + instruction_text(PromptVersion::V2) == v2 &&
                     "[Instruction] " + instruction_text(PromptVersion::V3) == v3;
  return {rendered && table, std::string("figure rendering ") + (rendered ? "byte-equal" : "DIFFERS") +
                                 ", V1-V3 instructions " + (table ? "byte-equal" : "DIFFER")};
}

// 7. 1 vs 4 workers, and reruns of every seeded stage.
Outcome determinism() {
  TempDir dir;
  SyntheticCorpusSpec spec;
  spec.n_docs = 3000;
  spec.seed = 7;
  const auto docs = generate_synthetic_corpus(spec);
  const bool synth_same = generate_synthetic_corpus(spec).documents == docs.documents;
  const auto corpus = write_synthetic_corpus(docs, dir / "corpus", 6);

  auto sample_once = [&] {
    DocumentStream s(corpus);
    return snippets_of(reservoir_sample(s, 600, 7));
  };
  const auto sample = sample_once();
  const bool sample_same = sample_once() == sample;

  LexicalMockBackend lexical;
  auto label_once = [&] {
    return label_documents(sample, mock_config(), PromptTemplate::for_version(PromptVersion::V1), {}, lexical).labels;
  };
  const auto labels = label_once();
  const bool labels_same = label_once() == labels;

  FeaturizerConfig fc;
  fc.hash_bits = 14;
  TrainConfig tc;
  tc.seed = 7;
  auto train_once = [&] {
    const auto split = split_train_val(make_examples(sample, labels, fc), 0.1, 7);
    return train_classifier(split.train, split.val, fc, tc);
  };
  const auto model = train_once();
  const bool model_same = serialize_model(train_once()) == serialize_model(model);

  const auto s1 = score_corpus(corpus, model, 1).scores;
  const auto s4 = score_corpus(corpus, model, 4).scores;
  write_score_set(dir / "s1", s1);
  write_score_set(dir / "s4", s4);
  auto any = [](const std::string&) { return true; };
  const bool scores_same = lmds::testing::directory_bytes(dir / "s1", any) ==
                           lmds::testing::directory_bytes(dir / "s4", any);
  const auto decision = select_cutoff(s1, 0.25);
  filter_corpus(corpus, s1, decision, dir / "f1", 1);
  filter_corpus(corpus, s4, decision, dir / "f4", 4);
  auto shards = [](const std::string& n) { return n.ends_with(".jsonl"); };
  const bool filtered_same = lmds::testing::directory_bytes(dir / "f1", shards) ==
                             lmds::testing::directory_bytes(dir / "f4", shards);

  const bool ok = synth_same && sample_same && labels_same && model_same && scores_same && filtered_same;
  std::string detail;
  for (auto [name, same] : {std::pair{"synth", synth_same}, {"sample", sample_same}, {"labels", labels_same},
                            {"model", model_same}, {"scores 1v4", scores_same}, {"filter 1v4", filtered_same}})
    detail += std::string(detail.empty() ? "" : ", ") + name + (same ? " identical" : " DIFFERENT");
  return {ok, detail};
}

// 8. A 98%-Yes labeler raises the diagnostic and the ratio rule reports 0.98.
Outcome degenerate_labeler() {
  SyntheticCorpusSpec spec;
  spec.seed = 8;
  const auto sample = snippets_of(generate_synthetic_corpus(spec).documents);
  BiasedMockBackend biased(0.98, 8);
  const auto run = label_documents(sample, mock_config(), PromptTemplate::for_version(PromptVersion::V1), {}, biased);
  const auto suggestion = default_ratio_from_labels(run.labels);
  bool warned = false;
  for (const auto& w : run.stats.warnings) warned = warned || w.find("degenerate") != std::string::npos;
  const bool ok = warned && suggestion.degenerate && std::abs(suggestion.ratio - 0.98) <= 0.01;
  return {ok, fmt("yes_fraction %.4f, suggested ratio %.4f", run.stats.yes_fraction.value_or(0.0), suggestion.ratio) +
                  (warned ? ", warning raised" : ", NO warning")};
}

// 9. Fidelity mock: agreement 0.60 at 0-shot, 0.75 at 5-shot, N = 10,000.
Outcome icl_proxy() {
  SyntheticCorpusSpec spec;
  spec.seed = 9;
  const auto sample = snippets_of(generate_synthetic_corpus(spec).documents);
  LexicalMockBackend strong;
  FidelityMockBackend weak(0.60, 0.75, 9);
  const auto reference =
      label_documents(sample, mock_config(), PromptTemplate::for_version(PromptVersion::V1), {}, strong).labels;
  const auto demos = select_demonstrations(sample, reference, 9);
  const auto report = run_icl_comparison(sample, strong, weak, demos, mock_config());
  const double a0 = report.row("0-shot", "weak").metric("agreement_with_strong");
  const double a5 = report.row("5-shot", "weak").metric("agreement_with_strong");
  const bool ok = a5 > a0 && std::abs(a0 - 0.60) <= 0.02 && std::abs(a5 - 0.75) <= 0.02;
  return {ok, fmt("agreement 0-shot %.4f, 5-shot %.4f", a0, a5)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"end-to-end pipeline", end_to_end},
      {"ratio fidelity", ratio_fidelity},
      {"drop-rule consistency", drop_rule},
      {"capacity ordering", capacity_ordering},
      {"classifier correctness", classifier_correctness},
      {"prompt fidelity", prompt_fidelity},
      {"determinism and parallel safety", determinism},
      {"degenerate-labeler detection", degenerate_labeler},
      {"ICL proxy", icl_proxy},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed;
}
