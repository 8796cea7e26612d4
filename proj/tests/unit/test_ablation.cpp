#include <gtest/gtest.h>

#include <regex>

#include "lmds/ablation.hpp"
#include "lmds/mock_labelers.hpp"
#include "test_support.hpp"

using namespace lmds;
using lmds::testing::TempDir;

namespace {

std::vector<Snippet> synthetic_snippets(std::size_t n, std::uint64_t seed = 0) {
  SyntheticCorpusSpec spec;
  spec.n_docs = n;
  spec.seed = seed;
  std::vector<Snippet> out;
  for (const auto& d : generate_synthetic_corpus(spec).documents) out.push_back(extract_snippet(d));
  return out;
}

LabelerConfig fast_config() {
  LabelerConfig c;
  c.retry.backoff_base = std::chrono::milliseconds(0);
  c.max_concurrent_requests = 4;
  return c;
}

std::vector<IclDemonstration> demos(std::size_t n) {
  std::vector<IclDemonstration> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"demo text " + std::to_string(i), i % 2 ? Label::Yes : Label::No, "mock-lexical"});
  return out;
}

}  // namespace

TEST(Stats, MeanAndSampleStd) {
  // Three-prompt row whose reported spread is the sample deviation:
  // 51.41, 51.34, 50.96 -> 51.24 (0.24).
  const std::vector<double> row = {51.41, 51.34, 50.96};
  const auto [m, s] = mean_std(row);
  EXPECT_NEAR(m, 51.24, 0.005);
  EXPECT_NEAR(s, 0.24, 0.005);
  EXPECT_EQ(mean_std(std::vector<double>{3.0}).second, 0.0);
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_EQ(percent_label(0.25), "25%");
}

TEST(RatioSweep, ReportShapeAndNesting) {
  ScoreSet set;
  set.classifier_id = "qc-test";
  set.shards.push_back({"a.jsonl", {}});
  std::unordered_map<std::string, bool> truth;
  for (int i = 0; i < 100; ++i) {
    const std::string id = "d" + std::to_string(i);
    set.shards[0].records.push_back({id, (i + 0.5) / 100.0, "a.jsonl"});
    truth[id] = i >= 75;  // top quarter is high quality
  }
  std::vector<std::unordered_set<std::string>> kept;
  const auto report = ratio_sweep(set, truth, kDefaultRatios, &kept);
  ASSERT_EQ(report.rows.size(), 6u);
  EXPECT_TRUE(report.flags.at("nested"));
  const auto& r25 = report.row("25%");
  EXPECT_EQ(r25.metric("kept"), 25.0);
  EXPECT_EQ(r25.metric("precision"), 1.0);
  EXPECT_EQ(r25.metric("recall"), 1.0);
  EXPECT_EQ(report.row("50%").metric("precision"), 0.5);
  EXPECT_EQ(report.row("100%").metric("recall"), 1.0);
  ASSERT_EQ(kept.size(), 6u);
  for (std::size_t i = 1; i < kept.size(); ++i)
    for (const auto& id : kept[i - 1]) EXPECT_TRUE(kept[i].contains(id));
  EXPECT_EQ(report.header, kProxyHeader);
}

TEST(RatioSweep, MissingTruthIsAnError) {
  ScoreSet set;
  set.shards.push_back({"a.jsonl", {{"x", 0.5, "a.jsonl"}}});
  EXPECT_THROW(ratio_sweep(set, {}, kDefaultRatios), Error);
}

TEST(CapacitySweep, ShapeAndSaturation) {
  // Unigram markers with six per document: every capacity separates them.
  SyntheticCorpusSpec spec;
  spec.n_docs = 1000;
  spec.markers_per_doc = 6;
  std::vector<LabeledText> data;
  for (const auto& d : generate_synthetic_corpus(spec).documents)
    data.push_back({d.id, d.text, is_high_quality(d) ? 1 : 0});
  CapacitySweepConfig cfg;
  cfg.featurizer.ngram_orders = {1};
  cfg.workers = 3;
  const auto report = run_capacity_sweep(data, cfg);
  ASSERT_EQ(report.rows.size(), 3u);
  EXPECT_EQ(report.rows[0].setting, "2^10");
  for (const auto& r : report.rows) {
    EXPECT_GE(r.metric("median_f1"), 0.95);
    EXPECT_NO_THROW(r.metric("f1_seed2"));
  }
  EXPECT_TRUE(report.flags.at("saturated"));
  EXPECT_NE(report.render_table().find("degenerate"), std::string::npos);
}

TEST(CapacitySweep, NeedsEnoughExamples) {
  std::vector<LabeledText> data(999, {"d", "text", 0});
  try {
    run_capacity_sweep(data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_data);
  }
}

TEST(PromptRobustness, ConstantLabelerAgreesWithItself) {
  const auto sample = synthetic_snippets(200);
  ConstantMockBackend constant("Yes");
  const std::vector<LabelerUnderTest> labelers = {{"constant", &constant}};
  const auto report = run_prompt_robustness(sample, labelers, fast_config());
  ASSERT_EQ(report.rows.size(), 6u);  // three versions, three pairs
  EXPECT_EQ(report.row("V1", "constant").metric("agreement"), 1.0);
  EXPECT_EQ(report.row("V2-V3", "constant").metric("pairwise_agreement"), 1.0);
  ASSERT_EQ(report.aggregates.size(), 2u);
  EXPECT_EQ(report.aggregates[0].metric, "agreement");
  EXPECT_EQ(report.aggregates[0].mean, 1.0);
  EXPECT_EQ(report.aggregates[0].std, 0.0);
  EXPECT_NE(report.render_table().find("Avg. (Std)"), std::string::npos);
  EXPECT_NE(report.render_table().find("1 (0)"), std::string::npos);
}

TEST(PromptRobustness, VersionSensitiveLabelerDisagreesSlightly) {
  const auto sample = synthetic_snippets(2000);
  auto sensitive = make_mock_backend("version-sensitive:0.05", 3);
  LexicalMockBackend lexical;
  const std::vector<LabelerUnderTest> labelers = {{"lexical", &lexical}, {"sensitive", sensitive.get()}};
  const auto report = run_prompt_robustness(sample, labelers, fast_config());
  EXPECT_EQ(report.row("V1", "lexical").metric("agreement"), 1.0);
  const double a = report.row("V1", "sensitive").metric("agreement");
  EXPECT_GT(a, 0.9);
  EXPECT_LT(a, 1.0);
}

TEST(Icl, RequiresFiveDemonstrations) {
  const auto sample = synthetic_snippets(100);
  LexicalMockBackend strong, weak;
  for (std::size_t n : {0u, 4u, 6u}) {
    try {
      run_icl_comparison(sample, strong, weak, demos(n), fast_config());
      FAIL() << n;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
  }
}

TEST(Icl, FewShotImprovesFidelityMock) {
  const auto sample = synthetic_snippets(3000, 2);
  LexicalMockBackend strong;
  auto weak = make_mock_backend("fidelity:0.60:0.75", 4);
  const auto report = run_icl_comparison(sample, strong, *weak, demos(5), fast_config());
  ASSERT_EQ(report.rows.size(), 3u);
  EXPECT_EQ(report.row("0-shot", "strong").metric("agreement_with_strong"), 1.0);
  EXPECT_NEAR(report.row("0-shot", "weak").metric("agreement_with_strong"), 0.60, 0.03);
  EXPECT_NEAR(report.row("5-shot", "weak").metric("agreement_with_strong"), 0.75, 0.03);
  EXPECT_TRUE(report.flags.at("icl_improves"));
}

TEST(Agreement, CountsCommonDocumentsOnly) {
  auto l = [](std::string id, Label v) {
    QualityLabel q;
    q.doc_id = std::move(id);
    q.label = v;
    return q;
  };
  const std::vector<QualityLabel> a = {l("x", Label::Yes), l("y", Label::No), l("z", Label::Yes)};
  const std::vector<QualityLabel> b = {l("y", Label::Yes), l("z", Label::Yes), l("w", Label::No)};
  EXPECT_DOUBLE_EQ(label_agreement(a, b), 0.5);
  EXPECT_THROW(label_agreement(a, std::vector<QualityLabel>{l("q", Label::No)}), Error);
}

TEST(Reports, TextAndJsonCarryTheSameNumbers) {
  SweepReport report;
  report.axis = "demo";
  report.add_row("g", "a", {{"x", 1.0 / 3.0}, {"y", 0.123456}});
  report.add_row("g", "b", {{"x", 2.0}, {"y", 1e-9}});
  report.aggregates.push_back({"g", "x", 1.1667, 1.1785});
  const auto j = report.to_json();
  const auto text = report.render_table();
  for (const auto& row : j["rows"]) {
    for (const auto& [k, v] : row["metrics"].items()) {
      EXPECT_EQ(v.get<double>(), round4(v.get<double>()));
      EXPECT_NE(text.find(format_number(v.get<double>())), std::string::npos) << k;
    }
  }
  EXPECT_EQ(j["rows"][0]["metrics"]["x"], 0.3333);
  EXPECT_NE(text.find("1.1667 (1.1785)"), std::string::npos);
}

TEST(Reports, FileNamesCarryAxisSeedAndTimestamp) {
  TempDir dir;
  SweepReport report;
  report.axis = "selection_ratio";
  report.add_row("", "25%", {{"kept", 3}});
  const auto files = write_report(dir.path(), report, 7);
  const std::regex pattern(R"(selection_ratio-seed7-\d{8}T\d{6}Z\.(json|txt))");
  EXPECT_TRUE(std::regex_match(files.json_path.filename().string(), pattern));
  EXPECT_TRUE(std::regex_match(files.text_path.filename().string(), pattern));
  EXPECT_EQ(nlohmann::json::parse(read_text_file(files.json_path)), report.to_json());
  EXPECT_EQ(read_text_file(files.text_path), report.render_table());
}
