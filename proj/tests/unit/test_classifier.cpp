#include <gtest/gtest.h>

#include <random>
#include <set>

#include "lmds/classifier.hpp"
#include "lmds/synthetic.hpp"
#include "test_support.hpp"

using namespace lmds;

namespace {

/// Direct count-based F1 oracle, written independently of lmds::f1.
double f1_oracle(const std::vector<int>& p, const std::vector<int>& g) {
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    tp += p[i] && g[i];
    fp += p[i] && !g[i];
    fn += !p[i] && g[i];
  }
  if (tp == 0) return 0.0;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

std::vector<LabeledExample> corpus_examples(const SyntheticCorpusSpec& spec, const FeaturizerConfig& fc,
                                            bool shuffle_targets = false) {
  const auto corpus = generate_synthetic_corpus(spec);
  std::vector<LabeledExample> out;
  for (const auto& d : corpus.documents)
    out.push_back({d.id, featurize(extract_snippet(d, {}).text, fc), is_high_quality(d) ? 1 : 0});
  if (shuffle_targets) {
    std::vector<int> t;
    for (const auto& e : out) t.push_back(e.target);
    std::mt19937_64 rng(spec.seed + 99);
    std::shuffle(t.begin(), t.end(), rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].target = t[i];
  }
  return out;
}

std::vector<LabeledExample> toy_examples(std::size_t n, std::size_t positives) {
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"e" + std::to_string(i), {{static_cast<std::uint32_t>(i % 7), 1.0}}, i < positives ? 1 : 0});
  return out;
}

}  // namespace

TEST(F1, MatchesOracleOnAllLength4Pairs) {
  for (int pm = 0; pm < 16; ++pm) {
    for (int gm = 0; gm < 16; ++gm) {
      std::vector<int> p(4), g(4);
      for (int i = 0; i < 4; ++i) {
        p[i] = (pm >> i) & 1;
        g[i] = (gm >> i) & 1;
      }
      EXPECT_DOUBLE_EQ(f1(p, g), f1_oracle(p, g)) << pm << " " << gm;
    }
  }
}

TEST(F1, HandComputedExample) {
  // TP=2, FP=1, FN=1: precision 2/3, recall 2/3.
  const std::vector<int> p = {1, 1, 1, 0, 0};
  const std::vector<int> g = {1, 1, 0, 1, 0};
  EXPECT_NEAR(f1(p, g), 2.0 / 3.0, 1e-12);
  const auto c = confusion(p, g);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 1u);
}

TEST(F1, RejectsLengthMismatch) {
  const std::vector<int> a = {1, 0}, b = {1};
  EXPECT_THROW(f1(a, b), Error);
}

TEST(Split, StratifiedSizes) {
  const auto ex = toy_examples(100, 25);
  const auto s = split_train_val(ex, 0.1, 4);
  ASSERT_EQ(s.val.size(), 10u);
  std::size_t pos = 0;
  for (const auto& e : s.val) pos += e.target;
  EXPECT_GE(pos, 2u);
  EXPECT_LE(pos, 3u);
}

TEST(Split, DeterministicPartition) {
  const auto ex = toy_examples(200, 37);
  const auto a = split_train_val(ex, 0.2, 11);
  const auto b = split_train_val(ex, 0.2, 11);
  auto ids = [](const std::vector<LabeledExample>& v) {
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(e.doc_id);
    return out;
  };
  EXPECT_EQ(ids(a.val), ids(b.val));
  EXPECT_NE(ids(a.val), ids(split_train_val(ex, 0.2, 12).val));
  std::set<std::string> all;
  for (const auto& id : ids(a.train)) all.insert(id);
  for (const auto& id : ids(a.val)) EXPECT_TRUE(all.insert(id).second) << "overlap " << id;
  EXPECT_EQ(all.size(), ex.size());
  EXPECT_THROW(split_train_val(ex, 0.0, 1), Error);
  EXPECT_THROW(split_train_val(ex, 1.0, 1), Error);
}

TEST(Logistic, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal(0.0, 0.5);
  std::uniform_int_distribution<std::uint32_t> idx(0, 255);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<SparseVector> inputs;
    std::vector<int> targets;
    for (int i = 0; i < 20; ++i) {
      std::set<std::uint32_t> used;
      while (used.size() < 10) used.insert(idx(rng));
      SparseVector x;
      for (auto u : used) x.push_back({u, normal(rng)});
      inputs.push_back(x);
      targets.push_back(i % 3 == 0 ? 1 : 0);
    }
    std::vector<double> w(256);
    for (auto& v : w) v = normal(rng);
    double b = normal(rng);
    const ClassWeights cw = inverse_frequency_weights(7, 13);
    const double l2 = trial % 2 ? 0.01 : 0.0;

    std::vector<double> gw;
    double gb = 0.0;
    logistic_gradient(w, b, inputs, targets, cw, l2, gw, gb);

    const double h = 1e-5;
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n)); };
    for (std::size_t j = 0; j < w.size(); j += 5) {
      auto wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      const double num = (logistic_loss(wp, b, inputs, targets, cw, l2) -
                          logistic_loss(wm, b, inputs, targets, cw, l2)) / (2 * h);
      if (std::abs(num) < 1e-9 && std::abs(gw[j]) < 1e-9) continue;
      EXPECT_LE(rel(gw[j], num), 1e-4) << "w[" << j << "]";
    }
    const double num_b = (logistic_loss(w, b + h, inputs, targets, cw, l2) -
                          logistic_loss(w, b - h, inputs, targets, cw, l2)) / (2 * h);
    EXPECT_LE(rel(gb, num_b), 1e-4);
  }
}

TEST(Scores, ZeroWeightsScoreOneHalf) {
  const auto m = QualityClassifier::zeros(FeaturizerConfig{});
  EXPECT_DOUBLE_EQ(m.score_text("anything at all"), 0.5);
  EXPECT_THROW(m.score_text(""), Error);
}

TEST(Scores, ClampedAndNanSafe) {
  EXPECT_DOUBLE_EQ(score_from_logit(1000.0), 1.0 - kScoreEpsilon);
  EXPECT_DOUBLE_EQ(score_from_logit(-1000.0), kScoreEpsilon);
  EXPECT_DOUBLE_EQ(score_from_logit(std::nan("")), 0.5);
  for (double z = -50; z <= 50; z += 0.5) {
    const double s = score_from_logit(z);
    EXPECT_GE(s, kScoreEpsilon);
    EXPECT_LE(s, 1.0 - kScoreEpsilon);
  }
}

TEST(Scores, PositiveRescalingPreservesDecisions) {
  FeaturizerConfig fc;
  fc.hash_bits = 10;
  auto m = QualityClassifier::zeros(fc);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (auto& w : m.weights) w = normal(rng);
  m.bias = 0.3;
  auto scaled = m;
  for (auto& w : scaled.weights) w *= 3.7;
  scaled.bias *= 3.7;
  for (const char* t : {"alpha beta", "gamma delta epsilon", "one two three four", "x"})
    EXPECT_EQ(m.score_text(t) > 0.5, scaled.score_text(t) > 0.5) << t;
}

TEST(Training, SeparableDataIsLearned) {
  SyntheticCorpusSpec spec;
  spec.n_docs = 3000;
  spec.seed = 1;
  const FeaturizerConfig fc;
  const auto split = split_train_val(corpus_examples(spec, fc), 0.2, 1);
  const auto m = train_classifier(split.train, split.val, fc, TrainConfig{});
  EXPECT_GE(evaluate_f1(m, split.val), 0.95);
  EXPECT_GE(m.meta.epochs, 1);
  EXPECT_LE(m.meta.epochs, m.meta.epochs_run);
}

TEST(Training, ShuffledLabelsGiveChanceF1) {
  SyntheticCorpusSpec spec;
  spec.n_docs = 4000;
  spec.seed = 2;
  const FeaturizerConfig fc;
  const auto split = split_train_val(corpus_examples(spec, fc, true), 0.25, 2);
  const auto m = train_classifier(split.train, split.val, fc, TrainConfig{});
  // Independent predictions with positive rate q against gold rate p give
  // expected F1 = 2pq / (p + q).
  const auto preds = detail::predict_all(m, detail::model_inputs(split.val, fc));
  double p = 0.0, q = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p += split.val[i].target;
    q += preds[i];
  }
  p /= static_cast<double>(preds.size());
  q /= static_cast<double>(preds.size());
  const double chance = 2 * p * q / (p + q);
  EXPECT_NEAR(evaluate_f1(m, split.val), chance, 0.05);
}

TEST(Training, DegenerateLabelsAreRejected) {
  auto ex = toy_examples(50, 50);
  try {
    train_classifier(ex, ex, FeaturizerConfig{}, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_data);
    EXPECT_NE(std::string(e.what()).find("degenerate label distribution"), std::string::npos);
  }
  EXPECT_THROW(train_classifier({}, ex, FeaturizerConfig{}, TrainConfig{}), Error);
}

TEST(Training, DeterministicForFixedSeed) {
  SyntheticCorpusSpec spec;
  spec.n_docs = 600;
  spec.seed = 3;
  FeaturizerConfig fc;
  fc.hash_bits = 12;
  const auto split = split_train_val(corpus_examples(spec, fc), 0.2, 3);
  TrainConfig tc;
  tc.seed = 9;
  const auto a = train_classifier(split.train, split.val, fc, tc);
  const auto b = train_classifier(split.train, split.val, fc, tc);
  EXPECT_EQ(serialize_model(a), serialize_model(b));
}

TEST(ModelFile, RoundTripIsBitIdentical) {
  SyntheticCorpusSpec spec;
  spec.n_docs = 400;
  FeaturizerConfig fc;
  fc.hash_bits = 10;
  const auto split = split_train_val(corpus_examples(spec, fc), 0.2, 0);
  const auto m = train_classifier(split.train, split.val, fc, TrainConfig{});
  lmds::testing::TempDir dir;
  save_model(m, dir.path() / "m.lmds");
  const auto loaded = load_model(dir.path() / "m.lmds");
  EXPECT_EQ(loaded.weights, m.weights);
  EXPECT_EQ(loaded.bias, m.bias);
  EXPECT_EQ(loaded.featurizer, m.featurizer);
  EXPECT_EQ(serialize_model(loaded), serialize_model(m));
  EXPECT_EQ(classifier_id(loaded), classifier_id(m));
  for (const auto& d : generate_synthetic_corpus(spec).documents)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(loaded.score(d)), std::bit_cast<std::uint64_t>(m.score(d)));
}

TEST(ModelFile, CorruptionIsDetected) {
  FeaturizerConfig fc;
  fc.hash_bits = 8;
  auto m = QualityClassifier::zeros(fc);
  m.weights[3] = 1.25;
  const auto bytes = serialize_model(m);

  auto expect_format_error = [](std::string_view b, const std::string& needle) {
    try {
      deserialize_model(b);
      FAIL() << "expected failure containing " << needle;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::format);
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_format_error(std::string_view(bytes).substr(0, bytes.size() - 1), "corrupt model file");
  expect_format_error(std::string_view(bytes).substr(0, 10), "corrupt model file");
  auto bumped = bytes;
  bumped[kModelMagic.size()] = 2;
  expect_format_error(bumped, "unsupported model format version 2");
  auto flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x01;
  expect_format_error(flipped, "checksum mismatch");
  expect_format_error("garbage", "corrupt model file");
}

TEST(ModelFile, TrainingReportFields) {
  const auto m = QualityClassifier::zeros(FeaturizerConfig{});
  const auto r = training_report(m);
  for (const char* key : {"train_size", "val_size", "val_f1", "epochs_run", "hash_bits", "classifier_id"})
    EXPECT_TRUE(r.contains(key)) << key;
  EXPECT_TRUE(r["classifier_id"].get<std::string>().starts_with("qc-"));
}
