#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lmds/corpus_io.hpp"
#include "lmds/error.hpp"
#include "lmds/featurizer.hpp"
#include "lmds/hash.hpp"
#include "lmds/labeler.hpp"

namespace lmds {

/// Scores are clamped to [kScoreEpsilon, 1 - kScoreEpsilon].
inline constexpr double kScoreEpsilon = 1e-7;

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double score_from_logit(double z) {
  if (std::isnan(z)) z = 0.0;
  return std::clamp(sigmoid(z), kScoreEpsilon, 1.0 - kScoreEpsilon);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// ---------------------------------------------------------------------------
// F1.

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(std::span<const int> preds, std::span<const int> gold) {
  if (preds.size() != gold.size())
    fail(ErrorKind::invalid_argument, "f1: prediction and gold lengths differ");
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] != 0;
    const bool g = gold[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Positive-class F1 = 2PR / (P + R); 0 when P + R = 0.
inline double f1(std::span<const int> preds, std::span<const int> gold) {
  if (preds.empty()) fail(ErrorKind::invalid_argument, "f1: empty input");
  const Confusion c = confusion(preds, gold);
  const double p = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double r = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------------------
// Examples and splits.

struct LabeledExample {
  std::string doc_id;
  SparseVector features;  // raw counts
  int target = 0;         // Yes -> 1, No -> 0
};

/// Joins labels to snippets by doc_id and featurizes. Labels without a
/// snippet are an error.
inline std::vector<LabeledExample> make_examples(std::span<const Snippet> snippets,
                                                 std::span<const QualityLabel> labels,
                                                 const FeaturizerConfig& config) {
  std::unordered_map<std::string, const Snippet*> by_id;
  for (const auto& s : snippets) by_id.emplace(s.doc_id, &s);
  std::vector<LabeledExample> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    auto it = by_id.find(l.doc_id);
    if (it == by_id.end()) fail(ErrorKind::format, "label for unknown snippet: " + l.doc_id);
    out.push_back({l.doc_id, featurize(it->second->text, config), l.label == Label::Yes ? 1 : 0});
  }
  return out;
}

struct Split {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> val;
};

/// Stratified, seed-deterministic split. The validation size is
/// round(val_fraction * N), apportioned to classes by largest remainder.
/// Both halves keep the input order.
inline Split split_train_val(std::span<const LabeledExample> examples, double val_fraction,
                             std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    fail(ErrorKind::invalid_argument, "val_fraction must lie in (0, 1)");
  if (examples.size() < 10)
    fail(ErrorKind::invalid_argument, "need at least 10 examples to split");

  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < examples.size(); ++i)
    by_class[examples[i].target != 0 ? 1 : 0].push_back(i);

  const auto n = static_cast<double>(examples.size());
  const auto total_val = static_cast<std::size_t>(std::llround(val_fraction * n));
  double quota[2];
  std::size_t take[2];
  for (int c = 0; c < 2; ++c) {
    quota[c] = val_fraction * static_cast<double>(by_class[c].size());
    take[c] = static_cast<std::size_t>(std::floor(quota[c]));
  }
  while (take[0] + take[1] < total_val) {
    const double r0 = take[0] < by_class[0].size() ? quota[0] - static_cast<double>(take[0]) : -1.0;
    const double r1 = take[1] < by_class[1].size() ? quota[1] - static_cast<double>(take[1]) : -1.0;
    if (r0 < 0.0 && r1 < 0.0) break;
    ++take[r1 >= r0 ? 1 : 0];
  }

  std::mt19937_64 rng(seed);
  std::vector<char> is_val(examples.size(), 0);
  for (int c = 0; c < 2; ++c) {
    auto idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < take[c]; ++k) is_val[idx[k]] = 1;
  }
  Split split;
  for (std::size_t i = 0; i < examples.size(); ++i)
    (is_val[i] ? split.val : split.train).push_back(examples[i]);
  return split;
}

// ---------------------------------------------------------------------------
// Logistic loss.

struct ClassWeights {
  double negative = 1.0;
  double positive = 1.0;

  double of(int target) const { return target != 0 ? positive : negative; }
};

/// w_c = N / (2 * n_c).
inline ClassWeights inverse_frequency_weights(std::size_t positives, std::size_t negatives) {
  const auto n = static_cast<double>(positives + negatives);
  return {n / (2.0 * static_cast<double>(negatives)), n / (2.0 * static_cast<double>(positives))};
}

inline double dot(std::span<const double> w, const SparseVector& x) {
  double s = 0.0;
  for (const auto& e : x) s += w[e.index] * e.value;
  return s;
}

/// d(loss_i)/d(logit) for one example: cw_y * (sigmoid(z) - y).
inline double logit_gradient(double z, int target, const ClassWeights& cw) {
  return cw.of(target) * (sigmoid(z) - static_cast<double>(target));
}

/// Mean class-weighted logistic loss plus (l2 / 2) * ||w||^2.
inline double logistic_loss(std::span<const double> w, double b, std::span<const SparseVector> inputs,
                            std::span<const int> targets, const ClassWeights& cw, double l2 = 0.0) {
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double z = dot(w, inputs[i]) + b;
    total += cw.of(targets[i]) * (softplus(z) - static_cast<double>(targets[i]) * z);
  }
  double reg = 0.0;
  if (l2 > 0.0)
    for (double v : w) reg += v * v;
  return total / static_cast<double>(inputs.size()) + 0.5 * l2 * reg;
}

/// Analytic gradient of logistic_loss.
inline void logistic_gradient(std::span<const double> w, double b, std::span<const SparseVector> inputs,
                              std::span<const int> targets, const ClassWeights& cw, double l2,
                              std::vector<double>& grad_w, double& grad_b) {
  grad_w.assign(w.size(), 0.0);
  grad_b = 0.0;
  const double scale = 1.0 / static_cast<double>(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double g = logit_gradient(dot(w, inputs[i]) + b, targets[i], cw) * scale;
    for (const auto& e : inputs[i]) grad_w[e.index] += g * e.value;
    grad_b += g;
  }
  if (l2 > 0.0)
    for (std::size_t j = 0; j < w.size(); ++j) grad_w[j] += l2 * w[j];
}

// ---------------------------------------------------------------------------
// Model.

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs = 0;      // epoch whose weights were kept (1-based)
  int epochs_run = 0;
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  ClassWeights class_weights;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  double val_f1 = 0.0;
  double yes_fraction_train = 0.0;
};

inline nlohmann::json to_json(const TrainingMeta& m) {
  return {{"seed", m.seed},
          {"epochs", m.epochs},
          {"epochs_run", m.epochs_run},
          {"learning_rate", m.learning_rate},
          {"batch_size", m.batch_size},
          {"class_weights", {m.class_weights.negative, m.class_weights.positive}},
          {"train_size", m.train_size},
          {"val_size", m.val_size},
          {"val_f1", m.val_f1},
          {"yes_fraction_train", m.yes_fraction_train}};
}

inline TrainingMeta training_meta_from_json(const nlohmann::json& j) {
  TrainingMeta m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.epochs = j.at("epochs").get<int>();
  m.epochs_run = j.at("epochs_run").get<int>();
  m.learning_rate = j.at("learning_rate").get<double>();
  m.batch_size = j.at("batch_size").get<std::size_t>();
  const auto cw = j.at("class_weights").get<std::vector<double>>();
  if (cw.size() != 2) fail(ErrorKind::format, "class_weights must have two entries");
  m.class_weights = {cw[0], cw[1]};
  m.train_size = j.at("train_size").get<std::size_t>();
  m.val_size = j.at("val_size").get<std::size_t>();
  m.val_f1 = j.at("val_f1").get<double>();
  m.yes_fraction_train = j.at("yes_fraction_train").get<double>();
  return m;
}

/// Hashed n-gram linear model with a sigmoid head. Immutable once trained;
/// safe to share across scoring threads.
struct QualityClassifier {
  static constexpr std::uint32_t kFormatVersion = 1;

  FeaturizerConfig featurizer;
  SnippetConfig snippet;
  std::vector<double> weights;
  double bias = 0.0;
  TrainingMeta meta;

  static QualityClassifier zeros(FeaturizerConfig featurizer, SnippetConfig snippet = {}) {
    featurizer.validate();
    QualityClassifier m;
    m.weights.assign(featurizer.dimension(), 0.0);
    m.featurizer = std::move(featurizer);
    m.snippet = snippet;
    return m;
  }

  SparseVector inputs(std::string_view text) const {
    auto counts = featurize(text, featurizer);
    return featurizer.normalize ? l2_normalized(std::move(counts)) : counts;
  }

  double logit(const SparseVector& model_inputs) const { return dot(weights, model_inputs) + bias; }

  double score_text(std::string_view text) const {
    if (text.empty()) fail(ErrorKind::invalid_argument, "cannot score an empty snippet");
    return score_from_logit(logit(inputs(text)));
  }

  double score(const Snippet& s) const { return score_text(s.text); }

  /// Scores the document's snippet under the model's snippet configuration.
  double score(const Document& doc) const { return score(extract_snippet(doc, snippet)); }
};

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  std::uint64_t seed = 0;
  int max_epochs = 20;
  double learning_rate = 0.5;
  std::size_t batch_size = 8;
  bool class_weighting = true;
  int patience = 3;
  double l2 = 0.0;
};

namespace detail {
inline std::vector<int> predict_all(const QualityClassifier& m, std::span<const SparseVector> inputs) {
  std::vector<int> preds(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) preds[i] = m.logit(inputs[i]) > 0.0 ? 1 : 0;
  return preds;
}

inline std::vector<SparseVector> model_inputs(std::span<const LabeledExample> examples,
                                              const FeaturizerConfig& fc) {
  std::vector<SparseVector> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(fc.normalize ? l2_normalized(e.features) : e.features);
  return out;
}
}  // namespace detail

/// Mini-batch SGD on the class-weighted logistic loss with early stopping on
/// validation F1. The kept weights are those of the best epoch (ties go to
/// the earlier epoch). Deterministic for a fixed seed.
inline QualityClassifier train_classifier(std::span<const LabeledExample> train,
                                          std::span<const LabeledExample> val,
                                          const FeaturizerConfig& featurizer,
                                          const TrainConfig& config,
                                          const SnippetConfig& snippet = {}) {
  if (train.empty()) fail(ErrorKind::degenerate_data, "empty training set");
  if (val.empty()) fail(ErrorKind::degenerate_data, "empty validation set");
  if (config.batch_size == 0 || config.max_epochs < 1 || !(config.learning_rate > 0.0))
    fail(ErrorKind::config, "batch_size, max_epochs and learning_rate must be positive");

  std::size_t positives = 0;
  for (const auto& e : train) positives += e.target != 0 ? 1 : 0;
  const std::size_t negatives = train.size() - positives;
  if (positives == 0 || negatives == 0)
    fail(ErrorKind::degenerate_data, "degenerate label distribution");

  QualityClassifier model = QualityClassifier::zeros(featurizer, snippet);
  const std::size_t dim = model.weights.size();
  for (const auto& set : {train, val})
    for (const auto& e : set)
      for (const auto& f : e.features)
        if (f.index >= dim) fail(ErrorKind::invalid_argument, "feature index exceeds hash dimension");

  const ClassWeights cw = config.class_weighting ? inverse_frequency_weights(positives, negatives)
                                                 : ClassWeights{};
  const auto train_inputs = detail::model_inputs(train, featurizer);
  const auto val_inputs = detail::model_inputs(val, featurizer);
  std::vector<int> train_targets(train.size());
  std::vector<int> val_targets(val.size());
  for (std::size_t i = 0; i < train.size(); ++i) train_targets[i] = train[i].target != 0 ? 1 : 0;
  for (std::size_t i = 0; i < val.size(); ++i) val_targets[i] = val[i].target != 0 ? 1 : 0;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(dim, 0.0);
  std::vector<char> is_touched(dim, 0);
  std::vector<std::uint32_t> touched;

  std::vector<double> best_weights = model.weights;
  double best_bias = 0.0;
  double best_f1 = -1.0;
  int best_epoch = 0;
  int epochs_run = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double step = config.learning_rate / static_cast<double>(end - start);
      double grad_b = 0.0;
      touched.clear();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const double g = logit_gradient(model.logit(train_inputs[i]), train_targets[i], cw);
        for (const auto& e : train_inputs[i]) {
          if (!is_touched[e.index]) {
            is_touched[e.index] = 1;
            touched.push_back(e.index);
          }
          grad[e.index] += g * e.value;
        }
        grad_b += g;
      }
      for (std::uint32_t j : touched) {
        model.weights[j] -= step * (grad[j] + config.l2 * model.weights[j]);
        grad[j] = 0.0;
        is_touched[j] = 0;
      }
      model.bias -= step * grad_b;
    }
    epochs_run = epoch;

    const double val_f1 = f1(detail::predict_all(model, val_inputs), val_targets);
    if (val_f1 > best_f1) {
      best_f1 = val_f1;
      best_epoch = epoch;
      best_weights = model.weights;
      best_bias = model.bias;
    } else if (epoch - best_epoch >= config.patience) {
      break;
    }
  }

  model.weights = std::move(best_weights);
  model.bias = best_bias;
  model.meta = {config.seed,
                best_epoch,
                epochs_run,
                config.learning_rate,
                config.batch_size,
                cw,
                train.size(),
                val.size(),
                best_f1,
                static_cast<double>(positives) / static_cast<double>(train.size())};
  return model;
}

/// F1 of `model` on examples, thresholding the score at 0.5.
inline double evaluate_f1(const QualityClassifier& model, std::span<const LabeledExample> examples) {
  const auto inputs = detail::model_inputs(examples, model.featurizer);
  std::vector<int> gold(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) gold[i] = examples[i].target != 0 ? 1 : 0;
  return f1(detail::predict_all(model, inputs), gold);
}

// ---------------------------------------------------------------------------
// Model file:
//   "LMDSQCLF" | u32 format_version | u64 header_len | header JSON |
//   f64 weights[weight_count] | u64 FNV-1a of everything before it
// All integers and doubles little-endian.

inline constexpr std::string_view kModelMagic = "LMDSQCLF";

namespace detail {
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_uint(std::string_view in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]))
         << (8 * i);
  return v;
}
}  // namespace detail

inline std::string serialize_model(const QualityClassifier& m) {
  const nlohmann::json header = {{"featurizer", to_json(m.featurizer)},
                                 {"snippet",
                                  {{"token_budget", m.snippet.token_budget},
                                   {"chars_per_token", m.snippet.chars_per_token}}},
                                 {"bias", m.bias},
                                 {"weight_count", m.weights.size()},
                                 {"training_meta", to_json(m.meta)}};
  const std::string header_text = header.dump();
  std::string out(kModelMagic);
  detail::put_u32(out, QualityClassifier::kFormatVersion);
  detail::put_u64(out, header_text.size());
  out += header_text;
  for (double w : m.weights) detail::put_u64(out, std::bit_cast<std::uint64_t>(w));
  detail::put_u64(out, fnv1a(out));
  return out;
}

inline QualityClassifier deserialize_model(std::string_view bytes) {
  auto corrupt = [](const std::string& why) { fail(ErrorKind::format, "corrupt model file: " + why); };
  if (bytes.size() < kModelMagic.size() + 4 + 8 + 8 || !bytes.starts_with(kModelMagic))
    corrupt("bad magic or truncated header");
  std::size_t pos = kModelMagic.size();
  const auto version = static_cast<std::uint32_t>(detail::get_uint(bytes, pos, 4));
  pos += 4;
  if (version != QualityClassifier::kFormatVersion)
    fail(ErrorKind::format, "unsupported model format version " + std::to_string(version) +
                                " (expected " + std::to_string(QualityClassifier::kFormatVersion) + ")");
  const std::uint64_t header_len = detail::get_uint(bytes, pos, 8);
  pos += 8;
  if (header_len > bytes.size() - pos) corrupt("truncated header");
  auto header = nlohmann::json::parse(bytes.substr(pos, header_len), nullptr, false);
  if (header.is_discarded()) corrupt("unreadable header");
  pos += header_len;

  QualityClassifier m;
  std::size_t count = 0;
  try {
    m.featurizer = featurizer_from_json(header.at("featurizer"));
    m.snippet.token_budget = header.at("snippet").at("token_budget").get<std::size_t>();
    m.snippet.chars_per_token = header.at("snippet").at("chars_per_token").get<std::size_t>();
    m.bias = header.at("bias").get<double>();
    count = header.at("weight_count").get<std::size_t>();
    m.meta = training_meta_from_json(header.at("training_meta"));
  } catch (const nlohmann::json::exception& e) {
    corrupt(e.what());
  } catch (const Error& e) {
    corrupt(e.what());
  }
  if (count != m.featurizer.dimension()) corrupt("weight count does not match hash_bits");
  if (bytes.size() - pos != count * 8 + 8) corrupt("truncated or oversized weight block");
  m.weights.resize(count);
  for (std::size_t i = 0; i < count; ++i, pos += 8)
    m.weights[i] = std::bit_cast<double>(detail::get_uint(bytes, pos, 8));
  if (detail::get_uint(bytes, pos, 8) != fnv1a(bytes.substr(0, pos))) corrupt("checksum mismatch");
  return m;
}

inline void save_model(const QualityClassifier& m, const fs::path& path) {
  write_text_file(path, serialize_model(m));
}

inline QualityClassifier load_model(const fs::path& path) {
  return deserialize_model(read_text_file(path));
}

/// Content hash of the serialized model; stamped on score-sets and manifests.
inline std::string classifier_id(const QualityClassifier& m) {
  return "qc-" + to_hex(fnv1a(serialize_model(m)));
}

inline nlohmann::json training_report(const QualityClassifier& m) {
  return {{"train_size", m.meta.train_size},
          {"val_size", m.meta.val_size},
          {"val_f1", m.meta.val_f1},
          {"epochs_run", m.meta.epochs_run},
          {"best_epoch", m.meta.epochs},
          {"yes_fraction_train", m.meta.yes_fraction_train},
          {"hash_bits", m.featurizer.hash_bits},
          {"classifier_id", classifier_id(m)}};
}

}  // namespace lmds
