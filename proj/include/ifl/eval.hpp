#pragma once

// Downstream evaluation: frozen-embedding linear probe, purity metrics of
// the discovered positive pairs (label agreement and supervised-encoder
// similarity), and the similarity-rearrangement audit that quantifies how
// often non-augmented pairs beat the augmented diagonal.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ifl/augment.hpp"
#include "ifl/contrastive.hpp"
#include "ifl/encoder.hpp"
#include "ifl/graph.hpp"
#include "ifl/grad_check.hpp"

namespace ifl {

struct ProbeConfig {
  int epochs = 300;
  double lr = 1e-2;
  int repeats = 3;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  std::vector<double> accuracies;  // test accuracy per repeat
  double mean = 0.0;
  double stddev = 0.0;
  std::uint64_t split_seed = 0;
  ProbeConfig config;
};

struct SupervisedConfig {
  int hidden_dim = 64;
  int epochs = 200;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

struct PurityReport {
  std::optional<double> same_class_ratio;  // null when the set is empty
  std::optional<double> sup_sim;
  std::size_t set_size = 0;
  int round = -1;
};

struct BiasAudit {
  Tensor s_prime;            // N x N: diagonal first, rest sorted descending per row
  Tensor excerpt;            // first 1 + top_k columns of s_prime
  double exceed_fraction = 0.0;  // rows whose best off-diagonal beats the diagonal
};

namespace detail {

inline double masked_accuracy(const Tensor& logits, const std::vector<int>& labels,
                              const std::vector<int>& mask) {
  if (mask.empty()) throw DataError("accuracy: empty split");
  int hits = 0;
  for (int i : mask) {
    int best = 0;
    for (int c = 1; c < logits.cols(); ++c)
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(mask.size());
}

struct ProbeRun {
  double best_valid_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Multinomial logistic regression on frozen embeddings: full-batch Adam on
// the train mask, checkpoint selection by validation accuracy.
inline ProbeRun run_probe_once(const Tensor& embeddings, const std::vector<int>& labels,
                               int num_classes, const SplitMasks& masks, std::uint64_t seed,
                               int epochs, double lr) {
  if (masks.train.empty() || masks.valid.empty() || masks.test.empty())
    throw DataError("linear_probe: empty split");
  Rng rng(mix_seed(seed, 0x9c0be5u));
  Tensor w = glorot_uniform(embeddings.cols(), num_classes, rng);
  Tensor bias(1, num_classes);
  Optimizer opt(OptimizerKind::Adam, {lr});

  Tensor best_w = w.detached_copy(), best_bias = bias.detached_copy();
  double best_valid = -1.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Tape tape;
    Tensor wt = tape.var(w), bt = tape.var(bias);
    Tensor logits = add_rowvec(matmul(embeddings, wt), bt);
    Tensor loss = masked_softmax_xent(logits, labels, masks.train);
    if (!std::isfinite(scalar_value(loss)))
      throw NumericError("linear_probe: non-finite loss at epoch " + std::to_string(epoch));
    tape.backward(loss);
    opt.step({&w, &bias}, {tape.grad(wt), tape.grad(bt)});

    const Tensor eval_logits = add_rowvec(matmul(embeddings, w), bias);
    const double valid = masked_accuracy(eval_logits, labels, masks.valid);
    if (valid > best_valid) {
      best_valid = valid;
      best_w = w.detached_copy();
      best_bias = bias.detached_copy();
    }
  }
  const Tensor final_logits = add_rowvec(matmul(embeddings, best_w), best_bias);
  return {best_valid, masked_accuracy(final_logits, labels, masks.test)};
}

}  // namespace detail

// Repeats differ only in the classifier's init seed.
inline ProbeResult linear_probe(const Tensor& embeddings, const std::vector<int>& labels,
                                int num_classes, const SplitMasks& masks, ProbeConfig cfg) {
  if (cfg.repeats < 1) throw std::invalid_argument("linear_probe: repeats must be >= 1");
  if (static_cast<int>(labels.size()) != embeddings.rows())
    throw DataError("linear_probe: labels do not match embeddings");
  ProbeResult result;
  result.config = cfg;
  result.split_seed = masks.seed;
  for (int r = 0; r < cfg.repeats; ++r) {
    const auto run = detail::run_probe_once(embeddings, labels, num_classes, masks,
                                            mix_seed(cfg.seed, static_cast<std::uint64_t>(r)),
                                            cfg.epochs, cfg.lr);
    result.accuracies.push_back(run.test_accuracy);
  }
  double sum = 0.0;
  for (double a : result.accuracies) sum += a;
  result.mean = sum / result.accuracies.size();
  double var = 0.0;
  for (double a : result.accuracies) var += (a - result.mean) * (a - result.mean);
  result.stddev = std::sqrt(var / result.accuracies.size());
  return result;
}

// Best validation accuracy of a single probe run; used for checkpoint
// selection during training.
inline double probe_validation_accuracy(const Tensor& embeddings, const std::vector<int>& labels,
                                        int num_classes, const SplitMasks& masks,
                                        std::uint64_t seed, int epochs = 300, double lr = 1e-2) {
  return detail::run_probe_once(embeddings, labels, num_classes, masks, seed, epochs, lr)
      .best_valid_accuracy;
}

// Fraction of discovered pairs whose two nodes share a label; null on empty.
inline std::optional<double> same_class_ratio(const SampleSets& sets,
                                              const std::vector<int>& labels) {
  if (sets.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (const PairRef& p : sets.pairs) {
    if (p.i < 0 || p.i >= static_cast<int>(labels.size()) || p.j < 0 ||
        p.j >= static_cast<int>(labels.size()))
      throw DataError("same_class_ratio: pair index outside label range");
    if (labels[p.i] == labels[p.j]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

// Supervised GCN trained with softmax cross-entropy; its output logits serve
// as the reference representations for the audit metrics.
inline EncoderParams train_supervised(const Graph& g, const SupervisedConfig& cfg,
                                      const std::vector<int>* train_mask = nullptr) {
  if (!g.labels) throw DataError("train_supervised: dataset has no labels");
  const int num_classes = *g.num_classes;
  std::vector<int> all_nodes;
  if (!train_mask) {
    all_nodes.resize(g.num_nodes);
    for (int i = 0; i < g.num_nodes; ++i) all_nodes[i] = i;
    train_mask = &all_nodes;
  }
  const SparseMatrix a_norm = normalize_adjacency(g);
  EncoderParams params =
      init_params(g.feature_dim(), cfg.hidden_dim, num_classes, mix_seed(cfg.seed, 0x50bu));
  Optimizer opt(OptimizerKind::Adam, {cfg.lr});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape tape;
    Tensor w1 = tape.var(params.w1), w2 = tape.var(params.w2);
    Tensor logits = encode(w1, w2, a_norm, g.features);
    Tensor loss = masked_softmax_xent(logits, *g.labels, *train_mask);
    if (!std::isfinite(scalar_value(loss)))
      throw NumericError("train_supervised: non-finite loss at epoch " + std::to_string(epoch));
    tape.backward(loss);
    opt.step({&params.w1, &params.w2}, {tape.grad(w1), tape.grad(w2)});
  }
  return params;
}

// Mean cosine of the discovered pairs with a pre-trained supervised encoder
// (lets callers reuse one encoder across rounds); null on empty sets.
inline std::optional<double> sup_sim_with(const SampleSets& sets, const Graph& g,
                                          const EncoderParams& params) {
  if (sets.empty()) return std::nullopt;
  const Tensor h = encode(params, normalize_adjacency(g), g.features);
  const int d = h.cols();
  std::vector<double> norms(g.num_nodes);
  for (int i = 0; i < g.num_nodes; ++i) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) acc += h.at(i, k) * h.at(i, k);
    norms[i] = std::sqrt(acc) + 1e-12;
  }
  double total = 0.0;
  for (const PairRef& p : sets.pairs) {
    double dot = 0.0;
    for (int k = 0; k < d; ++k) dot += h.at(p.i, k) * h.at(p.j, k);
    total += dot / (norms[p.i] * norms[p.j]);
  }
  return total / static_cast<double>(sets.size());
}

// Mean cosine similarity of the discovered pairs under a freshly trained
// supervised encoder's representations of the original graph.
inline std::optional<double> sup_sim(const SampleSets& sets, const Graph& g,
                                     const SupervisedConfig& cfg) {
  if (sets.empty()) return std::nullopt;
  return sup_sim_with(sets, g, train_supervised(g, cfg));
}

// Rearranges a square similarity matrix: diagonal first, remaining entries
// sorted descending per row. Also reports how many rows have an off-diagonal
// entry beating their diagonal.
inline BiasAudit rearrange_similarity(const Tensor& s, int top_k) {
  if (s.rows() != s.cols()) throw std::invalid_argument("rearrange_similarity: matrix not square");
  if (top_k < 0) throw std::invalid_argument("rearrange_similarity: top_k must be >= 0");
  const int n = s.rows();
  BiasAudit audit;
  audit.s_prime = Tensor(n, n);
  int exceed = 0;
  std::vector<double> row(n > 1 ? n - 1 : 0);
  for (int i = 0; i < n; ++i) {
    const double diag_value = s.at(i, i);
    int k = 0;
    for (int j = 0; j < n; ++j)
      if (j != i) row[k++] = s.at(i, j);
    std::sort(row.begin(), row.end(), std::greater<double>());
    if (!row.empty() && row.front() > diag_value) ++exceed;
    audit.s_prime.values()[static_cast<std::size_t>(i) * n] = diag_value;
    for (int j = 0; j < n - 1; ++j)
      audit.s_prime.values()[static_cast<std::size_t>(i) * n + 1 + j] = row[j];
  }
  audit.exceed_fraction = n > 0 ? static_cast<double>(exceed) / n : 0.0;

  const int cols = std::min(1 + top_k, n);
  audit.excerpt = Tensor(n, cols);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < cols; ++j)
      audit.excerpt.values()[static_cast<std::size_t>(i) * cols + j] = audit.s_prime.at(i, j);
  return audit;
}

// Trains a supervised encoder, encodes both augmented views, and rearranges
// the cross-view cosine matrix.
inline BiasAudit bias_audit(const Graph& g, const AugmentConfig& aug_cfg,
                            const SupervisedConfig& sup_cfg, int top_k) {
  if (!g.labels) throw DataError("bias_audit: dataset has no labels");
  const EncoderParams params = train_supervised(g, sup_cfg);
  const ViewPair views = make_views(g, aug_cfg);
  const Tensor u = encode(params, views.a1_norm, views.g1.features);
  const Tensor v = encode(params, views.a2_norm, views.g2.features);
  return rearrange_similarity(cosine_rows(u, v, 1e-12), top_k);
}

}  // namespace ifl
