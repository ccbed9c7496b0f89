#pragma once

// End-to-end pre-training schedule: warm up on InfoNCE for M epochs, then T
// rounds of (resample unlabeled positives with the current model, retrain K
// epochs on the corrected loss with the sets frozen). Everything is
// deterministic per (config, seed).

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ifl/augment.hpp"
#include "ifl/contrastive.hpp"
#include "ifl/encoder.hpp"
#include "ifl/eval.hpp"
#include "ifl/graph.hpp"

namespace ifl {

struct TrainConfig {
  int warmup_epochs = 200;    // M
  int update_interval = 50;   // K
  int max_rounds = 5;         // T
  double lr = 5e-4;
  double tau = 0.5;
  double threshold = 0.9;     // t_s, cosine domain
  double beta = 1.0;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  int hidden_dim = 256;
  int output_dim = 128;
  bool freeze_views = false;  // draw the view pair once instead of per epoch
  OptimizerKind optimizer = OptimizerKind::Adam;
  int probe_every = 0;        // rounds between validation probes, 0 = off
  bool intra_view_negatives = true;
  double cosine_eps = 1e-12;
  // Contrast on a nonlinear projection of the embeddings instead of the
  // embeddings themselves. Downstream consumers always see the raw
  // embeddings; the projector exists only inside the loss.
  bool projection_head = false;
  // Per-round mean supervised-encoder similarity of the discovered pairs
  // (trains one supervised encoder per run; needs labels).
  bool purity_supsim = false;

  void validate() const {
    if (warmup_epochs < 1) throw std::invalid_argument("TrainConfig: warmup_epochs must be >= 1");
    if (update_interval < 1)
      throw std::invalid_argument("TrainConfig: update_interval must be >= 1");
    if (max_rounds < 0) throw std::invalid_argument("TrainConfig: max_rounds must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (!(tau > 0.0)) throw std::invalid_argument("TrainConfig: tau must be positive");
    if (!(threshold >= -1.0 && threshold <= 1.0))
      throw std::invalid_argument("TrainConfig: threshold outside [-1,1]");
    if (!(beta >= 0.0)) throw std::invalid_argument("TrainConfig: beta must be >= 0");
    if (hidden_dim <= 0 || output_dim <= 0)
      throw std::invalid_argument("TrainConfig: encoder dims must be positive");
    if (probe_every < 0) throw std::invalid_argument("TrainConfig: probe_every must be >= 0");
    augment.validate();
  }
};

// Hyper-parameters of the supervised reference encoder behind the per-round
// SupSim metric; fixed per run and reported in the run metadata.
inline SupervisedConfig run_supervised_config(const TrainConfig& cfg) {
  SupervisedConfig sup;
  sup.hidden_dim = 64;
  sup.epochs = 200;
  sup.lr = 1e-2;
  sup.seed = cfg.seed;
  return sup;
}

struct RoundRecord {
  int round = 0;  // 1-based
  std::size_t unlabeled_pos = 0;
  std::optional<double> same_class_ratio;
  std::optional<double> sup_sim;
  std::optional<double> probe_valid_accuracy;
};

struct RunReport {
  std::vector<double> losses;        // length M + T*K
  std::vector<RoundRecord> rounds;   // length T
  EncoderParams final_params;
  std::optional<EncoderParams> best_params;  // tracked when probing is on
  std::optional<double> warmup_probe_accuracy;
  int best_round = -1;               // 0 = warm-up snapshot, t = after round t
  double best_valid_accuracy = -1.0;
  double wall_seconds = 0.0;
};

// Owns the parameters, optimizer state, and epoch counter of one run.
class TrainerSession {
 public:
  TrainerSession(const Graph& g, TrainConfig cfg)
      : graph_(g), cfg_(std::move(cfg)) {
    cfg_.validate();
    params_ = init_params(g.feature_dim(), cfg_.hidden_dim, cfg_.output_dim,
                          mix_seed(cfg_.seed, 0x1417u));
    if (cfg_.projection_head) {
      Rng rng(mix_seed(cfg_.seed, 0x409eu));
      proj1_ = glorot_uniform(cfg_.output_dim, cfg_.output_dim, rng);
      proj2_ = glorot_uniform(cfg_.output_dim, cfg_.output_dim, rng);
    }
    optimizer_ = Optimizer(cfg_.optimizer, {cfg_.lr});
    if (cfg_.freeze_views) frozen_views_ = make_views(graph_, cfg_.augment, view_seed(0));
  }

  const EncoderParams& params() const { return params_; }
  const std::vector<double>& losses() const { return losses_; }

  // Replaces the parameters (e.g. to continue from a warm-up snapshot);
  // optimizer moments are kept as-is.
  void set_params(EncoderParams params) { params_ = std::move(params); }

  // One descent epoch; with sets == nullptr the plain InfoNCE objective is
  // used, otherwise the corrected objective with the given frozen sets.
  double epoch_step(const SampleSets* sets) {
    ViewPair fresh;
    const ViewPair* view_ptr;
    if (cfg_.freeze_views) {
      view_ptr = &*frozen_views_;
    } else {
      fresh = make_views(graph_, cfg_.augment, view_seed(epoch_));
      view_ptr = &fresh;
    }
    const ViewPair& views = *view_ptr;
    Tape tape;
    Tensor w1 = tape.var(params_.w1), w2 = tape.var(params_.w2);
    Tensor u = encode(w1, w2, views.a1_norm, views.g1.features);
    Tensor v = encode(w1, w2, views.a2_norm, views.g2.features);
    std::vector<Tensor*> step_params = {&params_.w1, &params_.w2};
    std::vector<Tensor> tracked = {w1, w2};
    if (cfg_.projection_head) {
      Tensor p1 = tape.var(proj1_), p2 = tape.var(proj2_);
      u = project(u, p1, p2);
      v = project(v, p1, p2);
      step_params.insert(step_params.end(), {&proj1_, &proj2_});
      tracked.insert(tracked.end(), {p1, p2});
    }
    const SimilarityBundle bundle = build_similarity(u, v, cfg_.tau, cfg_.cosine_eps);
    const Tensor loss = sets
                            ? corrected_global(bundle, *sets, cfg_.beta, cfg_.intra_view_negatives)
                            : infonce_global(bundle, cfg_.intra_view_negatives);
    const double value = scalar_value(loss);
    if (!std::isfinite(value))
      throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch_));
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(tracked.size());
    for (const Tensor& t : tracked) grads.push_back(tape.grad(t));
    optimizer_.step(step_params, grads);
    losses_.push_back(value);
    ++epoch_;
    return value;
  }

  void run_warmup() {
    for (int e = 0; e < cfg_.warmup_epochs; ++e) epoch_step(nullptr);
  }

  // Resamples with the current model, freezes sets and weights, then runs K
  // corrected-loss epochs. The bundle is rebuilt per epoch with the current
  // parameters; the sets stay fixed within the round.
  RoundRecord run_round(int round_id) {
    const ViewPair views = cfg_.freeze_views
                               ? *frozen_views_
                               : make_views(graph_, cfg_.augment,
                                            mix_seed(cfg_.seed, 0x5e5au,
                                                     static_cast<std::uint64_t>(round_id)));
    Tensor u = encode(params_, views.a1_norm, views.g1.features);
    Tensor v = encode(params_, views.a2_norm, views.g2.features);
    if (cfg_.projection_head) {
      u = project(u, proj1_, proj2_);
      v = project(v, proj1_, proj2_);
    }
    const SimilarityBundle bundle = build_similarity(u, v, cfg_.tau, cfg_.cosine_eps);
    SampleSets sets = classify_unlabeled(bundle, cfg_.threshold);
    sets.round = round_id;

    RoundRecord record;
    record.round = round_id;
    record.unlabeled_pos = sets.size();
    if (graph_.labels) record.same_class_ratio = same_class_ratio(sets, *graph_.labels);
    if (cfg_.purity_supsim) record.sup_sim = sup_sim_with(sets, graph_, supervised_reference());

    for (int e = 0; e < cfg_.update_interval; ++e) epoch_step(&sets);
    last_sets_ = std::move(sets);
    return record;
  }

  const SampleSets& last_sets() const { return last_sets_; }

 private:
  std::uint64_t view_seed(int epoch) const {
    return mix_seed(cfg_.seed, 0xe90cu, static_cast<std::uint64_t>(epoch));
  }

  static Tensor project(const Tensor& h, const Tensor& p1, const Tensor& p2) {
    return matmul(relu(matmul(h, p1)), p2);
  }

  const EncoderParams& supervised_reference() {
    if (!sup_params_) {
      if (!graph_.labels) throw DataError("purity_supsim requires labels");
      sup_params_ = train_supervised(graph_, run_supervised_config(cfg_));
    }
    return *sup_params_;
  }

  const Graph& graph_;
  TrainConfig cfg_;
  EncoderParams params_;
  Tensor proj1_, proj2_;
  Optimizer optimizer_{OptimizerKind::Adam, {}};
  std::optional<ViewPair> frozen_views_;
  std::optional<EncoderParams> sup_params_;
  std::vector<double> losses_;
  SampleSets last_sets_;
  int epoch_ = 0;
};

// Warm-up as a standalone operation: M InfoNCE epochs from fresh parameters.
struct WarmupResult {
  EncoderParams params;
  std::vector<double> losses;
};

inline WarmupResult warmup(const Graph& g, const TrainConfig& cfg) {
  TrainerSession session(g, cfg);
  session.run_warmup();
  return {session.params().deep_copy(), session.losses()};
}

// One resample-and-retrain round on externally warmed parameters.
struct TrainingRoundResult {
  EncoderParams params;
  RoundRecord record;
  SampleSets sets;
  std::vector<double> losses;
};

inline TrainingRoundResult training_round(const EncoderParams& warmed, const Graph& g,
                                          const TrainConfig& cfg, int round_id) {
  TrainerSession session(g, cfg);
  session.set_params(warmed.deep_copy());  // fresh optimizer state
  RoundRecord record = session.run_round(round_id);
  return {session.params().deep_copy(), record, session.last_sets(), session.losses()};
}

// The full schedule. With probe_every > 0 and labeled data plus masks, a
// validation probe runs after warm-up and after every probe_every rounds,
// and the best snapshot is returned alongside the final parameters.
inline RunReport run_algorithm1(const Graph& g, const TrainConfig& cfg,
                                const std::optional<SplitMasks>& masks = std::nullopt) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const bool probing = cfg.probe_every > 0 && g.labels && masks.has_value();
  if (cfg.probe_every > 0 && !probing)
    throw DataError("run_algorithm1: probing requires labels and split masks");
  if (cfg.purity_supsim && !g.labels)
    throw DataError("run_algorithm1: purity_supsim requires labels");

  TrainerSession session(g, cfg);
  RunReport report;

  SparseMatrix original_norm;
  if (probing) original_norm = normalize_adjacency(g);
  auto probe_now = [&](int round_id) {
    const Tensor h = encode(session.params(), original_norm, g.features);
    const double acc = probe_validation_accuracy(h, *g.labels, *g.num_classes, *masks,
                                                 mix_seed(cfg.seed, 0x9c0be5u));
    if (acc > report.best_valid_accuracy) {
      report.best_valid_accuracy = acc;
      report.best_params = session.params().deep_copy();
      report.best_round = round_id;
    }
    return acc;
  };

  session.run_warmup();
  if (probing) report.warmup_probe_accuracy = probe_now(0);

  for (int t = 1; t <= cfg.max_rounds; ++t) {
    RoundRecord record = session.run_round(t);
    if (probing && t % cfg.probe_every == 0) record.probe_valid_accuracy = probe_now(t);
    report.rounds.push_back(std::move(record));
  }

  report.losses = session.losses();
  report.final_params = session.params().deep_copy();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace ifl
