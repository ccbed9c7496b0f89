#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ifl/trainer.hpp"

using namespace ifl;

namespace {

Graph planted_graph(std::uint64_t seed = 1) {
  SbmSpec spec;
  spec.block_sizes = {20, 20};
  spec.p_in = 0.5;
  spec.p_out = 0.05;
  spec.feature_dim = 8;
  spec.mean_scale = 4.0;
  spec.noise_sigma = 1.0;
  spec.seed = seed;
  return sbm_generate(spec);
}

TrainConfig small_config(std::uint64_t seed = 3) {
  TrainConfig cfg;
  cfg.warmup_epochs = 10;
  cfg.update_interval = 3;
  cfg.max_rounds = 2;
  cfg.lr = 0.01;
  cfg.tau = 0.5;
  cfg.threshold = 0.9;
  cfg.beta = 1.0;
  cfg.seed = seed;
  cfg.hidden_dim = 16;
  cfg.output_dim = 8;
  return cfg;
}

}  // namespace

TEST_CASE("warmup") {
  const Graph g = planted_graph();
  SECTION("zero-init weights start at log(2N-1)") {
    TrainConfig cfg = small_config();
    TrainerSession session(g, cfg);
    session.set_params({Tensor(g.feature_dim(), cfg.hidden_dim),
                        Tensor(cfg.hidden_dim, cfg.output_dim)});
    const double first = session.epoch_step(nullptr);
    REQUIRE(first == Catch::Approx(std::log(2.0 * g.num_nodes - 1.0)).epsilon(1e-9));
  }
  SECTION("fixed seed gives a bit-identical trajectory") {
    const WarmupResult a = warmup(g, small_config()), b = warmup(g, small_config());
    REQUIRE(a.losses == b.losses);
    REQUIRE(a.params.w1.values() == b.params.w1.values());
    const WarmupResult c = warmup(g, small_config(4));
    REQUIRE(a.losses != c.losses);
  }
  SECTION("loss descends over a long warm-up") {
    TrainConfig cfg = small_config();
    cfg.warmup_epochs = 200;
    const WarmupResult r = warmup(g, cfg);
    REQUIRE(r.losses.size() == 200);
    REQUIRE(r.losses.back() < r.losses.front());
  }
}

TEST_CASE("training_round") {
  const Graph g = planted_graph();
  SECTION("a threshold above every cosine degenerates to InfoNCE epochs") {
    TrainConfig cfg = small_config();
    const WarmupResult warm = warmup(g, cfg);

    TrainConfig high = cfg;
    high.threshold = 1.0;  // guarded cosines of distinct rows stay below 1
    const TrainingRoundResult round = training_round(warm.params, g, high, 1);
    REQUIRE(round.record.unlabeled_pos == 0);
    REQUIRE(round.sets.empty());

    // The corrected objective with an empty set must produce the same
    // updates as plain InfoNCE epochs from the same starting point.
    TrainConfig plain = cfg;
    TrainerSession baseline(g, plain);
    baseline.set_params(warm.params.deep_copy());
    std::vector<double> infonce_losses;
    for (int e = 0; e < cfg.update_interval; ++e)
      infonce_losses.push_back(baseline.epoch_step(nullptr));
    REQUIRE(round.losses == infonce_losses);
    REQUIRE(round.params.w1.values() == baseline.params().w1.values());
  }
  SECTION("beta = 0 with one epoch equals one InfoNCE epoch") {
    TrainConfig cfg = small_config();
    cfg.update_interval = 1;
    const WarmupResult warm = warmup(g, cfg);
    TrainConfig zero_beta = cfg;
    zero_beta.beta = 0.0;
    zero_beta.threshold = 0.5;
    const TrainingRoundResult round = training_round(warm.params, g, zero_beta, 1);
    REQUIRE(round.record.unlabeled_pos > 0);

    TrainerSession baseline(g, cfg);
    baseline.set_params(warm.params.deep_copy());
    const double loss = baseline.epoch_step(nullptr);
    REQUIRE(round.losses == std::vector<double>{loss});
    REQUIRE(round.params.w2.values() == baseline.params().w2.values());
  }
  SECTION("discovered pairs on the planted graph beat the base rate") {
    TrainConfig cfg = small_config();
    cfg.warmup_epochs = 100;
    const WarmupResult warm = warmup(g, cfg);
    const TrainingRoundResult round = training_round(warm.params, g, cfg, 1);
    REQUIRE(round.record.unlabeled_pos > 0);
    REQUIRE(round.record.same_class_ratio.has_value());
    REQUIRE(*round.record.same_class_ratio > 0.5);
  }
}

TEST_CASE("run_algorithm1") {
  const Graph g = planted_graph();
  SECTION("max_rounds = 0 reduces to the warm-up alone") {
    TrainConfig cfg = small_config();
    cfg.max_rounds = 0;
    const RunReport report = run_algorithm1(g, cfg);
    const WarmupResult warm = warmup(g, cfg);
    REQUIRE(report.losses == warm.losses);
    REQUIRE(report.rounds.empty());
    REQUIRE(report.final_params.w1.values() == warm.params.w1.values());
  }
  SECTION("trajectory and round-record lengths follow the schedule") {
    TrainConfig cfg = small_config();
    const RunReport report = run_algorithm1(g, cfg);
    REQUIRE(report.losses.size() ==
            static_cast<std::size_t>(cfg.warmup_epochs + cfg.max_rounds * cfg.update_interval));
    REQUIRE(report.rounds.size() == static_cast<std::size_t>(cfg.max_rounds));
    for (int t = 0; t < cfg.max_rounds; ++t) REQUIRE(report.rounds[t].round == t + 1);
  }
  SECTION("same config and seed is bit-identical") {
    const RunReport a = run_algorithm1(g, small_config());
    const RunReport b = run_algorithm1(g, small_config());
    REQUIRE(a.losses == b.losses);
    REQUIRE(a.final_params.w1.values() == b.final_params.w1.values());
    REQUIRE(a.final_params.w2.values() == b.final_params.w2.values());
  }
  SECTION("frozen views with SGD follow the literal schedule deterministically") {
    TrainConfig cfg = small_config();
    cfg.freeze_views = true;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.lr = 1e-3;
    const RunReport a = run_algorithm1(g, cfg), b = run_algorithm1(g, cfg);
    REQUIRE(a.losses == b.losses);
  }
  SECTION("probing tracks the best checkpoint by validation accuracy") {
    TrainConfig cfg = small_config();
    cfg.probe_every = 1;
    const SplitMasks masks = make_split(g, 1, 1, 8, cfg.seed);
    const RunReport report = run_algorithm1(g, cfg, masks);
    REQUIRE(report.best_params.has_value());
    REQUIRE(report.warmup_probe_accuracy.has_value());
    REQUIRE(report.best_valid_accuracy >= *report.warmup_probe_accuracy);
    for (const auto& r : report.rounds) REQUIRE(r.probe_valid_accuracy.has_value());
    REQUIRE(report.best_round >= 0);
  }
  SECTION("probing without masks is a data error") {
    TrainConfig cfg = small_config();
    cfg.probe_every = 1;
    REQUIRE_THROWS_AS(run_algorithm1(g, cfg), DataError);
  }
  SECTION("the projection head changes the objective but not the artifact shape") {
    TrainConfig cfg = small_config();
    const RunReport plain = run_algorithm1(g, cfg);
    cfg.projection_head = true;
    const RunReport projected = run_algorithm1(g, cfg);
    REQUIRE(projected.losses != plain.losses);
    REQUIRE(projected.losses.size() == plain.losses.size());
    // Downstream artifact stays the raw two-layer encoder.
    REQUIRE(projected.final_params.feature_dim() == plain.final_params.feature_dim());
    REQUIRE(projected.final_params.output_dim() == plain.final_params.output_dim());
    const RunReport again = run_algorithm1(g, cfg);
    REQUIRE(projected.losses == again.losses);
  }
  SECTION("per-round supervised similarity is recorded when requested") {
    TrainConfig cfg = small_config();
    cfg.warmup_epochs = 60;
    cfg.purity_supsim = true;
    const RunReport report = run_algorithm1(g, cfg);
    for (const auto& r : report.rounds) {
      if (r.unlabeled_pos > 0) {
        REQUIRE(r.sup_sim.has_value());
        REQUIRE(*r.sup_sim >= -1.0);
        REQUIRE(*r.sup_sim <= 1.0);
      }
    }
  }
  SECTION("config validation") {
    TrainConfig cfg = small_config();
    cfg.warmup_epochs = 0;
    REQUIRE_THROWS_AS(run_algorithm1(g, cfg), std::invalid_argument);
    cfg = small_config();
    cfg.tau = 0.0;
    REQUIRE_THROWS_AS(run_algorithm1(g, cfg), std::invalid_argument);
  }
}
