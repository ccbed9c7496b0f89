#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "ifl/augment.hpp"

using namespace ifl;

namespace {

Graph dense_sbm(int per_block, double p_in, double p_out, std::uint64_t seed = 1) {
  SbmSpec spec;
  spec.block_sizes = {per_block, per_block};
  spec.p_in = p_in;
  spec.p_out = p_out;
  spec.feature_dim = 6;
  spec.seed = seed;
  return sbm_generate(spec);
}

}  // namespace

TEST_CASE("drop_edges") {
  const Graph g = dense_sbm(20, 0.8, 0.3);
  const auto original = g.undirected_edges();
  SECTION("p=0 keeps the edge set") {
    REQUIRE(drop_edges(g, 0.0, DropMode::Uniform, 5).undirected_edges() == original);
  }
  SECTION("p=1 removes everything") {
    REQUIRE(drop_edges(g, 1.0, DropMode::Uniform, 5).undirected_edges().empty());
  }
  SECTION("retained count within 4 sigma of the binomial expectation") {
    const double p = 0.3;
    const double n = static_cast<double>(original.size());
    const Graph dropped = drop_edges(g, p, DropMode::Uniform, 11);
    const double kept = static_cast<double>(dropped.undirected_edges().size());
    const double mu = n * (1.0 - p), sd = std::sqrt(n * p * (1.0 - p));
    REQUIRE(std::abs(kept - mu) < 4 * sd);
  }
  SECTION("output edges are a subset of the input") {
    const std::set<std::pair<int, int>> from(original.begin(), original.end());
    for (const auto& e : drop_edges(g, 0.4, DropMode::Uniform, 3).undirected_edges())
      REQUIRE(from.count(e) == 1);
  }
  SECTION("node set unchanged") {
    REQUIRE(drop_edges(g, 0.9, DropMode::Uniform, 2).num_nodes == g.num_nodes);
  }
  SECTION("degree-adaptive mode keeps the mean drop rate near p") {
    const Graph dropped = drop_edges(g, 0.3, DropMode::DegreeAdaptive, 17);
    const double kept = static_cast<double>(dropped.undirected_edges().size());
    const double n = static_cast<double>(original.size());
    // Clipping can shift the realized mean slightly; 4 sigma around 0.7n
    // still brackets it on this graph.
    REQUIRE(std::abs(kept - 0.7 * n) < 4 * std::sqrt(n * 0.3 * 0.7) + 0.02 * n);
    const std::set<std::pair<int, int>> from(original.begin(), original.end());
    for (const auto& e : dropped.undirected_edges()) REQUIRE(from.count(e) == 1);
  }
  SECTION("invalid probability") {
    REQUIRE_THROWS_AS(drop_edges(g, 1.5, DropMode::Uniform, 0), std::invalid_argument);
  }
}

TEST_CASE("mask_features") {
  SbmSpec spec;
  spec.block_sizes = {10};
  spec.p_in = 0.2;
  spec.p_out = 0.0;
  spec.feature_dim = 1000;
  spec.noise_sigma = 1.0;
  const Graph g = sbm_generate(spec);
  SECTION("p=0 keeps features") {
    REQUIRE(mask_features(g, 0.0, 4).features.values() == g.features.values());
  }
  SECTION("p=1 zeroes everything") {
    const Graph masked = mask_features(g, 1.0, 4);
    for (double v : masked.features.values()) REQUIRE(v == 0.0);
  }
  SECTION("column-wise mask: zeroed columns shared by all nodes, count near expectation") {
    const Graph masked = mask_features(g, 0.2, 9);
    int zeroed = 0;
    for (int k = 0; k < 1000; ++k) {
      bool all_zero = true, any_zero = false;
      for (int i = 0; i < g.num_nodes; ++i) {
        if (masked.features.at(i, k) == 0.0 && g.features.at(i, k) != 0.0) any_zero = true;
        if (masked.features.at(i, k) != 0.0) all_zero = false;
      }
      if (any_zero) REQUIRE(all_zero);  // a masked column is masked for every node
      if (all_zero) ++zeroed;
    }
    const double mu = 1000 * 0.2, sd = std::sqrt(1000 * 0.2 * 0.8);
    REQUIRE(std::abs(zeroed - mu) < 4 * sd);
  }
}

TEST_CASE("make_views") {
  const Graph g = dense_sbm(20, 0.5, 0.05);
  AugmentConfig cfg;
  cfg.edge_drop = 0.2;
  cfg.feature_mask = 0.2;
  SECTION("all-zero probabilities reproduce the original") {
    AugmentConfig zero;
    zero.edge_drop = 0.0;
    zero.feature_mask = 0.0;
    const ViewPair pair = make_views(g, zero, 1);
    REQUIRE(pair.g1.undirected_edges() == g.undirected_edges());
    REQUIRE(pair.g2.features.values() == g.features.values());
  }
  SECTION("fixed seed is reproducible, different seeds differ") {
    const ViewPair a = make_views(g, cfg, 7), b = make_views(g, cfg, 7);
    REQUIRE(a.g1.undirected_edges() == b.g1.undirected_edges());
    REQUIRE(a.g2.features.values() == b.g2.features.values());
    const ViewPair c = make_views(g, cfg, 8);
    REQUIRE(a.g1.undirected_edges() != c.g1.undirected_edges());
  }
  SECTION("the two views differ from each other across seeds") {
    int distinct = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const ViewPair pair = make_views(g, cfg, seed);
      if (pair.g1.undirected_edges() != pair.g2.undirected_edges() ||
          pair.g1.features.values() != pair.g2.features.values())
        ++distinct;
    }
    REQUIRE(distinct == 20);
  }
  SECTION("per-view overrides apply") {
    AugmentConfig with_overrides = cfg;
    with_overrides.view1 = ViewParams{0.0, 0.0};
    with_overrides.view2 = ViewParams{1.0, 0.0};
    const ViewPair pair = make_views(g, with_overrides, 3);
    REQUIRE(pair.g1.undirected_edges() == g.undirected_edges());
    REQUIRE(pair.g2.undirected_edges().empty());
  }
  SECTION("node identity preserved") {
    const ViewPair pair = make_views(g, cfg, 5);
    REQUIRE(pair.g1.num_nodes == g.num_nodes);
    REQUIRE(pair.g2.num_nodes == g.num_nodes);
    REQUIRE(pair.num_nodes == g.num_nodes);
  }
  SECTION("config validation") {
    AugmentConfig bad;
    bad.edge_drop = -0.1;
    REQUIRE_THROWS_AS(make_views(g, bad, 0), std::invalid_argument);
    AugmentConfig adaptive;
    adaptive.mode = DropMode::DegreeAdaptive;
    adaptive.edge_drop = 1.0;
    REQUIRE_THROWS_AS(make_views(g, adaptive, 0), std::invalid_argument);
  }
}
