#pragma once

// Stochastic view generation: edge dropping (uniform or degree-adaptive)
// and column-wise feature masking. Node identity is preserved, so node i of
// either view always corresponds to node i of the original graph.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ifl/graph.hpp"
#include "ifl/rng.hpp"

namespace ifl {

enum class DropMode { Uniform, DegreeAdaptive };

struct ViewParams {
  double edge_drop = 0.2;
  double feature_mask = 0.2;
};

struct AugmentConfig {
  double edge_drop = 0.2;        // mean drop probability
  double feature_mask = 0.2;     // column masking probability
  DropMode mode = DropMode::Uniform;
  std::optional<ViewParams> view1;  // per-view overrides
  std::optional<ViewParams> view2;
  std::uint64_t seed = 0;

  void validate() const {
    auto check = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument(std::string("AugmentConfig: ") + name + " outside [0,1]");
    };
    check(edge_drop, "edge_drop");
    check(feature_mask, "feature_mask");
    for (const auto& v : {view1, view2})
      if (v) {
        check(v->edge_drop, "view edge_drop");
        check(v->feature_mask, "view feature_mask");
      }
    if (mode == DropMode::DegreeAdaptive) {
      if (edge_drop >= 1.0)
        throw std::invalid_argument("AugmentConfig: adaptive mode needs edge_drop < 1");
      for (const auto& v : {view1, view2})
        if (v && v->edge_drop >= 1.0)
          throw std::invalid_argument("AugmentConfig: adaptive mode needs edge_drop < 1");
    }
  }

  ViewParams params_for(int view) const {
    const auto& override_ = view == 1 ? view1 : view2;
    if (override_) return *override_;
    return ViewParams{edge_drop, feature_mask};
  }
};

struct ViewPair {
  Graph g1, g2;
  SparseMatrix a1_norm, a2_norm;
  int num_nodes = 0;
};

// Removes each undirected edge independently. Uniform mode drops with
// probability p. Adaptive mode weights edges by inverse mean endpoint
// degree, rescales so the mean drop rate is p, and clips to [0, 0.95].
inline Graph drop_edges(const Graph& g, double p, DropMode mode, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("drop_edges: p outside [0,1]");
  const auto edges = g.undirected_edges();
  std::vector<double> drop_prob(edges.size(), p);
  if (mode == DropMode::DegreeAdaptive && !edges.empty()) {
    const auto deg = g.degrees();
    double total = 0.0;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const double mean_deg = 0.5 * (deg[edges[e].first] + deg[edges[e].second]);
      drop_prob[e] = 1.0 / mean_deg;
      total += drop_prob[e];
    }
    const double scale = p * static_cast<double>(edges.size()) / total;
    for (auto& q : drop_prob) q = std::min(0.95, std::max(0.0, q * scale));
  }

  Rng rng(mix_seed(seed, 0xed6eu));
  std::set<std::pair<int, int>> kept;
  for (std::size_t e = 0; e < edges.size(); ++e)
    if (!rng.bernoulli(drop_prob[e])) kept.insert(edges[e]);

  Graph out;
  out.num_nodes = g.num_nodes;
  out.features = g.features;
  out.adjacency = detail::adjacency_from_pairs(g.num_nodes, kept);
  out.labels = g.labels;
  out.num_classes = g.num_classes;
  return out;
}

// Draws one Bernoulli(p) mask over feature dimensions and zeroes the chosen
// columns for every node.
inline Graph mask_features(const Graph& g, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("mask_features: p outside [0,1]");
  const int f = g.feature_dim();
  Rng rng(mix_seed(seed, 0xfea7u));
  std::vector<bool> masked(f);
  for (int k = 0; k < f; ++k) masked[k] = rng.bernoulli(p);

  Graph out;
  out.num_nodes = g.num_nodes;
  out.features = g.features.detached_copy();
  out.adjacency = g.adjacency;
  out.labels = g.labels;
  out.num_classes = g.num_classes;
  auto& x = out.features.values();
  for (int i = 0; i < g.num_nodes; ++i)
    for (int k = 0; k < f; ++k)
      if (masked[k]) x[static_cast<std::size_t>(i) * f + k] = 0.0;
  return out;
}

// Two independently augmented views with precomputed normalized adjacencies.
inline ViewPair make_views(const Graph& g, const AugmentConfig& cfg, std::uint64_t draw_seed) {
  cfg.validate();
  ViewPair pair;
  pair.num_nodes = g.num_nodes;
  for (int view = 1; view <= 2; ++view) {
    const ViewParams p = cfg.params_for(view);
    const std::uint64_t vs = mix_seed(draw_seed, static_cast<std::uint64_t>(view));
    Graph aug = drop_edges(g, p.edge_drop, cfg.mode, mix_seed(vs, 1));
    aug = mask_features(aug, p.feature_mask, mix_seed(vs, 2));
    if (view == 1) {
      pair.a1_norm = normalize_adjacency(aug);
      pair.g1 = std::move(aug);
    } else {
      pair.a2_norm = normalize_adjacency(aug);
      pair.g2 = std::move(aug);
    }
  }
  return pair;
}

inline ViewPair make_views(const Graph& g, const AugmentConfig& cfg) {
  return make_views(g, cfg, cfg.seed);
}

}  // namespace ifl
