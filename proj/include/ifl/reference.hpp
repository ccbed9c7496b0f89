#pragma once

// Straight-line reference implementations of the loss family, written
// against plain nested vectors with per-anchor loops. They deliberately
// avoid the tensor/tape machinery so the self-test and test suites can
// cross-check the vectorized paths against an independent route.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ifl::reference {

using Rows = std::vector<std::vector<double>>;

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double similarity(const Rows& x, const Rows& y, int i, int j, double tau) {
  return std::exp(cosine(x[i], y[j]) / tau);
}

// Anchor node i in `view` (1 = u, 2 = v): sum of cross-view candidates plus,
// when enabled, intra-view candidates excluding the anchor.
inline double denominator(const Rows& u, const Rows& v, double tau, int view, int i, bool intra) {
  const Rows& mine = view == 1 ? u : v;
  const Rows& other = view == 1 ? v : u;
  const int n = static_cast<int>(u.size());
  double total = 0.0;
  for (int j = 0; j < n; ++j) total += similarity(mine, other, i, j, tau);
  if (intra)
    for (int j = 0; j < n; ++j)
      if (j != i) total += similarity(mine, mine, i, j, tau);
  return total;
}

inline double log_prob(const Rows& u, const Rows& v, double tau, int view, int i, int j,
                       bool intra) {
  const Rows& mine = view == 1 ? u : v;
  const Rows& other = view == 1 ? v : u;
  return std::log(similarity(mine, other, i, j, tau) / denominator(u, v, tau, view, i, intra));
}

inline double infonce_local(const Rows& u, const Rows& v, double tau, int view, int i,
                            bool intra) {
  return -log_prob(u, v, tau, view, i, i, intra);
}

inline double infonce_global(const Rows& u, const Rows& v, double tau, bool intra) {
  const int n = static_cast<int>(u.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += infonce_local(u, v, tau, 1, i, intra) + infonce_local(u, v, tau, 2, i, intra);
  return total / (2.0 * n);
}

struct WeightedPair {
  int view;
  int i, j;
  double weight;
};

inline double corrected_local(const Rows& u, const Rows& v, double tau,
                              const std::vector<WeightedPair>& pairs, double beta, int view,
                              int i, bool intra) {
  double total = infonce_local(u, v, tau, view, i, intra);
  for (const auto& p : pairs)
    if (p.view == view && p.i == i)
      total -= beta * p.weight * log_prob(u, v, tau, p.view, p.i, p.j, intra);
  return total;
}

inline double corrected_global(const Rows& u, const Rows& v, double tau,
                               const std::vector<WeightedPair>& pairs, double beta, bool intra) {
  const int n = static_cast<int>(u.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += corrected_local(u, v, tau, pairs, beta, 1, i, intra) +
             corrected_local(u, v, tau, pairs, beta, 2, i, intra);
  return total / (2.0 * n);
}

inline double linear_combination_global(const Rows& u, const Rows& v, double tau,
                                        const std::vector<WeightedPair>& pairs,
                                        const std::vector<double>& alphas, bool intra) {
  if (pairs.size() != alphas.size())
    throw std::invalid_argument("reference: alphas misaligned with pairs");
  const int n = static_cast<int>(u.size());
  double total = 0.0;
  for (int view = 1; view <= 2; ++view) {
    const Rows& mine = view == 1 ? u : v;
    const Rows& other = view == 1 ? v : u;
    for (int i = 0; i < n; ++i) {
      double mass = similarity(mine, other, i, i, tau);
      for (std::size_t k = 0; k < pairs.size(); ++k)
        if (pairs[k].view == view && pairs[k].i == i)
          mass += alphas[k] * similarity(mine, other, i, pairs[k].j, tau);
      total += std::log(denominator(u, v, tau, view, i, intra)) - std::log(mass);
    }
  }
  return total / (2.0 * n);
}

// Sum of the anchor's full-candidate-set probabilities; should be 1.
inline double candidate_probability_sum(const Rows& u, const Rows& v, double tau, int view,
                                        int i, bool intra) {
  const Rows& mine = view == 1 ? u : v;
  const Rows& other = view == 1 ? v : u;
  const int n = static_cast<int>(u.size());
  const double denom = denominator(u, v, tau, view, i, intra);
  double total = 0.0;
  for (int j = 0; j < n; ++j) total += similarity(mine, other, i, j, tau) / denom;
  if (intra)
    for (int j = 0; j < n; ++j)
      if (j != i) total += similarity(mine, mine, i, j, tau) / denom;
  return total;
}

}  // namespace ifl::reference
