#pragma once

// Similarity bundle and loss family for cross-view node contrast:
//   - InfoNCE with intra- and cross-view negatives,
//   - per-pair log-likelihoods sharing the InfoNCE denominator,
//   - a threshold resampler that promotes high-similarity cross-view pairs
//     from negatives to weighted positives,
//   - the corrected (likelihood-product) objective and the additive
//     comparison objective.
//
// Pair bookkeeping: a PairRef{view, i, j} with view==1 reads entry (i, j) of
// the cross-view cosine matrix (anchor in view 1); view==2 reads entry
// (j, i) (anchor in view 2). The diagonal pairs are the labeled positives
// and never appear in a SampleSets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ifl/tensor.hpp"

namespace ifl {

struct SimilarityBundle {
  int n = 0;
  double tau = 0.5;
  Tensor cos_uv, cos_uu, cos_vv;  // N x N cosine matrices
  Tensor s_uv, s_uu, s_vv;        // exp(cos / tau)
};

struct PairRef {
  int view = 1;  // anchor side: 1 = first view, 2 = second view
  int i = 0;     // anchor node
  int j = 0;     // candidate node in the other view

  bool operator==(const PairRef&) const = default;
};

struct SampleSets {
  std::vector<PairRef> pairs;    // discovered unlabeled positives, no diagonal
  std::vector<double> weights;   // normalized-similarity weights, constants
  int round = -1;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct LossConfig {
  double tau = 0.5;
  double beta = 1.0;
  double threshold = 0.9;  // cosine-domain t_s
  bool intra_view_negatives = true;

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("LossConfig: tau must be positive");
    if (!(beta >= 0.0)) throw std::invalid_argument("LossConfig: beta must be >= 0");
    if (!(threshold >= -1.0 && threshold <= 1.0))
      throw std::invalid_argument("LossConfig: threshold outside [-1,1]");
  }
};

inline SimilarityBundle build_similarity(const Tensor& u, const Tensor& v, double tau,
                                         double cosine_eps = 0.0) {
  if (!(tau > 0.0)) throw std::invalid_argument("build_similarity: tau must be positive");
  if (u.rows() != v.rows() || u.cols() != v.cols())
    throw std::invalid_argument("build_similarity: view shapes differ");
  SimilarityBundle b;
  b.n = u.rows();
  b.tau = tau;
  b.cos_uv = cosine_rows(u, v, cosine_eps);
  b.cos_uu = cosine_rows(u, u, cosine_eps);
  b.cos_vv = cosine_rows(v, v, cosine_eps);
  b.s_uv = exp(mul_scalar(b.cos_uv, 1.0 / tau));
  b.s_uu = exp(mul_scalar(b.cos_uu, 1.0 / tau));
  b.s_vv = exp(mul_scalar(b.cos_vv, 1.0 / tau));
  return b;
}

namespace detail {

// Denominator per anchor of the given view: all cross-view candidates plus,
// when enabled, the intra-view candidates excluding the anchor itself.
inline Tensor anchor_denominators(const SimilarityBundle& b, int view, bool intra) {
  const Tensor& cross = b.s_uv;
  const Tensor& same = view == 1 ? b.s_uu : b.s_vv;
  Tensor cross_sum = view == 1 ? row_sum(cross) : row_sum(transpose(cross));
  if (!intra) return cross_sum;
  return add(cross_sum, sub(row_sum(same), diag(same)));
}

inline void check_pair(const SimilarityBundle& b, const PairRef& p) {
  if (p.view != 1 && p.view != 2) throw std::invalid_argument("PairRef: view must be 1 or 2");
  if (p.i < 0 || p.i >= b.n || p.j < 0 || p.j >= b.n)
    throw std::invalid_argument("PairRef: node index out of range");
  if (p.i == p.j) throw std::invalid_argument("PairRef: diagonal pair not allowed");
}

// Matrix coordinate of the pair's entry in the cross-view matrices.
inline std::pair<int, int> pair_coord(const PairRef& p) {
  return p.view == 1 ? std::make_pair(p.i, p.j) : std::make_pair(p.j, p.i);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// InfoNCE
// ---------------------------------------------------------------------------

// Undivided loss: sum_i log d1_i + sum_i log d2_i - 2/tau * sum_i cos_uv[i,i],
// optionally with per-anchor multipliers r on the log-denominator terms.
namespace detail {

inline Tensor nce_base(const SimilarityBundle& b, bool intra, const Tensor* r1 = nullptr,
                       const Tensor* r2 = nullptr) {
  Tensor log_d1 = log(anchor_denominators(b, 1, intra));
  Tensor log_d2 = log(anchor_denominators(b, 2, intra));
  if (r1) log_d1 = mul(log_d1, *r1);
  if (r2) log_d2 = mul(log_d2, *r2);
  const Tensor diag_term = mul_scalar(sum_all(diag(b.cos_uv)), -2.0 / b.tau);
  return add(add(sum_all(log_d1), sum_all(log_d2)), diag_term);
}

}  // namespace detail

// Mean over the 2N labeled positives of the per-anchor losses.
inline Tensor infonce_global(const SimilarityBundle& b, bool intra = true) {
  return mul_scalar(detail::nce_base(b, intra), 1.0 / (2.0 * b.n));
}

// Loss of the single labeled positive anchored at node i of `view`.
inline Tensor infonce_local(const SimilarityBundle& b, int view, int i, bool intra = true) {
  if (i < 0 || i >= b.n) throw std::invalid_argument("infonce_local: index out of range");
  const Tensor d = detail::anchor_denominators(b, view, intra);
  const Tensor log_d = log(gather(d, {{i, 0}}));
  const Tensor pos = mul_scalar(gather(b.cos_uv, {{i, i}}), 1.0 / b.tau);
  return sub(log_d, pos);
}

// log P(candidate j | anchor i of `view`): the anchor's full-candidate-set
// normalized log-likelihood of the cross-view pair (i, j).
inline Tensor log_prob(const SimilarityBundle& b, int view, int i, int j, bool intra = true) {
  if (i < 0 || i >= b.n || j < 0 || j >= b.n)
    throw std::invalid_argument("log_prob: index out of range");
  const auto coord = view == 1 ? std::make_pair(i, j) : std::make_pair(j, i);
  const Tensor d = detail::anchor_denominators(b, view, intra);
  const Tensor num = mul_scalar(gather(b.cos_uv, {coord}), 1.0 / b.tau);
  return sub(num, log(gather(d, {{i, 0}})));
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

// Globally normalized similarity (s - min) / max over the full cross-view
// similarity matrix. The result is a plain constant; no gradient flows
// through it.
inline Tensor normalized_similarity(const SimilarityBundle& b) {
  const auto& s = b.s_uv.values();
  double lo = s[0], hi = s[0];
  for (double x : s) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  Tensor out(b.n, b.n);
  auto& o = out.values();
  for (std::size_t k = 0; k < s.size(); ++k) o[k] = (s[k] - lo) / hi;
  return out;
}

// Threshold classifier over all off-diagonal cross-view pairs in both anchor
// directions: a pair joins the unlabeled positives iff its cosine >= t_s
// (ties included). Weights are the normalized similarities at the pair's
// entry, frozen at this round.
inline SampleSets classify_unlabeled(const SimilarityBundle& b, double t_s) {
  if (!(t_s >= -1.0 && t_s <= 1.0))
    throw std::invalid_argument("classify_unlabeled: threshold outside [-1,1]");
  const Tensor shat = normalized_similarity(b);
  SampleSets sets;
  for (int view = 1; view <= 2; ++view)
    for (int i = 0; i < b.n; ++i)
      for (int j = 0; j < b.n; ++j) {
        if (i == j) continue;
        const auto [r, c] = detail::pair_coord({view, i, j});
        if (b.cos_uv.at(r, c) >= t_s) {
          sets.pairs.push_back({view, i, j});
          sets.weights.push_back(shat.at(r, c));
        }
      }
  return sets;
}

// ---------------------------------------------------------------------------
// Corrected objective
// ---------------------------------------------------------------------------

namespace detail {

struct PairConstants {
  Tensor r1, r2;          // N x 1: 1 + sum of beta-scaled weights per anchor
  Tensor w_uv1, w_uv2;    // N x N: beta-scaled weights placed at the pair's
                          // cross-view matrix coordinate, per anchor view
};

inline PairConstants pair_constants(const SimilarityBundle& b, const SampleSets& sets,
                                    double beta) {
  if (sets.pairs.size() != sets.weights.size())
    throw std::invalid_argument("SampleSets: pairs/weights size mismatch");
  PairConstants pc;
  pc.r1 = Tensor(b.n, 1, 1.0);
  pc.r2 = Tensor(b.n, 1, 1.0);
  pc.w_uv1 = Tensor(b.n, b.n);
  pc.w_uv2 = Tensor(b.n, b.n);
  for (std::size_t k = 0; k < sets.pairs.size(); ++k) {
    const PairRef& p = sets.pairs[k];
    check_pair(b, p);
    const double w = beta * sets.weights[k];
    const auto [r, c] = pair_coord(p);
    if (p.view == 1) {
      pc.r1.values()[p.i] += w;
      pc.w_uv1.values()[static_cast<std::size_t>(r) * b.n + c] += w;
    } else {
      pc.r2.values()[p.i] += w;
      pc.w_uv2.values()[static_cast<std::size_t>(r) * b.n + c] += w;
    }
  }
  return pc;
}

}  // namespace detail

// Corrected loss for one labeled positive: the anchor's InfoNCE term minus
// the beta- and weight-scaled log-likelihoods of the unlabeled positives
// sharing that anchor.
inline Tensor corrected_local(const SimilarityBundle& b, const SampleSets& sets, int view, int i,
                              double beta, bool intra = true) {
  if (!(beta >= 0.0)) throw std::invalid_argument("corrected_local: beta must be >= 0");
  std::vector<std::pair<int, int>> coords;
  std::vector<double> weights;
  for (std::size_t k = 0; k < sets.pairs.size(); ++k) {
    const PairRef& p = sets.pairs[k];
    detail::check_pair(b, p);
    if (p.view == view && p.i == i) {
      coords.push_back(detail::pair_coord(p));
      weights.push_back(beta * sets.weights[k]);
    }
  }
  const Tensor base = infonce_local(b, view, i, intra);
  if (coords.empty()) return base;

  const Tensor d = detail::anchor_denominators(b, view, intra);
  const Tensor log_d = log(gather(d, {{i, 0}}));
  const Tensor pair_cos = mul_scalar(gather(b.cos_uv, coords), 1.0 / b.tau);
  // log P of each pair: cos/tau - log denom (broadcast the 1x1 across rows).
  const Tensor log_p = add_rowvec(pair_cos, mul_scalar(log_d, -1.0));
  const Tensor w = Tensor::from_values(static_cast<int>(weights.size()), 1, weights);
  return sub(base, sum_all(mul(log_p, w)));
}

// Mean over the 2N labeled positives of corrected_local. Reduces exactly to
// infonce_global when the sets are empty or beta == 0.
inline Tensor corrected_global(const SimilarityBundle& b, const SampleSets& sets, double beta,
                               bool intra = true) {
  if (!(beta >= 0.0)) throw std::invalid_argument("corrected_global: beta must be >= 0");
  const detail::PairConstants pc = detail::pair_constants(b, sets, beta);
  const Tensor base = detail::nce_base(b, intra, &pc.r1, &pc.r2);
  const Tensor pair_term = mul_scalar(
      add(sum_all(mul(b.cos_uv, pc.w_uv1)), sum_all(mul(b.cos_uv, pc.w_uv2))), 1.0 / b.tau);
  return mul_scalar(sub(base, pair_term), 1.0 / (2.0 * b.n));
}

// Additive comparator: folds each unlabeled positive's likelihood into the
// numerator as P_diag + sum alpha_k P_k instead of a likelihood product.
// Reduces to infonce_global when every alpha is 0.
inline Tensor linear_combination_global(const SimilarityBundle& b, const SampleSets& sets,
                                        const std::vector<double>& alphas, bool intra = true) {
  if (alphas.size() != sets.pairs.size())
    throw std::invalid_argument("linear_combination_global: alphas misaligned with sets");
  Tensor a1(b.n, b.n), a2(b.n, b.n);
  for (std::size_t k = 0; k < sets.pairs.size(); ++k) {
    const PairRef& p = sets.pairs[k];
    detail::check_pair(b, p);
    const auto [r, c] = detail::pair_coord(p);
    (p.view == 1 ? a1 : a2).values()[static_cast<std::size_t>(r) * b.n + c] += alphas[k];
  }
  const Tensor d1 = detail::anchor_denominators(b, 1, intra);
  const Tensor d2 = detail::anchor_denominators(b, 2, intra);
  // Positive mass per anchor: s_diag + sum_j alpha_ij s_ij.
  const Tensor mass1 = add(diag(b.s_uv), row_sum(mul(b.s_uv, a1)));
  const Tensor s_vu = transpose(b.s_uv);
  const Tensor mass2 = add(diag(s_vu), row_sum(mul(s_vu, transpose(a2))));
  const Tensor total = add(sum_all(sub(log(d1), log(mass1))), sum_all(sub(log(d2), log(mass2))));
  return mul_scalar(total, 1.0 / (2.0 * b.n));
}

}  // namespace ifl
