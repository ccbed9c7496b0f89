#pragma once

// Built-in verification battery: per-primitive gradient checks, end-to-end
// gradient checks through the encoder for both objectives, equivalence of
// the vectorized losses against the straight-line references, reduction
// identities, and resampler properties.

#include <cmath>
#include <string>
#include <vector>

#include "ifl/contrastive.hpp"
#include "ifl/encoder.hpp"
#include "ifl/grad_check.hpp"
#include "ifl/graph.hpp"
#include "ifl/reference.hpp"
#include "ifl/rng.hpp"

namespace ifl::selftest {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline Tensor random_tensor(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

inline reference::Rows to_rows(const Tensor& t) {
  reference::Rows rows(t.rows(), std::vector<double>(t.cols()));
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j) rows[i][j] = t.at(i, j);
  return rows;
}

inline void check_grad(std::vector<Check>& out, const std::string& name, const LossFn& f,
                       const std::vector<Tensor>& params, double tol = 1e-5) {
  Check c{name};
  try {
    const double err = grad_check(f, params);
    c.pass = err < tol;
    c.detail = "rel err " + std::to_string(err);
  } catch (const std::exception& e) {
    c.pass = false;
    c.detail = e.what();
  }
  out.push_back(c);
}

inline void check_close(std::vector<Check>& out, const std::string& name, double got,
                        double want, double tol) {
  const double diff = std::abs(got - want);
  out.push_back({name, diff <= tol,
                 "got " + std::to_string(got) + ", want " + std::to_string(want) + ", diff " +
                     std::to_string(diff)});
}

inline void check_true(std::vector<Check>& out, const std::string& name, bool cond,
                       const std::string& detail = "") {
  out.push_back({name, cond, detail});
}

inline SampleSets sets_from_bundle(const SimilarityBundle& bundle, double t_s) {
  return classify_unlabeled(bundle, t_s);
}

}  // namespace detail

inline std::vector<Check> run_all() {
  using detail::check_close;
  using detail::check_grad;
  using detail::check_true;
  using detail::random_tensor;
  std::vector<Check> out;
  Rng rng(20240u);

  // --- primitive gradient checks -----------------------------------------
  {
    Tensor a = random_tensor(4, 5, rng), b = random_tensor(4, 5, rng);
    check_grad(out, "grad add",
               [](const std::vector<Tensor>& p) { return sum_all(add(p[0], p[1])); }, {a, b});
    check_grad(out, "grad sub",
               [](const std::vector<Tensor>& p) { return sum_all(mul(sub(p[0], p[1]), p[1])); },
               {a, b});
    check_grad(out, "grad mul",
               [](const std::vector<Tensor>& p) { return sum_all(mul(p[0], p[1])); }, {a, b});
    Tensor denom = random_tensor(4, 5, rng, 0.5, 2.0);
    check_grad(out, "grad div",
               [](const std::vector<Tensor>& p) { return sum_all(div(p[0], p[1])); }, {a, denom});
    check_grad(out, "grad add_scalar/mul_scalar",
               [](const std::vector<Tensor>& p) {
                 return sum_all(mul_scalar(add_scalar(p[0], 0.7), -1.3));
               },
               {a});
    Tensor rowvec = random_tensor(1, 5, rng);
    check_grad(out, "grad add_rowvec",
               [](const std::vector<Tensor>& p) {
                 return sum_all(mul(add_rowvec(p[0], p[1]), p[0]));
               },
               {a, rowvec});
  }
  {
    Tensor a = random_tensor(5, 7, rng), b = random_tensor(7, 3, rng);
    check_grad(out, "grad matmul",
               [](const std::vector<Tensor>& p) { return sum_all(matmul(p[0], p[1])); }, {a, b});
    check_grad(out, "grad transpose",
               [](const std::vector<Tensor>& p) { return sum_all(mul(transpose(p[0]), p[1])); },
               {b, Tensor(3, 7, 0.5)});
  }
  {
    // 16x16 sparse at ~10% density against a 16x4 dense factor.
    std::vector<std::tuple<int, int, double>> entries;
    Rng sp(99u);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c)
        if (sp.bernoulli(0.1)) entries.emplace_back(r, c, sp.uniform(-1.0, 1.0));
    const SparseMatrix s = SparseMatrix::from_coo(16, 16, entries);
    Tensor b = random_tensor(16, 4, rng);
    check_grad(out, "grad spmm",
               [s](const std::vector<Tensor>& p) { return sum_all(spmm(s, p[0])); }, {b});
    const Tensor dense_route = matmul(to_dense(s), b);
    const Tensor sparse_route = spmm(s, b);
    double worst = 0.0;
    for (std::size_t i = 0; i < dense_route.size(); ++i)
      worst = std::max(worst,
                       std::abs(dense_route.values()[i] - sparse_route.values()[i]));
    check_close(out, "spmm equals densified matmul", worst, 0.0, 1e-12);
  }
  {
    Tensor a = random_tensor(4, 4, rng, 0.2, 1.5);
    check_grad(out, "grad exp",
               [](const std::vector<Tensor>& p) { return sum_all(exp(p[0])); }, {a});
    check_grad(out, "grad log",
               [](const std::vector<Tensor>& p) { return sum_all(log(p[0])); }, {a});
    check_grad(out, "grad sqrt",
               [](const std::vector<Tensor>& p) { return sum_all(sqrt(p[0])); }, {a});
    Tensor shifted = random_tensor(4, 6, rng);
    for (auto& x : shifted.values()) x += (x >= 0.0 ? 0.2 : -0.2);  // keep FD away from the kink
    check_grad(out, "grad relu",
               [](const std::vector<Tensor>& p) { return sum_all(relu(p[0])); }, {shifted});
    check_grad(out, "grad row_sum/mean",
               [](const std::vector<Tensor>& p) {
                 return mean_all(mul(row_sum(p[0]), row_sum(p[0])));
               },
               {a});
    check_grad(out, "grad diag",
               [](const std::vector<Tensor>& p) { return sum_all(mul(diag(p[0]), diag(p[0]))); },
               {a});
    check_grad(out, "grad gather",
               [](const std::vector<Tensor>& p) {
                 return sum_all(mul(gather(p[0], {{0, 1}, {2, 3}, {3, 0}}),
                                    gather(p[0], {{1, 1}, {2, 2}, {0, 0}})));
               },
               {a});
  }
  {
    Tensor u = random_tensor(6, 8, rng), v = random_tensor(6, 8, rng);
    check_grad(out, "grad cosine_rows",
               [](const std::vector<Tensor>& p) { return sum_all(cosine_rows(p[0], p[1])); },
               {u, v});
    check_grad(out, "grad cosine_rows (eps guard)",
               [](const std::vector<Tensor>& p) {
                 return sum_all(cosine_rows(p[0], p[1], 1e-12));
               },
               {u, v});
    check_grad(out, "grad cosine_rows self",
               [](const std::vector<Tensor>& p) { return sum_all(cosine_rows(p[0], p[0])); },
               {u});
  }
  {
    Tensor logits = random_tensor(6, 3, rng);
    const std::vector<int> labels{0, 2, 1, 0, 1, 2};
    const std::vector<int> mask{0, 2, 3, 5};
    check_grad(out, "grad softmax cross-entropy",
               [labels, mask](const std::vector<Tensor>& p) {
                 return masked_softmax_xent(p[0], labels, mask);
               },
               {logits});
  }
  {
    // Quadratic and constant sanity examples for the checker itself.
    Tensor w = random_tensor(3, 3, rng);
    const double quad_err =
        grad_check([](const std::vector<Tensor>& p) { return sum_all(mul(p[0], p[0])); }, {w});
    check_close(out, "grad_check quadratic", quad_err, 0.0, 1e-9);
    const double const_err =
        grad_check([](const std::vector<Tensor>& p) { return mul_scalar(sum_all(mul_scalar(p[0], 0.0)), 1.0); },
                   {w});
    check_close(out, "grad_check constant", const_err, 0.0, 1e-12);
    // Canary: a mismatched analytic path must be flagged, not absorbed.
    const double canary =
        grad_check([](const std::vector<Tensor>& p) { return sum_all(mul(p[0], detach(p[0]))); },
                   {w});
    check_true(out, "grad_check flags sign-broken backward", canary > 0.1,
               "rel err " + std::to_string(canary));
  }

  // --- end-to-end objectives through the encoder --------------------------
  {
    SbmSpec spec;
    spec.block_sizes = {4, 4};
    spec.p_in = 0.8;
    spec.p_out = 0.1;
    spec.feature_dim = 6;
    spec.mean_scale = 2.0;
    spec.noise_sigma = 0.5;
    spec.seed = 11;
    const Graph g = sbm_generate(spec);
    const SparseMatrix a1 = normalize_adjacency(g);
    Graph g2 = g;
    g2.features = random_tensor(g.num_nodes, spec.feature_dim, rng);
    const SparseMatrix a2 = normalize_adjacency(g2);
    const Tensor x1 = g.features, x2 = g2.features;
    const EncoderParams init = init_params(spec.feature_dim, 5, 4, 21u);
    const double tau = 0.5;

    auto encode_bundle = [&](const std::vector<Tensor>& p) {
      const Tensor u = encode(p[0], p[1], a1, x1);
      const Tensor v = encode(p[0], p[1], a2, x2);
      return build_similarity(u, v, tau, 1e-12);
    };
    check_grad(out, "grad infonce_global through encoder",
               [&](const std::vector<Tensor>& p) { return infonce_global(encode_bundle(p)); },
               {init.w1, init.w2});

    const SimilarityBundle probe = encode_bundle({init.w1, init.w2});
    SampleSets sets = classify_unlabeled(probe, 0.0);
    check_true(out, "e2e fixture discovers pairs", !sets.empty(),
               std::to_string(sets.size()) + " pairs");
    check_grad(out, "grad corrected_global through encoder (frozen sets)",
               [&](const std::vector<Tensor>& p) {
                 return corrected_global(encode_bundle(p), sets, 0.8);
               },
               {init.w1, init.w2});
    std::vector<double> alphas(sets.size(), 0.5);
    check_grad(out, "grad linear_combination_global through encoder",
               [&](const std::vector<Tensor>& p) {
                 return linear_combination_global(encode_bundle(p), sets, alphas);
               },
               {init.w1, init.w2});
  }

  // --- oracle equivalence --------------------------------------------------
  {
    Rng orng(7u);
    double worst_nce = 0.0, worst_corr = 0.0, worst_norm = 0.0, worst_lin = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 3 + static_cast<int>(orng.below(14));
      const int d = 3 + static_cast<int>(orng.below(5));
      const double tau = orng.uniform(0.3, 1.2);
      Tensor u = random_tensor(n, d, orng), v = random_tensor(n, d, orng);
      const SimilarityBundle b = build_similarity(u, v, tau);
      const auto ru = detail::to_rows(u), rv = detail::to_rows(v);

      worst_nce = std::max(worst_nce, std::abs(scalar_value(infonce_global(b)) -
                                               reference::infonce_global(ru, rv, tau, true)));

      const SampleSets sets = classify_unlabeled(b, orng.uniform(-0.2, 0.6));
      std::vector<reference::WeightedPair> ref_pairs;
      for (std::size_t k = 0; k < sets.pairs.size(); ++k)
        ref_pairs.push_back({sets.pairs[k].view, sets.pairs[k].i, sets.pairs[k].j,
                             sets.weights[k]});
      const double beta = orng.uniform(0.2, 1.5);
      worst_corr = std::max(
          worst_corr, std::abs(scalar_value(corrected_global(b, sets, beta)) -
                               reference::corrected_global(ru, rv, tau, ref_pairs, beta, true)));

      worst_lin = std::max(worst_lin,
                           std::abs(scalar_value(linear_combination_global(b, sets, sets.weights)) -
                                    reference::linear_combination_global(ru, rv, tau, ref_pairs,
                                                                         sets.weights, true)));

      const int anchor = static_cast<int>(orng.below(n));
      for (int view = 1; view <= 2; ++view) {
        double prob_sum = 0.0;
        for (int j = 0; j < n; ++j)
          prob_sum += std::exp(scalar_value(log_prob(b, view, anchor, j)));
        const Tensor& same = view == 1 ? b.s_uu : b.s_vv;
        const Tensor denom = ifl::detail::anchor_denominators(b, view, true);
        for (int j = 0; j < n; ++j)
          if (j != anchor) prob_sum += same.at(anchor, j) / denom.at(anchor, 0);
        worst_norm = std::max(worst_norm, std::abs(prob_sum - 1.0));
      }
    }
    check_close(out, "infonce matches reference loops", worst_nce, 0.0, 1e-12);
    check_close(out, "corrected loss matches reference loops", worst_corr, 0.0, 1e-12);
    check_close(out, "linear combination matches reference loops", worst_lin, 0.0, 1e-12);
    check_close(out, "candidate probabilities sum to one", worst_norm, 0.0, 1e-12);
  }

  // --- reduction identities -------------------------------------------------
  {
    Rng irng(13u);
    Tensor u = random_tensor(6, 4, irng), v = random_tensor(6, 4, irng);
    const SimilarityBundle b = build_similarity(u, v, 0.5);
    const double base = scalar_value(infonce_global(b));
    check_close(out, "corrected(empty) == infonce",
                scalar_value(corrected_global(b, SampleSets{}, 1.0)), base, 1e-12);
    const SampleSets sets = classify_unlabeled(b, 0.0);
    check_close(out, "corrected(beta=0) == infonce",
                scalar_value(corrected_global(b, sets, 0.0)), base, 1e-12);
    check_close(out, "linear_combination(alpha=0) == infonce",
                scalar_value(linear_combination_global(b, sets,
                                                       std::vector<double>(sets.size(), 0.0))),
                base, 1e-12);
  }

  // --- resampler properties ---------------------------------------------------
  {
    Rng srng(17u);
    Tensor u = random_tensor(8, 5, srng), v = random_tensor(8, 5, srng);
    const SimilarityBundle b = build_similarity(u, v, 0.4);
    std::size_t prev = SIZE_MAX;
    bool monotone = true, in_range = true, no_diag = true;
    for (double t_s : {-1.0, -0.5, 0.0, 0.3, 0.6, 0.9, 1.0}) {
      const SampleSets sets = classify_unlabeled(b, t_s);
      if (sets.size() > prev) monotone = false;
      prev = sets.size();
      for (const auto& p : sets.pairs) {
        const auto [r, c] = ifl::detail::pair_coord(p);
        if (b.cos_uv.at(r, c) < t_s) in_range = false;
        if (p.i == p.j) no_diag = false;
      }
    }
    check_true(out, "resampler size non-increasing in threshold", monotone);
    check_true(out, "resampled pairs satisfy the threshold", in_range);
    check_true(out, "resampler excludes the diagonal", no_diag);

    // Boundary: an exact cosine of 1 must be included at t_s == 1.
    Tensor bu = Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    Tensor bv = Tensor::from_rows({{1.0, 0.0}, {1.0, 0.0}});
    const SimilarityBundle bb = build_similarity(bu, bv, 0.5);
    const SampleSets boundary = classify_unlabeled(bb, 1.0);
    bool found = false;
    for (const auto& p : boundary.pairs)
      if (p.view == 1 && p.i == 0 && p.j == 1) found = true;
    check_true(out, "boundary cosine == threshold is included", found);

    double max_offdiag = -2.0;
    for (int i = 0; i < b.n; ++i)
      for (int j = 0; j < b.n; ++j)
        if (i != j) max_offdiag = std::max(max_offdiag, b.cos_uv.at(i, j));
    const SampleSets empty = classify_unlabeled(b, std::nextafter(max_offdiag, 2.0));
    check_true(out, "threshold above max leaves the set empty", empty.empty());
  }

  // --- determinism -----------------------------------------------------------
  {
    Rng drng(23u);
    Tensor u = random_tensor(5, 4, drng), v = random_tensor(5, 4, drng);
    auto gradients = [&]() {
      Tape tape;
      Tensor ut = tape.var(u), vt = tape.var(v);
      const SimilarityBundle b = build_similarity(ut, vt, 0.5);
      tape.backward(infonce_global(b));
      return std::make_pair(tape.grad(ut).values(), tape.grad(vt).values());
    };
    const auto first = gradients();
    const auto second = gradients();
    check_true(out, "backward is bit-deterministic",
               first.first == second.first && first.second == second.second);
  }

  return out;
}

inline bool all_passed(const std::vector<Check>& checks) {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

}  // namespace ifl::selftest
