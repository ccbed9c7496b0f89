#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ifl/contrastive.hpp"
#include "ifl/grad_check.hpp"
#include "ifl/reference.hpp"
#include "ifl/rng.hpp"

using namespace ifl;

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols);
  for (auto& x : t.values()) x = rng.uniform(-1.0, 1.0);
  return t;
}

reference::Rows to_rows(const Tensor& t) {
  reference::Rows rows(t.rows(), std::vector<double>(t.cols()));
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j) rows[i][j] = t.at(i, j);
  return rows;
}

std::vector<reference::WeightedPair> to_reference(const SampleSets& sets) {
  std::vector<reference::WeightedPair> pairs;
  for (std::size_t k = 0; k < sets.pairs.size(); ++k)
    pairs.push_back({sets.pairs[k].view, sets.pairs[k].i, sets.pairs[k].j, sets.weights[k]});
  return pairs;
}

// A bundle whose matrices are injected directly; enough for the pieces that
// only read values.
SimilarityBundle fake_bundle(const Tensor& cos_uv, double tau) {
  SimilarityBundle b;
  b.n = cos_uv.rows();
  b.tau = tau;
  b.cos_uv = cos_uv;
  b.s_uv = exp(mul_scalar(cos_uv, 1.0 / tau));
  b.cos_uu = Tensor(b.n, b.n);
  b.cos_vv = Tensor(b.n, b.n);
  b.s_uu = exp(b.cos_uu);
  b.s_vv = exp(b.cos_vv);
  return b;
}

}  // namespace

TEST_CASE("build_similarity") {
  SECTION("identical single rows at tau=0.5 give exp(2)") {
    const Tensor u = Tensor::from_rows({{1.0, 0.0}});
    const SimilarityBundle b = build_similarity(u, u, 0.5);
    REQUIRE(b.s_uv.at(0, 0) == Catch::Approx(std::exp(2.0)).epsilon(1e-12));
  }
  SECTION("orthogonal single rows give exp(0) = 1") {
    const SimilarityBundle b = build_similarity(Tensor::from_rows({{1.0, 0.0}}),
                                                Tensor::from_rows({{0.0, 1.0}}), 0.5);
    REQUIRE(b.s_uv.at(0, 0) == 1.0);
  }
  SECTION("s equals exp(cos/tau) elementwise") {
    Rng rng(1);
    const SimilarityBundle b =
        build_similarity(random_tensor(5, 3, rng), random_tensor(5, 3, rng), 0.7);
    for (std::size_t k = 0; k < b.s_uv.size(); ++k)
      REQUIRE(std::abs(b.s_uv.values()[k] - std::exp(b.cos_uv.values()[k] / 0.7)) < 1e-14);
  }
  SECTION("intra-view diagonals are 1") {
    Rng rng(2);
    const SimilarityBundle b =
        build_similarity(random_tensor(4, 3, rng), random_tensor(4, 3, rng), 0.5);
    for (int i = 0; i < 4; ++i) {
      REQUIRE(b.cos_uu.at(i, i) == Catch::Approx(1.0).margin(1e-12));
      REQUIRE(b.cos_vv.at(i, i) == Catch::Approx(1.0).margin(1e-12));
    }
  }
  SECTION("non-positive temperature rejected") {
    const Tensor u = Tensor::from_rows({{1.0, 0.0}});
    REQUIRE_THROWS_AS(build_similarity(u, u, 0.0), std::invalid_argument);
  }
}

TEST_CASE("infonce") {
  SECTION("single node loses nothing") {
    const Tensor u = Tensor::from_rows({{0.6, 0.8}});
    const SimilarityBundle b = build_similarity(u, u, 0.5);
    REQUIRE(scalar_value(infonce_local(b, 1, 0)) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(scalar_value(infonce_global(b)) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("all-identical embeddings give log(2N-1)") {
    for (int n : {2, 5}) {
      Tensor u(n, 3, 1.0);
      const SimilarityBundle b = build_similarity(u, u, 0.5);
      REQUIRE(scalar_value(infonce_local(b, 1, 0)) ==
              Catch::Approx(std::log(2.0 * n - 1.0)).epsilon(1e-12));
      REQUIRE(scalar_value(infonce_global(b)) ==
              Catch::Approx(std::log(2.0 * n - 1.0)).epsilon(1e-12));
    }
  }
  SECTION("matches the reference loops") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      const int n = trial == 0 ? 4 : 8;
      const Tensor u = random_tensor(n, 5, rng), v = random_tensor(n, 5, rng);
      const SimilarityBundle b = build_similarity(u, v, 0.5);
      const auto ru = to_rows(u), rv = to_rows(v);
      REQUIRE(std::abs(scalar_value(infonce_global(b)) -
                       reference::infonce_global(ru, rv, 0.5, true)) < 1e-12);
      for (int i = 0; i < n; ++i)
        for (int view : {1, 2})
          REQUIRE(std::abs(scalar_value(infonce_local(b, view, i)) -
                           reference::infonce_local(ru, rv, 0.5, view, i, true)) < 1e-12);
    }
  }
  SECTION("intra-view negatives can be excluded") {
    Rng rng(4);
    const Tensor u = random_tensor(4, 3, rng), v = random_tensor(4, 3, rng);
    const SimilarityBundle b = build_similarity(u, v, 0.5);
    REQUIRE(std::abs(scalar_value(infonce_global(b, false)) -
                     reference::infonce_global(to_rows(u), to_rows(v), 0.5, false)) < 1e-12);
  }
}

TEST_CASE("log_prob") {
  SECTION("two identical nodes make every candidate probability 1/3") {
    Tensor u(2, 2, 1.0);
    const SimilarityBundle b = build_similarity(u, u, 0.5);
    REQUIRE(scalar_value(log_prob(b, 1, 0, 0)) == Catch::Approx(-std::log(3.0)).epsilon(1e-12));
    REQUIRE(scalar_value(log_prob(b, 1, 0, 1)) == Catch::Approx(-std::log(3.0)).epsilon(1e-12));
  }
  SECTION("the diagonal reproduces -infonce_local") {
    Rng rng(5);
    const Tensor u = random_tensor(5, 4, rng), v = random_tensor(5, 4, rng);
    const SimilarityBundle b = build_similarity(u, v, 0.6);
    for (int i = 0; i < 5; ++i)
      REQUIRE(scalar_value(log_prob(b, 2, i, i)) ==
              Catch::Approx(-scalar_value(infonce_local(b, 2, i))).epsilon(1e-12));
  }
  SECTION("probabilities of the full candidate set sum to 1") {
    Rng rng(6);
    const int n = 5;
    const Tensor u = random_tensor(n, 4, rng), v = random_tensor(n, 4, rng);
    const SimilarityBundle b = build_similarity(u, v, 0.5);
    for (int view : {1, 2})
      for (int i = 0; i < n; ++i) {
        double total = 0.0;
        for (int j = 0; j < n; ++j) total += std::exp(scalar_value(log_prob(b, view, i, j)));
        const Tensor& same = view == 1 ? b.s_uu : b.s_vv;
        const Tensor denom = ifl::detail::anchor_denominators(b, view, true);
        for (int j = 0; j < n; ++j)
          if (j != i) total += same.at(i, j) / denom.at(i, 0);
        REQUIRE(std::abs(total - 1.0) < 1e-12);
      }
  }
}

TEST_CASE("normalized_similarity") {
  SECTION("known values (s - min) / max") {
    Tensor s(1, 3);
    // Injected via cosines: the fake bundle recomputes s = exp(cos/tau).
    // Instead check the formula on a bundle built from the s values we want.
    SimilarityBundle b;
    b.n = 1;
    b.tau = 0.5;
    b.s_uv = Tensor::from_values(1, 3, {1.0, 2.0, 4.0});
    // Not square, but normalized_similarity only reads s_uv values.
    const Tensor shat = normalized_similarity(b);
    REQUIRE(shat.values()[0] == 0.0);
    REQUIRE(shat.values()[1] == 0.25);
    REQUIRE(shat.values()[2] == 0.75);
  }
  SECTION("constant matrix collapses to zero") {
    SimilarityBundle b;
    b.n = 2;
    b.s_uv = Tensor(2, 2, 3.5);
    const Tensor shat = normalized_similarity(b);
    for (double v : shat.values()) REQUIRE(v == 0.0);
  }
  SECTION("extremes map to 0 and (max-min)/max; output is untracked") {
    Rng rng(7);
    Tape tape;
    const Tensor u = tape.var(random_tensor(6, 3, rng));
    const Tensor v = tape.var(random_tensor(6, 3, rng));
    const SimilarityBundle b = build_similarity(u, v, 0.5);
    const Tensor shat = normalized_similarity(b);
    REQUIRE_FALSE(shat.tracked());
    double lo = 1e300, hi = -1e300, shat_lo = 1e300, shat_hi = -1e300;
    for (double x : b.s_uv.values()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    for (double x : shat.values()) {
      shat_lo = std::min(shat_lo, x);
      shat_hi = std::max(shat_hi, x);
    }
    REQUIRE(shat_lo == 0.0);
    REQUIRE(shat_hi == Catch::Approx((hi - lo) / hi).epsilon(1e-14));
  }
}

TEST_CASE("classify_unlabeled") {
  SECTION("threshold rule on a fixed cosine matrix") {
    const Tensor cos_uv = Tensor::from_rows({{0.99, 0.92}, {0.30, 0.98}});
    const SimilarityBundle b = fake_bundle(cos_uv, 0.5);
    const SampleSets sets = classify_unlabeled(b, 0.9);
    // The 0.30 entry stays out; the 0.92 entry is found from both anchor sides.
    REQUIRE(sets.size() == 2);
    REQUIRE(sets.pairs[0] == PairRef{1, 0, 1});
    REQUIRE(sets.pairs[1] == PairRef{2, 1, 0});
  }
  SECTION("threshold above every off-diagonal empties the set") {
    Rng rng(8);
    const SimilarityBundle b =
        build_similarity(random_tensor(6, 4, rng), random_tensor(6, 4, rng), 0.5);
    double max_off = -2.0;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        if (i != j) max_off = std::max(max_off, b.cos_uv.at(i, j));
    REQUIRE(classify_unlabeled(b, std::nextafter(max_off, 2.0)).empty());
  }
  SECTION("set size is monotone non-increasing in the threshold") {
    Rng rng(9);
    const SimilarityBundle b =
        build_similarity(random_tensor(10, 4, rng), random_tensor(10, 4, rng), 0.5);
    std::size_t prev = SIZE_MAX;
    for (double t = -1.0; t <= 1.0; t += 0.05) {
      const std::size_t size = classify_unlabeled(b, t).size();
      REQUIRE(size <= prev);
      prev = size;
    }
  }
  SECTION("weights are the normalized similarities at the pair entries") {
    Rng rng(10);
    const SimilarityBundle b =
        build_similarity(random_tensor(5, 3, rng), random_tensor(5, 3, rng), 0.5);
    const Tensor shat = normalized_similarity(b);
    const SampleSets sets = classify_unlabeled(b, -1.0);
    REQUIRE(sets.size() == 2 * 5 * 4);  // every off-diagonal pair, both directions
    double lo = 1e300, hi = -1e300;
    for (double x : b.s_uv.values()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const auto [r, c] = ifl::detail::pair_coord(sets.pairs[k]);
      REQUIRE(sets.weights[k] == shat.at(r, c));
      REQUIRE(sets.weights[k] >= 0.0);
      REQUIRE(sets.weights[k] <= (hi - lo) / hi + 1e-15);
    }
  }
  SECTION("order invariance between cosine and similarity") {
    Rng rng(11);
    const SimilarityBundle b =
        build_similarity(random_tensor(6, 4, rng), random_tensor(6, 4, rng), 0.37);
    for (int a = 0; a < 6; ++a)
      for (int c = 0; c < 6; ++c)
        for (int d = 0; d < 6; ++d)
          REQUIRE((b.cos_uv.at(a, c) <= b.cos_uv.at(c, d)) ==
                  (b.s_uv.at(a, c) <= b.s_uv.at(c, d)));
  }
}

TEST_CASE("corrected loss") {
  Rng rng(12);
  const Tensor u = random_tensor(5, 4, rng), v = random_tensor(5, 4, rng);
  const SimilarityBundle b = build_similarity(u, v, 0.5);
  const double base = scalar_value(infonce_global(b));

  SECTION("empty sets reduce to InfoNCE exactly") {
    REQUIRE(std::abs(scalar_value(corrected_global(b, SampleSets{}, 1.0)) - base) <= 1e-12);
    for (int i = 0; i < 5; ++i)
      REQUIRE(scalar_value(corrected_local(b, SampleSets{}, 1, i, 1.0)) ==
              scalar_value(infonce_local(b, 1, i)));
  }
  SECTION("beta = 0 reduces to InfoNCE exactly") {
    const SampleSets sets = classify_unlabeled(b, 0.0);
    REQUIRE_FALSE(sets.empty());
    REQUIRE(std::abs(scalar_value(corrected_global(b, sets, 0.0)) - base) <= 1e-12);
  }
  SECTION("matches the reference loops with discovered sets") {
    const SampleSets sets = classify_unlabeled(b, 0.1);
    const auto ref_pairs = to_reference(sets);
    const auto ru = to_rows(u), rv = to_rows(v);
    REQUIRE(std::abs(scalar_value(corrected_global(b, sets, 0.8)) -
                     reference::corrected_global(ru, rv, 0.5, ref_pairs, 0.8, true)) < 1e-12);
    for (int i = 0; i < 5; ++i)
      for (int view : {1, 2})
        REQUIRE(std::abs(scalar_value(corrected_local(b, sets, view, i, 0.8)) -
                         reference::corrected_local(ru, rv, 0.5, ref_pairs, 0.8, view, i, true)) <
                1e-12);
  }
  SECTION("three-node case against a hand-expanded sum") {
    const Tensor u3 = Tensor::from_rows({{1.0, 0.0}, {0.8, 0.6}, {0.0, 1.0}});
    const Tensor v3 = Tensor::from_rows({{0.6, 0.8}, {1.0, 0.0}, {0.8, -0.6}});
    const SimilarityBundle b3 = build_similarity(u3, v3, 0.5);
    SampleSets sets;
    sets.pairs = {{1, 0, 1}};
    sets.weights = {0.4};
    // Expanded by hand: the anchor term plus the weighted pair term.
    auto s = [&](const Tensor& a, const Tensor& bb, int i, int j) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (int k = 0; k < 2; ++k) {
        dot += a.at(i, k) * bb.at(j, k);
        na += a.at(i, k) * a.at(i, k);
        nb += bb.at(j, k) * bb.at(j, k);
      }
      return std::exp(dot / (std::sqrt(na) * std::sqrt(nb)) / 0.5);
    };
    const double denom = s(u3, u3, 0, 1) + s(u3, u3, 0, 2) + s(u3, v3, 0, 0) + s(u3, v3, 0, 1) +
                         s(u3, v3, 0, 2);
    const double expected = -std::log(s(u3, v3, 0, 0) / denom) -
                            0.9 * 0.4 * std::log(s(u3, v3, 0, 1) / denom);
    REQUIRE(scalar_value(corrected_local(b3, sets, 1, 0, 0.9)) ==
            Catch::Approx(expected).epsilon(1e-12));
  }
  SECTION("adding a weighted positive changes the loss") {
    SampleSets sets;
    sets.pairs = {{1, 2, 3}};
    sets.weights = {0.5};
    const double with_pair = scalar_value(corrected_global(b, sets, 1.0));
    REQUIRE(std::abs(with_pair - base) > 1e-9);  // log P of the pair is nonzero here
  }
  SECTION("diagonal pairs are rejected") {
    SampleSets sets;
    sets.pairs = {{1, 2, 2}};
    sets.weights = {0.5};
    REQUIRE_THROWS_AS(corrected_global(b, sets, 1.0), std::invalid_argument);
  }
  SECTION("gradient with frozen weights matches central differences") {
    const SampleSets sets = classify_unlabeled(b, 0.0);
    const double err = grad_check(
        [&](const std::vector<Tensor>& p) {
          return corrected_global(build_similarity(p[0], p[1], 0.5), sets, 1.0);
        },
        {u, v});
    REQUIRE(err < 1e-5);
  }
}

TEST_CASE("linear combination comparator") {
  Rng rng(13);
  const Tensor u = random_tensor(6, 4, rng), v = random_tensor(6, 4, rng);
  const SimilarityBundle b = build_similarity(u, v, 0.5);
  const SampleSets sets = classify_unlabeled(b, 0.0);

  SECTION("all-zero alphas reduce to InfoNCE") {
    REQUIRE(std::abs(scalar_value(linear_combination_global(
                         b, sets, std::vector<double>(sets.size(), 0.0))) -
                     scalar_value(infonce_global(b))) <= 1e-12);
  }
  SECTION("a single unit alpha folds one extra likelihood into the numerator") {
    SampleSets one;
    one.pairs = {{1, 1, 3}};
    one.weights = {1.0};
    const double got = scalar_value(linear_combination_global(b, one, {1.0}));
    const auto ru = to_rows(u), rv = to_rows(v);
    REQUIRE(got == Catch::Approx(reference::linear_combination_global(
                       ru, rv, 0.5, {{1, 1, 3, 1.0}}, {1.0}, true))
                       .epsilon(1e-12));
  }
  SECTION("matches the reference loops") {
    const auto ru = to_rows(u), rv = to_rows(v);
    REQUIRE(std::abs(scalar_value(linear_combination_global(b, sets, sets.weights)) -
                     reference::linear_combination_global(ru, rv, 0.5, to_reference(sets),
                                                          sets.weights, true)) < 1e-12);
  }
  SECTION("the product objective upper-bounds the additive one on random instances") {
    Rng crng(14);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor cu = random_tensor(5, 3, crng), cv = random_tensor(5, 3, crng);
      const SimilarityBundle cb = build_similarity(cu, cv, 0.5);
      const SampleSets csets = classify_unlabeled(cb, 0.2);
      const double corrected = scalar_value(corrected_global(cb, csets, 1.0));
      const double additive =
          scalar_value(linear_combination_global(cb, csets, csets.weights));
      REQUIRE(corrected >= additive - 1e-12);
    }
  }
  SECTION("misaligned alphas rejected") {
    REQUIRE_THROWS_AS(linear_combination_global(b, sets, {}), std::invalid_argument);
  }
}
