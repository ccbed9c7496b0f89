#pragma once

// Two-layer GCN encoder H = A_norm * relu(A_norm * X * W1) * W2, Glorot
// initialization, Adam / plain SGD updates, and a binary checkpoint format
// with bit-exact round trips.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ifl/errors.hpp"
#include "ifl/rng.hpp"
#include "ifl/sparse.hpp"
#include "ifl/tensor.hpp"

namespace ifl {

struct EncoderParams {
  Tensor w1;  // F x d_hidden
  Tensor w2;  // d_hidden x d

  int feature_dim() const { return w1.rows(); }
  int hidden_dim() const { return w1.cols(); }
  int output_dim() const { return w2.cols(); }

  EncoderParams deep_copy() const { return {w1.detached_copy(), w2.detached_copy()}; }
};

inline Tensor glorot_uniform(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  Tensor t(rows, cols);
  for (auto& x : t.values()) x = rng.uniform(-bound, bound);
  return t;
}

inline EncoderParams init_params(int feature_dim, int hidden_dim, int output_dim,
                                 std::uint64_t seed) {
  if (feature_dim <= 0 || hidden_dim <= 0 || output_dim <= 0)
    throw std::invalid_argument("init_params: dimensions must be positive");
  Rng rng(mix_seed(seed, 0x61u));
  EncoderParams p;
  p.w1 = glorot_uniform(feature_dim, hidden_dim, rng);
  p.w2 = glorot_uniform(hidden_dim, output_dim, rng);
  return p;
}

// Works for both tracked (training) and untracked (inference) weights.
inline Tensor encode(const Tensor& w1, const Tensor& w2, const SparseMatrix& a_norm,
                     const Tensor& x) {
  return spmm(a_norm, matmul(relu(spmm(a_norm, matmul(x, w1))), w2));
}

inline Tensor encode(const EncoderParams& params, const SparseMatrix& a_norm, const Tensor& x) {
  return encode(params.w1, params.w2, a_norm, x);
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { Adam, Sgd };

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Owns per-parameter moment buffers; parameters are updated in place.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, AdamConfig cfg) : kind_(kind), cfg_(cfg) {}

  int step_count() const { return step_; }

  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("Optimizer::step: params/grads count mismatch");
    for (std::size_t p = 0; p < params.size(); ++p)
      for (double gv : grads[p].values())
        if (!std::isfinite(gv))
          throw NumericError("Optimizer::step: non-finite gradient in parameter " +
                             std::to_string(p) + " at step " + std::to_string(step_ + 1));

    if (kind_ == OptimizerKind::Sgd) {
      ++step_;
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p]->values();
        const auto& gv = grads[p].values();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg_.lr * gv[i];
      }
      return;
    }

    if (m1_.empty()) {
      for (const auto* t : params) {
        m1_.emplace_back(t->size(), 0.0);
        m2_.emplace_back(t->size(), 0.0);
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& w = params[p]->values();
      const auto& gv = grads[p].values();
      auto& m = m1_[p];
      auto& v = m2_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gv[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gv[i] * gv[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  OptimizerKind kind_;
  AdamConfig cfg_;
  int step_ = 0;
  std::vector<std::vector<double>> m1_, m2_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
// Little-endian layout: "IFLG", version u32, F u32, d_hidden u32, d u32,
// then W1 and W2 as row-major f64.

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_f64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const EncoderParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write("IFLG", 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(params.feature_dim()));
  detail::write_u32(out, static_cast<std::uint32_t>(params.hidden_dim()));
  detail::write_u32(out, static_cast<std::uint32_t>(params.output_dim()));
  for (double v : params.w1.values()) detail::write_f64(out, v);
  for (double v : params.w2.values()) detail::write_f64(out, v);
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

inline EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "IFLG", 4) != 0)
    throw DataError("bad checkpoint magic in " + path);
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const int f = static_cast<int>(detail::read_u32(in));
  const int dh = static_cast<int>(detail::read_u32(in));
  const int d = static_cast<int>(detail::read_u32(in));
  if (!in || f <= 0 || dh <= 0 || d <= 0) throw DataError("bad checkpoint header in " + path);
  Tensor w1(f, dh), w2(dh, d);
  for (auto& v : w1.values()) v = detail::read_f64(in);
  for (auto& v : w2.values()) v = detail::read_f64(in);
  if (!in) throw DataError("truncated checkpoint: " + path);
  return {std::move(w1), std::move(w2)};
}

}  // namespace ifl
