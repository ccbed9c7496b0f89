#pragma once

// Tape-based reverse-mode differentiation over dense row-major double
// matrices, plus the sparse-times-dense product used for graph propagation.
// Ops work on untracked tensors too, in which case they are plain math.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ifl/errors.hpp"
#include "ifl/sparse.hpp"

namespace ifl {

class Tape;

class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols, double fill = 0.0)
      : rows_(rows),
        cols_(cols),
        data_(std::make_shared<std::vector<double>>(check_shape(rows, cols), fill)) {}

  // External-input entry point: rejects NaN/Inf.
  static Tensor from_values(int rows, int cols, std::vector<double> v) {
    if (static_cast<std::size_t>(check_shape(rows, cols)) != v.size())
      throw std::invalid_argument("Tensor::from_values: value count " + std::to_string(v.size()) +
                                  " != " + std::to_string(rows) + "x" + std::to_string(cols));
    for (double x : v)
      if (!std::isfinite(x)) throw std::invalid_argument("Tensor::from_values: non-finite value");
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_ = std::make_shared<std::vector<double>>(std::move(v));
    return t;
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows[0].size()) : 0;
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(r) * c);
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c)
        throw std::invalid_argument("Tensor::from_rows: ragged rows");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return from_values(r, c, std::move(flat));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return static_cast<std::size_t>(rows_) * cols_; }
  bool empty() const { return !data_; }

  double at(int r, int c) const { return (*data_)[static_cast<std::size_t>(r) * cols_ + c]; }

  const std::vector<double>& values() const { return *data_; }
  // In-place mutation is only meaningful for untracked tensors (parameters
  // between tapes); a tracked tensor's tape holds the same buffer.
  std::vector<double>& values() { return *data_; }

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  Tensor detached_copy() const {
    Tensor t;
    t.rows_ = rows_;
    t.cols_ = cols_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
  }

  std::shared_ptr<const std::vector<double>> shared_values() const { return data_; }

  // Internal: wraps an existing buffer without the finiteness check.
  static Tensor wrap(int rows, int cols, std::shared_ptr<std::vector<double>> data) {
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_ = std::move(data);
    return t;
  }

 private:
  friend class Tape;

  static int check_shape(int rows, int cols) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative shape");
    return rows * cols;
  }

  int rows_ = 0, cols_ = 0;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

inline double scalar_value(const Tensor& t) {
  if (t.rows() != 1 || t.cols() != 1)
    throw std::invalid_argument("scalar_value: tensor is " + std::to_string(t.rows()) + "x" +
                                std::to_string(t.cols()) + ", expected 1x1");
  return t.values()[0];
}

enum class Op {
  Leaf,
  Detach,
  Add,
  Sub,
  Mul,
  Div,
  AddScalar,
  MulScalar,
  AddRowVec,
  MatMul,
  SpMM,
  Transpose,
  Exp,
  Log,
  Sqrt,
  Relu,
  RowSum,
  SumAll,
  MeanAll,
  Diag,
  Gather,
  CosineRows,
  SoftmaxXent,
};

// Append-only record of recorded operations. Insertion order is topological
// order; backward walks it in strict reverse.
class Tape {
 public:
  struct Operand {
    int node = -1;  // -1: constant input, no gradient
    int rows = 0, cols = 0;
    std::shared_ptr<const std::vector<double>> values;

    bool live() const { return node >= 0; }
  };

  struct Record {
    Op op = Op::Leaf;
    int rows = 0, cols = 0;
    std::shared_ptr<std::vector<double>> values;
    Operand a, b;
    double scalar = 0.0;
    std::shared_ptr<const SparseMatrix> sparse;
    std::vector<std::pair<int, int>> coords;   // Gather targets
    std::vector<double> aux1, aux2;            // op-specific saved state
    std::vector<int> labels, mask;             // SoftmaxXent
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers an untracked tensor as a differentiable leaf. The returned
  // tensor shares the input's buffer.
  Tensor var(const Tensor& t) {
    Record rec;
    rec.op = Op::Leaf;
    rec.rows = t.rows();
    rec.cols = t.cols();
    rec.values = t.data_;
    Tensor out = t;
    out.tape_ = this;
    out.node_ = push(std::move(rec));
    return out;
  }

  std::size_t node_count() const { return records_.size(); }

  // Seeds d(root)/d(root) = 1 and accumulates gradients for every tracked
  // node in reverse insertion order. root must be 1x1.
  void backward(const Tensor& root) {
    if (root.tape_ != this || root.node_ < 0)
      throw std::invalid_argument("backward: root does not belong to this tape");
    if (root.rows() != 1 || root.cols() != 1)
      throw std::invalid_argument("backward: root must be scalar (1x1), got " +
                                  std::to_string(root.rows()) + "x" +
                                  std::to_string(root.cols()));
    grads_.assign(records_.size(), {});
    grads_[root.node_] = {1.0};
    for (int id = root.node_; id >= 0; --id) {
      if (grads_[id].empty()) continue;
      propagate(id);
    }
  }

  // Gradient of the last backward() root w.r.t. a tracked tensor.
  Tensor grad(const Tensor& t) const {
    if (t.tape_ != this || t.node_ < 0)
      throw std::invalid_argument("grad: tensor is not tracked on this tape");
    Tensor g(t.rows(), t.cols());
    if (static_cast<std::size_t>(t.node_) < grads_.size() && !grads_[t.node_].empty())
      g.values() = grads_[t.node_];
    return g;
  }

 private:
  int push(Record&& rec) {
    records_.push_back(std::move(rec));
    return static_cast<int>(records_.size()) - 1;
  }

  std::vector<double>& grad_buffer(const Operand& o) {
    auto& g = grads_[o.node];
    if (g.empty()) g.assign(static_cast<std::size_t>(o.rows) * o.cols, 0.0);
    return g;
  }

  void propagate(int id);

  std::vector<Record> records_;
  std::vector<std::vector<double>> grads_;

 public:
  // Exposed for the op implementations below.
  Tensor emit(Record&& rec) {
    Tensor out;
    out.rows_ = rec.rows;
    out.cols_ = rec.cols;
    out.data_ = rec.values;
    out.tape_ = this;
    out.node_ = push(std::move(rec));
    return out;
  }
};

namespace detail {

inline Tape* common_tape(const Tensor& a, const Tensor& b) {
  if (a.tracked() && b.tracked() && a.tape() != b.tape())
    throw std::invalid_argument("operands recorded on different tapes");
  return a.tracked() ? a.tape() : b.tape();
}

inline Tape::Operand operand_of(const Tensor& t) {
  Tape::Operand o;
  o.node = t.tracked() ? t.node() : -1;
  o.rows = t.rows();
  o.cols = t.cols();
  o.values = t.shared_values();
  return o;
}

inline Tensor finish(Tape* tape, Tape::Record&& rec) {
  if (tape == nullptr)  // no tracked operand: plain math, nothing recorded
    return Tensor::wrap(rec.rows, rec.cols, std::move(rec.values));
  return tape->emit(std::move(rec));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward kernels
// ---------------------------------------------------------------------------

namespace kernels {

inline void matmul_acc(const double* a, int ar, int ac, const double* b, int bc, double* out) {
  // ikj order; the j loop is contiguous in both b and out.
  for (int i = 0; i < ar; ++i) {
    double* out_row = out + static_cast<std::size_t>(i) * bc;
    const double* a_row = a + static_cast<std::size_t>(i) * ac;
    for (int k = 0; k < ac; ++k) {
      const double aik = a_row[k];
      if (aik == 0.0) continue;
      const double* b_row = b + static_cast<std::size_t>(k) * bc;
      for (int j = 0; j < bc; ++j) out_row[j] += aik * b_row[j];
    }
  }
}

// out(ac x bc) += a^T(ar x ac) * b(ar x bc)
inline void matmul_at_b_acc(const double* a, int ar, int ac, const double* b, int bc,
                            double* out) {
  for (int k = 0; k < ar; ++k) {
    const double* a_row = a + static_cast<std::size_t>(k) * ac;
    const double* b_row = b + static_cast<std::size_t>(k) * bc;
    for (int i = 0; i < ac; ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      double* out_row = out + static_cast<std::size_t>(i) * bc;
      for (int j = 0; j < bc; ++j) out_row[j] += aki * b_row[j];
    }
  }
}

// out(ar x br) += a(ar x ac) * b^T(br x ac)
inline void matmul_a_bt_acc(const double* a, int ar, int ac, const double* b, int br,
                            double* out) {
  for (int i = 0; i < ar; ++i) {
    const double* a_row = a + static_cast<std::size_t>(i) * ac;
    double* out_row = out + static_cast<std::size_t>(i) * br;
    for (int j = 0; j < br; ++j) {
      const double* b_row = b + static_cast<std::size_t>(j) * ac;
      double acc = 0.0;
      for (int k = 0; k < ac; ++k) acc += a_row[k] * b_row[k];
      out_row[j] += acc;
    }
  }
}

inline void spmm_acc(const SparseMatrix& s, const double* b, int bc, double* out) {
  for (int r = 0; r < s.rows(); ++r) {
    double* out_row = out + static_cast<std::size_t>(r) * bc;
    for (int k = s.row_begin(r); k < s.row_end(r); ++k) {
      const double v = s.value_at(k);
      const double* b_row = b + static_cast<std::size_t>(s.col_at(k)) * bc;
      for (int j = 0; j < bc; ++j) out_row[j] += v * b_row[j];
    }
  }
}

// out(cols x bc) += s^T * g, iterating entries of s.
inline void spmm_t_acc(const SparseMatrix& s, const double* g, int bc, double* out) {
  for (int r = 0; r < s.rows(); ++r) {
    const double* g_row = g + static_cast<std::size_t>(r) * bc;
    for (int k = s.row_begin(r); k < s.row_end(r); ++k) {
      const double v = s.value_at(k);
      double* out_row = out + static_cast<std::size_t>(s.col_at(k)) * bc;
      for (int j = 0; j < bc; ++j) out_row[j] += v * g_row[j];
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor elementwise(const Tensor& a, const Tensor& b, Op op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "elementwise op: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  Tape::Record rec;
  rec.op = op;
  rec.rows = a.rows();
  rec.cols = a.cols();
  rec.a = operand_of(a);
  rec.b = operand_of(b);
  auto out = std::make_shared<std::vector<double>>(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (op) {
      case Op::Add: (*out)[i] = av[i] + bv[i]; break;
      case Op::Sub: (*out)[i] = av[i] - bv[i]; break;
      case Op::Mul: (*out)[i] = av[i] * bv[i]; break;
      case Op::Div: (*out)[i] = av[i] / bv[i]; break;
      default: throw std::logic_error("elementwise: bad op");
    }
  }
  rec.values = std::move(out);
  return finish(common_tape(a, b), std::move(rec));
}

inline Tensor unary(const Tensor& a, Op op, double scalar = 0.0) {
  Tape::Record rec;
  rec.op = op;
  rec.rows = a.rows();
  rec.cols = a.cols();
  rec.a = operand_of(a);
  rec.scalar = scalar;
  auto out = std::make_shared<std::vector<double>>(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (op) {
      case Op::AddScalar: (*out)[i] = av[i] + scalar; break;
      case Op::MulScalar: (*out)[i] = av[i] * scalar; break;
      case Op::Exp: (*out)[i] = std::exp(av[i]); break;
      case Op::Log: (*out)[i] = std::log(av[i]); break;
      case Op::Sqrt: (*out)[i] = std::sqrt(av[i]); break;
      case Op::Relu: (*out)[i] = av[i] > 0.0 ? av[i] : 0.0; break;
      default: throw std::logic_error("unary: bad op");
    }
  }
  rec.values = std::move(out);
  return finish(a.tape(), std::move(rec));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::elementwise(a, b, Op::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::elementwise(a, b, Op::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::elementwise(a, b, Op::Mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::elementwise(a, b, Op::Div); }

inline Tensor add_scalar(const Tensor& a, double s) { return detail::unary(a, Op::AddScalar, s); }
inline Tensor mul_scalar(const Tensor& a, double s) { return detail::unary(a, Op::MulScalar, s); }
inline Tensor exp(const Tensor& a) { return detail::unary(a, Op::Exp); }
inline Tensor log(const Tensor& a) { return detail::unary(a, Op::Log); }
inline Tensor sqrt(const Tensor& a) { return detail::unary(a, Op::Sqrt); }
inline Tensor relu(const Tensor& a) { return detail::unary(a, Op::Relu); }

// a (N x M) + b (1 x M), broadcast over rows.
inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  detail::require(b.rows() == 1 && b.cols() == a.cols(),
                  "add_rowvec: " + detail::shape_str(a) + " + " + detail::shape_str(b));
  Tape::Record rec;
  rec.op = Op::AddRowVec;
  rec.rows = a.rows();
  rec.cols = a.cols();
  rec.a = detail::operand_of(a);
  rec.b = detail::operand_of(b);
  auto out = std::make_shared<std::vector<double>>(a.size());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      (*out)[static_cast<std::size_t>(i) * a.cols() + j] = a.at(i, j) + b.at(0, j);
  rec.values = std::move(out);
  return detail::finish(detail::common_tape(a, b), std::move(rec));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(),
                  "matmul: " + detail::shape_str(a) + " * " + detail::shape_str(b));
  Tape::Record rec;
  rec.op = Op::MatMul;
  rec.rows = a.rows();
  rec.cols = b.cols();
  rec.a = detail::operand_of(a);
  rec.b = detail::operand_of(b);
  auto out = std::make_shared<std::vector<double>>(static_cast<std::size_t>(a.rows()) * b.cols(),
                                                   0.0);
  kernels::matmul_acc(a.values().data(), a.rows(), a.cols(), b.values().data(), b.cols(),
                      out->data());
  rec.values = std::move(out);
  return detail::finish(detail::common_tape(a, b), std::move(rec));
}

inline Tensor spmm(const SparseMatrix& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(), "spmm: " + std::to_string(a.rows()) + "x" +
                                            std::to_string(a.cols()) + " * " +
                                            detail::shape_str(b));
  Tape::Record rec;
  rec.op = Op::SpMM;
  rec.rows = a.rows();
  rec.cols = b.cols();
  rec.b = detail::operand_of(b);
  rec.sparse = std::make_shared<const SparseMatrix>(a);
  auto out = std::make_shared<std::vector<double>>(static_cast<std::size_t>(a.rows()) * b.cols(),
                                                   0.0);
  kernels::spmm_acc(a, b.values().data(), b.cols(), out->data());
  rec.values = std::move(out);
  return detail::finish(b.tape(), std::move(rec));
}

inline Tensor transpose(const Tensor& a) {
  Tape::Record rec;
  rec.op = Op::Transpose;
  rec.rows = a.cols();
  rec.cols = a.rows();
  rec.a = detail::operand_of(a);
  auto out = std::make_shared<std::vector<double>>(a.size());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      (*out)[static_cast<std::size_t>(j) * a.rows() + i] = a.at(i, j);
  rec.values = std::move(out);
  return detail::finish(a.tape(), std::move(rec));
}

inline Tensor row_sum(const Tensor& a) {
  Tape::Record rec;
  rec.op = Op::RowSum;
  rec.rows = a.rows();
  rec.cols = 1;
  rec.a = detail::operand_of(a);
  auto out = std::make_shared<std::vector<double>>(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < a.cols(); ++j) acc += a.at(i, j);
    (*out)[i] = acc;
  }
  rec.values = std::move(out);
  return detail::finish(a.tape(), std::move(rec));
}

inline Tensor sum_all(const Tensor& a) {
  Tape::Record rec;
  rec.op = Op::SumAll;
  rec.rows = 1;
  rec.cols = 1;
  rec.a = detail::operand_of(a);
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  rec.values = std::make_shared<std::vector<double>>(1, acc);
  return detail::finish(a.tape(), std::move(rec));
}

inline Tensor mean_all(const Tensor& a) {
  detail::require(a.size() > 0, "mean_all: empty tensor");
  Tape::Record rec;
  rec.op = Op::MeanAll;
  rec.rows = 1;
  rec.cols = 1;
  rec.a = detail::operand_of(a);
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  rec.values = std::make_shared<std::vector<double>>(1, acc / static_cast<double>(a.size()));
  return detail::finish(a.tape(), std::move(rec));
}

// Main diagonal of a square matrix as an N x 1 column.
inline Tensor diag(const Tensor& a) {
  detail::require(a.rows() == a.cols(), "diag: matrix not square, " + detail::shape_str(a));
  Tape::Record rec;
  rec.op = Op::Diag;
  rec.rows = a.rows();
  rec.cols = 1;
  rec.a = detail::operand_of(a);
  auto out = std::make_shared<std::vector<double>>(a.rows());
  for (int i = 0; i < a.rows(); ++i) (*out)[i] = a.at(i, i);
  rec.values = std::move(out);
  return detail::finish(a.tape(), std::move(rec));
}

// Picks entries (r, c) into a K x 1 column; backward scatter-adds.
inline Tensor gather(const Tensor& a, std::vector<std::pair<int, int>> coords) {
  for (const auto& [r, c] : coords)
    detail::require(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(),
                    "gather: coordinate out of range");
  Tape::Record rec;
  rec.op = Op::Gather;
  rec.rows = static_cast<int>(coords.size());
  rec.cols = 1;
  rec.a = detail::operand_of(a);
  auto out = std::make_shared<std::vector<double>>(coords.size());
  for (std::size_t k = 0; k < coords.size(); ++k) (*out)[k] = a.at(coords[k].first, coords[k].second);
  rec.coords = std::move(coords);
  rec.values = std::move(out);
  return detail::finish(a.tape(), std::move(rec));
}

// Copies the value and cuts the gradient path.
inline Tensor detach(const Tensor& a) {
  Tape::Record rec;
  rec.op = Op::Detach;
  rec.rows = a.rows();
  rec.cols = a.cols();
  rec.values = std::make_shared<std::vector<double>>(a.values());
  return detail::finish(a.tape(), std::move(rec));
}

// Full pairwise row-cosine matrix: out[i][j] = cos(u_i, v_j). Row norms get
// +eps when eps > 0; with eps == 0 a zero-norm row is an error.
inline Tensor cosine_rows(const Tensor& u, const Tensor& v, double eps = 0.0) {
  detail::require(u.cols() == v.cols(),
                  "cosine_rows: " + detail::shape_str(u) + " vs " + detail::shape_str(v));
  const int n = u.rows(), m = v.rows(), d = u.cols();
  std::vector<double> nu(n), nv(m);
  auto row_norms = [d](const Tensor& t, std::vector<double>& out) {
    for (int i = 0; i < t.rows(); ++i) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += t.at(i, k) * t.at(i, k);
      out[i] = std::sqrt(acc);
    }
  };
  row_norms(u, nu);
  row_norms(v, nv);
  if (eps <= 0.0) {
    for (int i = 0; i < n; ++i)
      if (nu[i] == 0.0) throw NumericError("cosine_rows: zero-norm row " + std::to_string(i) + " in u");
    for (int j = 0; j < m; ++j)
      if (nv[j] == 0.0) throw NumericError("cosine_rows: zero-norm row " + std::to_string(j) + " in v");
  }

  Tape::Record rec;
  rec.op = Op::CosineRows;
  rec.rows = n;
  rec.cols = m;
  rec.a = detail::operand_of(u);
  rec.b = detail::operand_of(v);
  rec.scalar = eps > 0.0 ? eps : 0.0;
  rec.aux1 = nu;  // raw row norms (without eps)
  rec.aux2 = nv;
  auto out = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * m, 0.0);
  kernels::matmul_a_bt_acc(u.values().data(), n, d, v.values().data(), m, out->data());
  for (int i = 0; i < n; ++i) {
    const double gi = nu[i] + rec.scalar;
    for (int j = 0; j < m; ++j) (*out)[static_cast<std::size_t>(i) * m + j] /= gi * (nv[j] + rec.scalar);
  }
  rec.values = std::move(out);
  return detail::finish(detail::common_tape(u, v), std::move(rec));
}

// Mean softmax cross-entropy of `logits` rows listed in `mask` against
// integer labels. Saves the masked softmax rows for backward.
inline Tensor masked_softmax_xent(const Tensor& logits, const std::vector<int>& labels,
                                  const std::vector<int>& mask) {
  detail::require(!mask.empty(), "masked_softmax_xent: empty mask");
  detail::require(static_cast<int>(labels.size()) == logits.rows(),
                  "masked_softmax_xent: labels size mismatch");
  const int c = logits.cols();
  for (int i : mask) {
    detail::require(i >= 0 && i < logits.rows(), "masked_softmax_xent: mask row out of range");
    detail::require(labels[i] >= 0 && labels[i] < c, "masked_softmax_xent: label out of range");
  }
  Tape::Record rec;
  rec.op = Op::SoftmaxXent;
  rec.rows = 1;
  rec.cols = 1;
  rec.a = detail::operand_of(logits);
  rec.labels = labels;
  rec.mask = mask;
  rec.aux1.resize(mask.size() * static_cast<std::size_t>(c));
  double total = 0.0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    const int i = mask[k];
    double hi = logits.at(i, 0);
    for (int j = 1; j < c; ++j) hi = std::max(hi, logits.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - hi);
    const double lse = hi + std::log(z);
    total += lse - logits.at(i, labels[i]);
    for (int j = 0; j < c; ++j)
      rec.aux1[k * c + j] = std::exp(logits.at(i, j) - hi) / z;
  }
  rec.values = std::make_shared<std::vector<double>>(1, total / static_cast<double>(mask.size()));
  return detail::finish(logits.tape(), std::move(rec));
}

inline Tensor to_dense(const SparseMatrix& s) {
  Tensor t(s.rows(), s.cols());
  for (int r = 0; r < s.rows(); ++r)
    for (int k = s.row_begin(r); k < s.row_end(r); ++k)
      t.values()[static_cast<std::size_t>(r) * s.cols() + s.col_at(k)] = s.value_at(k);
  return t;
}

// ---------------------------------------------------------------------------
// Backward rules
// ---------------------------------------------------------------------------

inline void Tape::propagate(int id) {
  const Record& rec = records_[id];
  const std::vector<double>& g = grads_[id];
  const auto n = static_cast<std::size_t>(rec.rows) * rec.cols;

  switch (rec.op) {
    case Op::Leaf:
    case Op::Detach:
      break;

    case Op::Add: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (rec.b.live()) {
        auto& db = grad_buffer(rec.b);
        for (std::size_t i = 0; i < n; ++i) db[i] += g[i];
      }
      break;
    }
    case Op::Sub: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (rec.b.live()) {
        auto& db = grad_buffer(rec.b);
        for (std::size_t i = 0; i < n; ++i) db[i] -= g[i];
      }
      break;
    }
    case Op::Mul: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        const auto& bv = *rec.b.values;
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * bv[i];
      }
      if (rec.b.live()) {
        auto& db = grad_buffer(rec.b);
        const auto& av = *rec.a.values;
        for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * av[i];
      }
      break;
    }
    case Op::Div: {
      const auto& bv = *rec.b.values;
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] / bv[i];
      }
      if (rec.b.live()) {
        auto& db = grad_buffer(rec.b);
        const auto& cv = *rec.values;
        for (std::size_t i = 0; i < n; ++i) db[i] -= g[i] * cv[i] / bv[i];
      }
      break;
    }
    case Op::AddScalar: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      break;
    }
    case Op::MulScalar: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * rec.scalar;
      }
      break;
    }
    case Op::AddRowVec: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (rec.b.live()) {
        auto& db = grad_buffer(rec.b);
        for (int i = 0; i < rec.rows; ++i)
          for (int j = 0; j < rec.cols; ++j)
            db[j] += g[static_cast<std::size_t>(i) * rec.cols + j];
      }
      break;
    }
    case Op::MatMul: {
      // c = a*b; da += g*b^T, db += a^T*g
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        kernels::matmul_a_bt_acc(g.data(), rec.rows, rec.cols, rec.b.values->data(), rec.a.cols,
                                 da.data());
      }
      if (rec.b.live()) {
        auto& db = grad_buffer(rec.b);
        kernels::matmul_at_b_acc(rec.a.values->data(), rec.a.rows, rec.a.cols, g.data(), rec.cols,
                                 db.data());
      }
      break;
    }
    case Op::SpMM: {
      if (rec.b.live()) {
        auto& db = grad_buffer(rec.b);
        kernels::spmm_t_acc(*rec.sparse, g.data(), rec.cols, db.data());
      }
      break;
    }
    case Op::Transpose: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (int i = 0; i < rec.rows; ++i)
          for (int j = 0; j < rec.cols; ++j)
            da[static_cast<std::size_t>(j) * rec.rows + i] +=
                g[static_cast<std::size_t>(i) * rec.cols + j];
      }
      break;
    }
    case Op::Exp: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        const auto& cv = *rec.values;
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * cv[i];
      }
      break;
    }
    case Op::Log: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        const auto& av = *rec.a.values;
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] / av[i];
      }
      break;
    }
    case Op::Sqrt: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        const auto& cv = *rec.values;
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * 0.5 / cv[i];
      }
      break;
    }
    case Op::Relu: {
      // Subgradient at 0 is 0.
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        const auto& av = *rec.a.values;
        for (std::size_t i = 0; i < n; ++i)
          if (av[i] > 0.0) da[i] += g[i];
      }
      break;
    }
    case Op::RowSum: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (int i = 0; i < rec.a.rows; ++i)
          for (int j = 0; j < rec.a.cols; ++j)
            da[static_cast<std::size_t>(i) * rec.a.cols + j] += g[i];
      }
      break;
    }
    case Op::SumAll: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (auto& x : da) x += g[0];
      }
      break;
    }
    case Op::MeanAll: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        const double s = g[0] / static_cast<double>(da.size());
        for (auto& x : da) x += s;
      }
      break;
    }
    case Op::Diag: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (int i = 0; i < rec.rows; ++i)
          da[static_cast<std::size_t>(i) * rec.a.cols + i] += g[i];
      }
      break;
    }
    case Op::Gather: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (std::size_t k = 0; k < rec.coords.size(); ++k)
          da[static_cast<std::size_t>(rec.coords[k].first) * rec.a.cols + rec.coords[k].second] +=
              g[k];
      }
      break;
    }
    case Op::CosineRows: {
      const int rows = rec.rows, cols = rec.cols, d = rec.a.cols;
      const auto& uv = *rec.a.values;
      const auto& vv = *rec.b.values;
      const auto& cv = *rec.values;
      const double eps = rec.scalar;
      // dU_i = sum_j g_ij V_j / (nu_i nv_j) - U_i * (sum_j g_ij c_ij) / (|U_i| nu_i)
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        for (int i = 0; i < rows; ++i) {
          const double gi = rec.aux1[i] + eps;
          double dot = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double w = g[static_cast<std::size_t>(i) * cols + j] / (gi * (rec.aux2[j] + eps));
            dot += g[static_cast<std::size_t>(i) * cols + j] * cv[static_cast<std::size_t>(i) * cols + j];
            if (w != 0.0)
              for (int k = 0; k < d; ++k)
                da[static_cast<std::size_t>(i) * d + k] += w * vv[static_cast<std::size_t>(j) * d + k];
          }
          if (rec.aux1[i] > 0.0) {
            const double s = dot / (rec.aux1[i] * gi);
            for (int k = 0; k < d; ++k)
              da[static_cast<std::size_t>(i) * d + k] -= s * uv[static_cast<std::size_t>(i) * d + k];
          }
        }
      }
      if (rec.b.live()) {
        auto& db = grad_buffer(rec.b);
        for (int j = 0; j < cols; ++j) {
          const double gj = rec.aux2[j] + eps;
          double dot = 0.0;
          for (int i = 0; i < rows; ++i) {
            const double w = g[static_cast<std::size_t>(i) * cols + j] / ((rec.aux1[i] + eps) * gj);
            dot += g[static_cast<std::size_t>(i) * cols + j] * cv[static_cast<std::size_t>(i) * cols + j];
            if (w != 0.0)
              for (int k = 0; k < d; ++k)
                db[static_cast<std::size_t>(j) * d + k] += w * uv[static_cast<std::size_t>(i) * d + k];
          }
          if (rec.aux2[j] > 0.0) {
            const double s = dot / (rec.aux2[j] * gj);
            for (int k = 0; k < d; ++k)
              db[static_cast<std::size_t>(j) * d + k] -= s * vv[static_cast<std::size_t>(j) * d + k];
          }
        }
      }
      break;
    }
    case Op::SoftmaxXent: {
      if (rec.a.live()) {
        auto& da = grad_buffer(rec.a);
        const int c = rec.a.cols;
        const double scale = g[0] / static_cast<double>(rec.mask.size());
        for (std::size_t k = 0; k < rec.mask.size(); ++k) {
          const int i = rec.mask[k];
          for (int j = 0; j < c; ++j) {
            double p = rec.aux1[k * c + j];
            if (j == rec.labels[i]) p -= 1.0;
            da[static_cast<std::size_t>(i) * c + j] += scale * p;
          }
        }
      }
      break;
    }
  }
}

}  // namespace ifl
