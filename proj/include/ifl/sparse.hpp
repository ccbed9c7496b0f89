#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "ifl/errors.hpp"

namespace ifl {

// Compressed sparse row matrix. Column indices within each row are strictly
// increasing; duplicate coordinates are summed during construction.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  SparseMatrix(int rows, int cols) : rows_(rows), cols_(cols), offsets_(rows + 1, 0) {}

  static SparseMatrix from_coo(int rows, int cols,
                               std::vector<std::tuple<int, int, double>> entries) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("SparseMatrix: negative shape");
    for (const auto& [r, c, v] : entries) {
      if (r < 0 || r >= rows || c < 0 || c >= cols)
        throw std::invalid_argument("SparseMatrix: coordinate out of range");
      if (!std::isfinite(v)) throw std::invalid_argument("SparseMatrix: non-finite value");
    }
    std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) {
      return std::make_pair(std::get<0>(x), std::get<1>(x)) <
             std::make_pair(std::get<0>(y), std::get<1>(y));
    });
    SparseMatrix m(rows, cols);
    for (std::size_t k = 0; k < entries.size();) {
      const int r = std::get<0>(entries[k]);
      const int c = std::get<1>(entries[k]);
      double v = 0.0;
      while (k < entries.size() && std::get<0>(entries[k]) == r && std::get<1>(entries[k]) == c) {
        v += std::get<2>(entries[k]);
        ++k;
      }
      m.cols_idx_.push_back(c);
      m.values_.push_back(v);
      m.offsets_[r + 1] = static_cast<int>(m.cols_idx_.size());
    }
    // Fill offsets for trailing empty rows.
    for (int r = 1; r <= rows; ++r) offsets_fixup(m.offsets_, r);
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }

  const std::vector<int>& offsets() const { return offsets_; }
  const std::vector<int>& col_indices() const { return cols_idx_; }
  const std::vector<double>& values() const { return values_; }

  int row_begin(int r) const { return offsets_[r]; }
  int row_end(int r) const { return offsets_[r + 1]; }
  int col_at(int k) const { return cols_idx_[k]; }
  double value_at(int k) const { return values_[k]; }

  bool has_entry(int r, int c) const {
    for (int k = row_begin(r); k < row_end(r); ++k)
      if (cols_idx_[k] == c) return true;
    return false;
  }

 private:
  static void offsets_fixup(std::vector<int>& offsets, int r) {
    if (offsets[r] < offsets[r - 1]) offsets[r] = offsets[r - 1];
  }

  int rows_ = 0, cols_ = 0;
  std::vector<int> offsets_{0};
  std::vector<int> cols_idx_;
  std::vector<double> values_;
};

}  // namespace ifl
