#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spacebond {

/// Base error for every failure reported by the library.
class SpaceBondError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix. Rows are the unit of meaning throughout the
/// library: one row is one embedding.
template <typename Real>
class BasicMatrix {
 public:
  using value_type = Real;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<Real> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw SpaceBondError("matrix payload size mismatch");
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<Real>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw SpaceBondError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t i, std::size_t j) noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }
  Real operator()(std::size_t i, std::size_t j) const noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }

  std::span<Real> row(std::size_t i) noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const Real> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<Real> flat() noexcept { return data_; }
  std::span<const Real> flat() const noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

  template <typename Other>
  BasicMatrix<Other> cast() const {
    BasicMatrix<Other> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.flat().begin(),
                   [](Real v) { return static_cast<Other>(v); });
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

using Matrix = BasicMatrix<float>;

template <typename Real>
BasicMatrix<Real> transpose(const BasicMatrix<Real>& a) {
  BasicMatrix<Real> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

/// C = A * B. The i-k-j order keeps the summation sequence fixed for every
/// output entry, so results are reproducible and symmetric in the sense
/// that (A Bᵀ)ᵀ == B Aᵀ bitwise.
template <typename Real>
BasicMatrix<Real> matmul(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b) {
  if (a.cols() != b.rows()) throw SpaceBondError("matmul: inner dimension mismatch");
  BasicMatrix<Real> c(a.rows(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    Real* crow = c.row(i).data();
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const Real aip = a(i, p);
      const Real* brow = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

/// C = A * Bᵀ.
template <typename Real>
BasicMatrix<Real> matmul_bt(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b) {
  if (a.cols() != b.cols()) throw SpaceBondError("matmul_bt: inner dimension mismatch");
  return matmul(a, transpose(b));
}

/// C = Aᵀ * B.
template <typename Real>
BasicMatrix<Real> matmul_at(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b) {
  if (a.rows() != b.rows()) throw SpaceBondError("matmul_at: row count mismatch");
  BasicMatrix<Real> c(a.cols(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const Real* brow = b.row(i).data();
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const Real aip = a(i, p);
      Real* crow = c.row(p).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

template <typename Real>
BasicMatrix<Real> gather_rows(const BasicMatrix<Real>& a, std::span<const std::size_t> idx) {
  BasicMatrix<Real> out(idx.size(), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.rows()) throw SpaceBondError("gather_rows: index out of range");
    std::copy_n(a.row(idx[r]).data(), a.cols(), out.row(r).data());
  }
  return out;
}

template <typename Real>
double row_norm(std::span<const Real> row) {
  double s = 0.0;
  for (Real v : row) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

/// Divides every row by its L2 norm. Throws on a zero row.
template <typename Real>
BasicMatrix<Real> normalized_rows(BasicMatrix<Real> a) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    const double n = row_norm<Real>(r);
    if (!(n > 0.0)) {
      throw SpaceBondError("zero row at index " + std::to_string(i));
    }
    for (Real& v : r) v = static_cast<Real>(static_cast<double>(v) / n);
  }
  return a;
}

}  // namespace spacebond
