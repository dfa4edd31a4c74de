#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace xmodal::nn {

/// Dense row-major matrix of doubles. Scalars are 1x1, vectors are 1xN.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  /// The single value of a 1x1 tensor.
  double item() const;

  bool all_finite() const;
  /// Throws NumericError naming `what` if any entry is NaN or Inf.
  void require_finite(const std::string& what) const;

  Tensor transposed() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// a (m x k) * b (k x n).
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T (k x m)^T * b (k x n) -> m x n.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a (m x k) * b^T (n x k)^T -> m x n.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Stacks rows `indices` of `t` into a new tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);
/// Vertical concatenation; all parts must share a column count.
Tensor vstack(std::span<const Tensor> parts);
/// Horizontal concatenation; all parts must share a row count.
Tensor hstack(std::span<const Tensor> parts);

std::string shape_string(const Tensor& t);

}  // namespace xmodal::nn
