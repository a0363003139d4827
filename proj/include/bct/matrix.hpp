#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace bct {

// Row-major dense matrix of doubles. Vectors are 1xK matrices.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  // Nested-list literal, e.g. DenseMatrix{{1, 2}, {3, 4}}.
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  bool operator==(const DenseMatrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a [n x k] * b [k x m]
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// a^T [k x n]^T * b [k x m] -> [n x m]
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
// a [n x k] * b^T, b is [m x k] -> [n x m]
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);

// Selects rows by index, in the given order.
DenseMatrix gather_rows(const DenseMatrix& m, std::span<const std::size_t> idx);
// First `cols` columns of every row.
DenseMatrix leading_columns(const DenseMatrix& m, std::size_t cols);

void add_inplace(DenseMatrix& dst, const DenseMatrix& src, double scale = 1.0);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

}  // namespace bct
