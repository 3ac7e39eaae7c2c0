#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace sbr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major 2-D array of 64-bit floats. Rank-1 data uses a single row.
// Storage is aligned to Eigen's packet size so vectorized reductions see the
// same element grouping on every run, independent of heap layout.
class Tensor {
 public:
  Tensor() = default;
  Tensor(size_t rows, size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  // Throws ShapeError when data.size() != rows * cols.
  Tensor(size_t rows, size_t cols, std::vector<double> data);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  std::array<size_t, 2> shape() const { return {rows_, cols_}; }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

  Eigen::Map<RowMatrix> mat() {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<const RowMatrix> mat() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

  void Fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool AllFinite() const;
  bool SameShape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Tensor& o) const = default;

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

}  // namespace sbr
