#pragma once

#include <initializer_list>
#include <span>
#include <vector>

namespace alnbeam {

// Dense row-major matrix of doubles. All model math runs on these; every
// operation keeps a fixed accumulation order so results are bit-reproducible.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {}
  Tensor(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }

  double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }
  std::span<const double> row_span(int r) const { return {row(r), static_cast<size_t>(cols_)}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void append_row(std::span<const double> values);
  void fill(double v) { data_.assign(data_.size(), v); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// a (m×k) times b (k×n). Each output element accumulates over k in
// increasing order; throws a data error on inner-dimension mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);
void softmax_inplace(std::span<double> row);

// log(sum exp(x_i)), overflow-safe. Empty input is an error.
double log_sum_exp(std::span<const double> xs);

Tensor transpose(const Tensor& x);
void add_inplace(Tensor& x, const Tensor& y);
void scale_inplace(Tensor& x, double s);
bool all_finite(const Tensor& x);

}  // namespace alnbeam
