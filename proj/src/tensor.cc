#include "alnbeam/tensor.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "alnbeam/error.h"

namespace alnbeam {

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = static_cast<int>(rows.size());
  cols_ = rows_ > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  data_.reserve(static_cast<size_t>(rows_) * cols_);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != cols_)
      throw Error::data("tensor literal has ragged rows");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

void Tensor::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = static_cast<int>(values.size());
  if (static_cast<int>(values.size()) != cols_)
    throw Error::data("append_row: expected " + std::to_string(cols_) + " values, got " +
                      std::to_string(values.size()));
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw Error::data("matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  Tensor out(a.rows(), b.cols());
  // i-k-j loop: each out(i,j) still accumulates k = 0..K-1 left to right,
  // identical to the naive triple loop, but with contiguous inner access.
  for (int i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  for (int i = 0; i < out.rows(); ++i)
    softmax_inplace({out.row(i), static_cast<size_t>(out.cols())});
  return out;
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw Error::data("log_sum_exp: empty input");
  double mx = xs[0];
  for (double v : xs) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;  // all -inf, or a +inf dominates
  double sum = 0.0;
  for (double v : xs) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

Tensor transpose(const Tensor& x) {
  Tensor out(x.cols(), x.rows());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out.at(j, i) = x.at(i, j);
  return out;
}

void add_inplace(Tensor& x, const Tensor& y) {
  if (!x.same_shape(y)) throw Error::data("add_inplace shape mismatch");
  for (size_t i = 0; i < x.size(); ++i) x.data()[i] += y.data()[i];
}

void scale_inplace(Tensor& x, double s) {
  for (double& v : x.data()) v *= s;
}

bool all_finite(const Tensor& x) {
  for (double v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace alnbeam
