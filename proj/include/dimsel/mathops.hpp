#pragma once

// Expression-friendly numeric kernels shared by the oracle, predictor and
// analysis code. All take Eigen expressions and evaluate in their scalar type.

#include "dimsel/types.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace dimsel {

// Numerically stable softmax of a vector (max subtracted before exp).
template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = x.maxCoeff();
  Vector<Scalar> e = (x.array() - top).exp().matrix();
  return e / e.sum();
}

template <typename Derived>
Vector<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = x.maxCoeff();
  const Scalar lse = top + std::log((x.array() - top).exp().sum());
  return (x.array() - lse).matrix();
}

// Row-wise log-softmax of a batch of logits.
template <typename Derived>
RowMatrix<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar top = x.row(i).maxCoeff();
    const Scalar lse = top + std::log((x.row(i).array() - top).exp().sum());
    out.row(i) = (x.row(i).array() - lse).matrix();
  }
  return out;
}

// KL(target || predicted) where `predicted_log` holds log-probabilities.
// Zero-probability target entries contribute nothing.
template <typename DerivedP, typename DerivedQ>
double kl_divergence(const Eigen::MatrixBase<DerivedP>& target,
                     const Eigen::MatrixBase<DerivedQ>& predicted_log) {
  double loss = 0.0;
  for (Eigen::Index j = 0; j < target.size(); ++j) {
    const double p = static_cast<double>(target(j));
    if (p > 0.0) loss += p * (std::log(p) - static_cast<double>(predicted_log(j)));
  }
  return loss;
}

// Sample Pearson correlation. Returns NaN when either series has zero variance.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return std::nan("");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nan("");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Jaccard similarity of two sorted, duplicate-free index lists.
template <typename Index>
double jaccard_sorted(std::span<const Index> a, std::span<const Index> b) {
  std::size_t i = 0, j = 0, common = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++common;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - common;
  return uni == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(uni);
}

}  // namespace dimsel

namespace dimsel {

// Dot product accumulated in double, strictly left to right. Every scoring
// path goes through this order so masked and unmasked scores agree bit-for-bit
// when the mask covers all dimensions.
template <typename DerivedA, typename DerivedB>
double dot_sequential(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    acc += static_cast<double>(a(j)) * static_cast<double>(b(j));
  }
  return acc;
}

// Double dot product over four interleaved partial sums, combined as
// (s0 + s1) + (s2 + s3). Fixed order, so deterministic, but not equal to
// dot_sequential bit for bit.
template <typename DerivedA, typename DerivedB>
double dot_interleaved(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  double s[4] = {0.0, 0.0, 0.0, 0.0};
  const Eigen::Index n = a.size();
  Eigen::Index j = 0;
  for (; j + 4 <= n; j += 4) {
    for (int l = 0; l < 4; ++l) s[l] += static_cast<double>(a(j + l)) * static_cast<double>(b(j + l));
  }
  for (; j < n; ++j) s[j % 4] += static_cast<double>(a(j)) * static_cast<double>(b(j));
  return (s[0] + s[1]) + (s[2] + s[3]);
}

}  // namespace dimsel
