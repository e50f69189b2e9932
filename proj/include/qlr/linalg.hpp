#pragma once

// Dense kernels shared by every other module: jittered PSD Cholesky,
// truncated SVD, lower-triangular solves and the Hessian-weighted norm
// trace(A H A^T).

#include "qlr/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace qlr {

/// Lower-triangular factor with a strictly positive diagonal.
template <typename Scalar>
class LowerTriangular {
public:
  explicit LowerTriangular(Mat<Scalar> entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols())
      throw Error(ErrorCode::DimensionMismatch, "lower-triangular factor must be square");
    entries_.template triangularView<Eigen::StrictlyUpper>().setZero();
  }

  Index dim() const noexcept { return entries_.rows(); }
  const Mat<Scalar> &matrix() const noexcept { return entries_; }

  auto view() const { return entries_.template triangularView<Eigen::Lower>(); }

private:
  Mat<Scalar> entries_;
};

template <typename Scalar>
struct CholeskyFactor {
  LowerTriangular<Scalar> factor;
  Scalar jitter; // lambda actually added to the diagonal
};

template <typename Scalar>
struct SvdTriple {
  Mat<Scalar> u;     // m x q
  Vec<Scalar> sigma; // non-increasing
  Mat<Scalar> v;     // n x q

  Index rank() const noexcept { return sigma.size(); }
};

inline constexpr int kMaxJitterEscalations = 10;

template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived> &a, double rel_tol = 1e-9) {
  if (a.rows() != a.cols())
    return false;
  using std::abs;
  const auto scale = a.cwiseAbs().maxCoeff();
  if (scale == 0)
    return true;
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

/// Factors a + lambda*I = S*S^T. lambda is the first of
/// {0, base, 4*base, ..., 4^9*base} for which LLT succeeds.
template <typename Derived>
CholeskyFactor<typename Derived::Scalar> cholesky_psd(const Eigen::MatrixBase<Derived> &a,
                                                      typename Derived::Scalar jitter_base) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols())
    throw Error(ErrorCode::DimensionMismatch, "cholesky_psd expects a square matrix");
  if (!(jitter_base >= 0))
    throw Error(ErrorCode::ConfigInvalid, "jitter_base must be non-negative");
  if (!is_symmetric(a))
    throw Error(ErrorCode::NonSymmetric, "cholesky_psd input is not symmetric");

  const Index n = a.rows();
  Mat<Scalar> shifted = a;
  Scalar lambda = 0;
  for (int step = 0; step <= kMaxJitterEscalations; ++step) {
    if (step > 0) {
      if (jitter_base == 0)
        break;
      lambda = jitter_base * std::pow(Scalar(4), Scalar(step - 1));
      shifted = a;
      shifted.diagonal().array() += lambda;
    }
    Eigen::LLT<Mat<Scalar>> llt(shifted);
    if (llt.info() != Eigen::Success)
      continue;
    Mat<Scalar> l = llt.matrixL();
    if (!l.allFinite() || (l.diagonal().array() <= 0).any())
      continue;
    return {LowerTriangular<Scalar>(std::move(l)), lambda};
  }
  throw Error(ErrorCode::NotFactorizable,
              "no jitter up to 4^9 * base made a " + std::to_string(n) + "x" + std::to_string(n) +
                  " matrix positive definite");
}

/// Top-r singular triple via a full decomposition truncated to r.
template <typename Derived>
SvdTriple<typename Derived::Scalar> truncated_svd(const Eigen::MatrixBase<Derived> &a, Index r) {
  using Scalar = typename Derived::Scalar;
  if (r < 1 || r > std::min(a.rows(), a.cols()))
    throw Error(ErrorCode::RankTooLarge, "rank " + std::to_string(r) + " exceeds min(" +
                                             std::to_string(a.rows()) + ", " +
                                             std::to_string(a.cols()) + ")");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dense = a;
  Eigen::BDCSVD<decltype(dense)> svd(dense, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {svd.matrixU().leftCols(r), svd.singularValues().head(r), svd.matrixV().leftCols(r)};
}

/// Forward substitution: returns y with s*y = b.
template <typename Scalar, typename Derived>
Mat<Scalar> solve_lower(const LowerTriangular<Scalar> &s, const Eigen::MatrixBase<Derived> &b) {
  if (s.dim() != b.rows())
    throw Error(ErrorCode::DimensionMismatch, "solve_lower: factor is " + std::to_string(s.dim()) +
                                                  "x" + std::to_string(s.dim()) + ", rhs has " +
                                                  std::to_string(b.rows()) + " rows");
  return s.view().solve(b);
}

/// trace(a * h * a^T), i.e. ||a X||_F^2 when h = X X^T.
template <typename DerivedA, typename DerivedH>
typename DerivedA::Scalar act_fro_norm2(const Eigen::MatrixBase<DerivedA> &a,
                                        const Eigen::MatrixBase<DerivedH> &h) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != h.rows() || h.rows() != h.cols())
    throw Error(ErrorCode::DimensionMismatch, "act_fro_norm2: a has " + std::to_string(a.cols()) +
                                                  " columns, h is " + std::to_string(h.rows()) +
                                                  "x" + std::to_string(h.cols()));
  const Mat<Scalar> ah = a * h;
  return std::max(Scalar(0), ah.cwiseProduct(a).sum());
}

/// Moore-Penrose pseudoinverse; singular values below rel_tol * sigma_max are dropped.
/// `rank_out`, when given, receives the numerical rank.
template <typename Derived>
Mat<typename Derived::Scalar> pseudoinverse(const Eigen::MatrixBase<Derived> &a,
                                            double rel_tol = 1e-12, Index *rank_out = nullptr) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dense = a;
  Eigen::BDCSVD<decltype(dense)> svd(dense, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto &sv = svd.singularValues();
  const Scalar cutoff = sv.size() > 0 ? Scalar(rel_tol) * sv(0) : Scalar(0);
  Vec<Scalar> inv = Vec<Scalar>::Zero(sv.size());
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0) {
      inv(i) = Scalar(1) / sv(i);
      ++rank;
    }
  }
  if (rank_out)
    *rank_out = rank;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

} // namespace qlr
