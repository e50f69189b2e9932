#pragma once

// Low-rank factorizations under the activation metric trace((A-LR) H (A-LR)^T):
//   lr_approx   whitened truncated SVD (exact minimizer over rank-r pairs)
//   lplr        alternating refits with both factors kept on quantization grids
//   odlri_init  whitening restricted to the top-k outlier channels
//   zero_init   L = 0, R = 0

#include "qlr/calibration.hpp"
#include "qlr/core.hpp"
#include "qlr/linalg.hpp"
#include "qlr/quantization.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace qlr {

template <typename Scalar>
struct FactorQuantMeta {
  int bits_left = 0;
  int bits_right = 0;
  std::vector<Scalar> scales_left;  // per column of L
  std::vector<Scalar> scales_right; // per row of R
};

template <typename Scalar>
struct FactorPair {
  Mat<Scalar> left;  // m x r
  Mat<Scalar> right; // r x n
  std::optional<FactorQuantMeta<Scalar>> quant_meta;

  Index rank() const noexcept { return left.cols(); }
  Mat<Scalar> product() const { return left * right; }
};

struct InitStrategy {
  enum class Kind { Zero, LRApproxW, Odlri };
  Kind kind = Kind::Zero;
  Index k = 0; // Odlri only

  static InitStrategy zero() { return {Kind::Zero, 0}; }
  static InitStrategy lrapprox_w() { return {Kind::LRApproxW, 0}; }
  static InitStrategy odlri(Index k) { return {Kind::Odlri, k}; }
};

inline const char *to_string(InitStrategy::Kind kind) {
  switch (kind) {
  case InitStrategy::Kind::Zero: return "zero";
  case InitStrategy::Kind::LRApproxW: return "lrapprox";
  case InitStrategy::Kind::Odlri: return "odlri";
  }
  return "unknown";
}

namespace detail {

template <typename DerivedA>
void check_rank(const Eigen::MatrixBase<DerivedA> &a, Index rank, const char *who) {
  if (rank < 1 || rank > std::min(a.rows(), a.cols()))
    throw Error(ErrorCode::RankTooLarge, std::string(who) + ": rank " + std::to_string(rank) +
                                             " outside [1, min(" + std::to_string(a.rows()) +
                                             ", " + std::to_string(a.cols()) + ")]");
}

template <typename Scalar>
void check_hessian_dim(Index cols, const Hessian<Scalar> &h, const char *who) {
  if (h.dim() != cols)
    throw Error(ErrorCode::DimensionMismatch, std::string(who) + ": matrix has " +
                                                  std::to_string(cols) + " columns, Hessian is " +
                                                  std::to_string(h.dim()) + "-dimensional");
}

// Splits sqrt(sigma) across both sides and un-whitens the right factor:
// L = U sqrt(S), R = sqrt(S) V^T chol^{-1}.
template <typename Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> unwhiten(const SvdTriple<Scalar> &svd,
                                             const LowerTriangular<Scalar> &chol) {
  const Vec<Scalar> root = svd.sigma.cwiseSqrt();
  Mat<Scalar> left = svd.u * root.asDiagonal();
  // R^T = chol^{-T} V sqrt(S)
  const Mat<Scalar> scaled_v = svd.v * root.asDiagonal();
  const Mat<Scalar> right_t =
      chol.matrix().transpose().template triangularView<Eigen::Upper>().solve(scaled_v);
  return {std::move(left), right_t.transpose()};
}

} // namespace detail

/// Rank-r pair minimizing trace((a - LR) h (a - LR)^T), via SVD of a*S where h = S S^T.
template <typename Derived, typename Scalar = typename Derived::Scalar>
FactorPair<Scalar> lr_approx(const Eigen::MatrixBase<Derived> &a, const Hessian<Scalar> &h,
                             Index rank) {
  detail::check_hessian_dim(a.cols(), h, "lr_approx");
  detail::check_rank(a, rank, "lr_approx");
  const auto &chol = h.cholesky().factor;
  const Mat<Scalar> whitened = a * chol.view();
  auto [left, right] = detail::unwhiten(truncated_svd(whitened, rank), chol);
  return {std::move(left), std::move(right), std::nullopt};
}

template <typename Scalar>
struct LplrResult {
  FactorPair<Scalar> factors;
  Scalar best_error = 0; // activation-aware error of the returned pair
  int best_iteration = 0; // 1-based
  std::vector<Scalar> errors; // per inner iteration
  int singular_steps = 0;     // pseudoinverse steps where a factor had rank < r
};

/// LPLR with full diagnostics. Both factors carry one scale per rank component
/// (columns of L, rows of R).
template <typename Derived, typename Scalar = typename Derived::Scalar>
LplrResult<Scalar> lplr_detailed(const Eigen::MatrixBase<Derived> &a, const Hessian<Scalar> &h,
                                 Index rank, int bits_left, int bits_right, int inner_iters) {
  if (inner_iters < 1)
    throw Error(ErrorCode::ConfigInvalid, "lplr needs at least one inner iteration");
  const QuantSpec spec_left{bits_left, Granularity::PerColumn};
  const QuantSpec spec_right{bits_right, Granularity::PerColumn};
  spec_left.validate();
  spec_right.validate();

  const Mat<Scalar> target = a;
  Mat<Scalar> left = lr_approx(target, h, rank).left;
  const auto &chol = h.cholesky().factor;
  const Mat<Scalar> target_white = target * chol.view();

  LplrResult<Scalar> result;
  result.best_error = std::numeric_limits<Scalar>::infinity();
  for (int it = 1; it <= inner_iters; ++it) {
    const auto q_left = quantize(left, spec_left);
    const Mat<Scalar> left_q = dequantize(q_left);

    Index numerical_rank = 0;
    const Mat<Scalar> right = pseudoinverse(left_q, 1e-12, &numerical_rank) * target;
    if (numerical_rank < rank)
      ++result.singular_steps;
    const auto q_right = quantize(Mat<Scalar>(right.transpose()), spec_right);
    const Mat<Scalar> right_q = dequantize(q_right).transpose();

    const Scalar err = act_fro_norm2(target - left_q * right_q, h.matrix());
    result.errors.push_back(err);
    if (err < result.best_error) {
      result.best_error = err;
      result.best_iteration = it;
      result.factors = {left_q, right_q,
                        FactorQuantMeta<Scalar>{bits_left, bits_right, q_left.scales,
                                                q_right.scales}};
    }

    const Mat<Scalar> right_white = right_q * chol.view();
    left = target_white * pseudoinverse(right_white, 1e-12, &numerical_rank);
    if (numerical_rank < rank)
      ++result.singular_steps;
  }
  return result;
}

template <typename Derived, typename Scalar = typename Derived::Scalar>
FactorPair<Scalar> lplr(const Eigen::MatrixBase<Derived> &a, const Hessian<Scalar> &h, Index rank,
                        int bits_left, int bits_right, int inner_iters) {
  return lplr_detailed(a, h, rank, bits_left, bits_right, inner_iters).factors;
}

/// Outlier-driven initialization. Whitens only the k x k block H[I, I] of the
/// top-k channels I, so L0 R0 reproduces W exactly on columns I (k <= r).
/// Factor dimensions beyond min(k, r) are zero.
template <typename Derived, typename Scalar = typename Derived::Scalar>
FactorPair<Scalar> odlri_init(const Eigen::MatrixBase<Derived> &w, const Hessian<Scalar> &h,
                              Index rank, Index k) {
  detail::check_hessian_dim(w.cols(), h, "odlri_init");
  detail::check_rank(w, rank, "odlri_init");
  if (k < 1 || k > std::min(rank, w.cols()))
    throw Error(ErrorCode::KOutOfRange, "odlri_init: k = " + std::to_string(k) +
                                            " outside [1, min(rank, n)]");

  const std::vector<Index> channels = select_outlier_channels(h, k);
  const Mat<Scalar> h_sub = h.matrix()(channels, channels);
  const Mat<Scalar> w_sub = w(Eigen::all, channels);
  const auto chol = cholesky_psd(h_sub, default_jitter_base(h_sub));

  const Index kept = std::min(k, rank);
  const Mat<Scalar> whitened = w_sub * chol.factor.view();
  auto [left_sub, right_sub] = detail::unwhiten(truncated_svd(whitened, kept), chol.factor);

  FactorPair<Scalar> out{Mat<Scalar>::Zero(w.rows(), rank), Mat<Scalar>::Zero(rank, w.cols()),
                         std::nullopt};
  out.left.leftCols(kept) = left_sub;
  for (std::size_t c = 0; c < channels.size(); ++c)
    out.right.col(channels[c]).head(kept) = right_sub.col(static_cast<Index>(c));
  return out;
}

template <typename Scalar = double>
FactorPair<Scalar> zero_init(Index m, Index n, Index rank) {
  if (m < 1 || n < 1 || rank < 1)
    throw Error(ErrorCode::ConfigInvalid, "zero_init needs positive dimensions");
  return {Mat<Scalar>::Zero(m, rank), Mat<Scalar>::Zero(rank, n), std::nullopt};
}

} // namespace qlr
