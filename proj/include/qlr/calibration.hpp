#pragma once

// Calibration-side quantities: the activation Hessian H = X X^T, outlier
// channel selection from its diagonal, the outlier/remainder masks of H,
// and seeded planted-outlier activations for desk-scale experiments.

#include "qlr/core.hpp"
#include "qlr/linalg.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace qlr {

/// Default jitter base for a PSD matrix: 1e-10 of its mean diagonal.
template <typename Derived>
typename Derived::Scalar default_jitter_base(const Eigen::MatrixBase<Derived> &a) {
  using Scalar = typename Derived::Scalar;
  const Scalar mean_diag = a.rows() > 0 ? a.diagonal().mean() : Scalar(0);
  return mean_diag > 0 ? Scalar(1e-10) * mean_diag : Scalar(1e-12);
}

/// Symmetric PSD second-moment matrix with its diagonal and a Cholesky
/// factor computed once at construction. Immutable afterwards.
template <typename Scalar>
class Hessian {
public:
  static Hessian from_matrix(Mat<Scalar> mat) {
    if (mat.rows() != mat.cols() || mat.rows() == 0)
      throw Error(ErrorCode::DimensionMismatch, "Hessian must be square and non-empty");
    require_finite(mat, "Hessian");
    if (!is_symmetric(mat))
      throw Error(ErrorCode::NonSymmetric, "Hessian is not symmetric");
    if ((mat.diagonal().array() < 0).any())
      throw Error(ErrorCode::ConfigInvalid, "Hessian has a negative diagonal entry");
    return Hessian(std::move(mat));
  }

  Index dim() const noexcept { return mat_.rows(); }
  const Mat<Scalar> &matrix() const noexcept { return mat_; }
  const Vec<Scalar> &diag_energy() const noexcept { return diag_; }

  bool has_cholesky() const noexcept { return chol_.has_value(); }
  const CholeskyFactor<Scalar> &cholesky() const {
    if (!chol_)
      throw Error(ErrorCode::NotFactorizable, chol_error_);
    return *chol_;
  }

private:
  explicit Hessian(Mat<Scalar> mat) : mat_(std::move(mat)), diag_(mat_.diagonal()) {
    try {
      chol_.emplace(cholesky_psd(mat_, default_jitter_base(mat_)));
    } catch (const Error &e) {
      chol_error_ = e.what();
    }
  }

  Mat<Scalar> mat_;
  Vec<Scalar> diag_;
  std::optional<CholeskyFactor<Scalar>> chol_;
  std::string chol_error_;
};

/// H = x x^T for channel-major activations x (n channels x d samples).
template <typename Derived>
Hessian<typename Derived::Scalar> hessian_from_activations(const Eigen::MatrixBase<Derived> &x) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() < 1 || x.cols() < 1)
    throw Error(ErrorCode::DimensionMismatch, "activations must have at least one sample");
  Mat<Scalar> h = x * x.transpose();
  // GEMM blocking can differ in the last bit between (i,j) and (j,i).
  h.template triangularView<Eigen::StrictlyUpper>() = h.transpose();
  return Hessian<Scalar>::from_matrix(std::move(h));
}

/// The k channels of largest diagonal energy (ties: lower index), ascending.
template <typename Scalar>
std::vector<Index> select_outlier_channels(const Hessian<Scalar> &h, Index k) {
  if (k < 1 || k > h.dim())
    throw Error(ErrorCode::KOutOfRange,
                "k = " + std::to_string(k) + " outside [1, " + std::to_string(h.dim()) + "]");
  std::vector<Index> order(static_cast<std::size_t>(h.dim()));
  std::iota(order.begin(), order.end(), Index{0});
  const auto &e = h.diag_energy();
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return e(a) > e(b); });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

/// k = round(p * n) with p = 0.1/0.2/0.4 % for r = 64/128/256, else p = r / 65536;
/// clamped to [1, min(r, n)].
Index k_for_rank(Index rank, Index n);

template <typename Scalar>
struct OutlierSplit {
  std::vector<Index> indices;
  Mat<Scalar> h_o; // H on I x I, zero elsewhere
  Mat<Scalar> h_r; // H on complement x complement, zero elsewhere
};

inline void validate_index_set(const std::vector<Index> &indices, Index dim) {
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= dim)
      throw Error(ErrorCode::IndexOutOfRange, "channel index " + std::to_string(indices[i]) +
                                                  " outside [0, " + std::to_string(dim) + ")");
    if (i > 0 && indices[i] <= indices[i - 1])
      throw Error(ErrorCode::IndexOutOfRange, "channel indices must be strictly ascending");
  }
}

template <typename Scalar>
OutlierSplit<Scalar> split_hessian(const Hessian<Scalar> &h, const std::vector<Index> &indices) {
  validate_index_set(indices, h.dim());
  std::vector<bool> selected(static_cast<std::size_t>(h.dim()), false);
  for (Index i : indices)
    selected[static_cast<std::size_t>(i)] = true;

  OutlierSplit<Scalar> split{indices, Mat<Scalar>::Zero(h.dim(), h.dim()),
                             Mat<Scalar>::Zero(h.dim(), h.dim())};
  const auto &m = h.matrix();
  for (Index i = 0; i < h.dim(); ++i) {
    for (Index j = 0; j < h.dim(); ++j) {
      const bool si = selected[static_cast<std::size_t>(i)];
      const bool sj = selected[static_cast<std::size_t>(j)];
      if (si && sj)
        split.h_o(i, j) = m(i, j);
      else if (!si && !sj)
        split.h_r(i, j) = m(i, j);
    }
  }
  return split;
}

struct PlantedActivations {
  Matrix x;                   // n x d
  std::vector<Index> outliers; // ascending
};

/// Standard-normal n x d activations from Rng(seed); `outlier_count` rows
/// chosen uniformly at random are then multiplied by `outlier_gain`.
PlantedActivations synth_activations(Index n, Index d, Index outlier_count, double outlier_gain,
                                     std::uint64_t seed);

/// Standard-normal m x n weights from Rng(derive_seed(seed, 1)).
Matrix synth_weights(Index m, Index n, std::uint64_t seed);

} // namespace qlr
