#pragma once

// Symmetric uniform scalar quantizer on the odd-level grid
// {-(2^(b-1)-1), ..., 2^(b-1)-1} * s, with one scale per matrix or per column.
// Rounding is nearest with ties to even.

#include "qlr/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace qlr {

enum class Granularity { PerMatrix, PerColumn };

struct QuantSpec {
  int bits = 2;
  Granularity granularity = Granularity::PerMatrix;

  static constexpr int kMinBits = 2;
  static constexpr int kMaxBits = 16;

  void validate() const {
    if (bits < kMinBits || bits > kMaxBits)
      throw Error(ErrorCode::ConfigInvalid,
                  "quantizer bits must be in [2, 16], got " + std::to_string(bits));
  }
  std::int32_t max_code() const noexcept { return (std::int32_t{1} << (bits - 1)) - 1; }
};

using CodeGrid = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct QuantizedMatrix {
  CodeGrid codes;
  std::vector<Scalar> scales; // size 1 (PerMatrix) or cols (PerColumn)
  QuantSpec spec;

  Index rows() const noexcept { return codes.rows(); }
  Index cols() const noexcept { return codes.cols(); }
  Scalar scale_for_column(Index j) const {
    return spec.granularity == Granularity::PerMatrix ? scales.front() : scales[j];
  }
};

template <typename Derived>
std::vector<typename Derived::Scalar> fit_scale(const Eigen::MatrixBase<Derived> &w,
                                                const QuantSpec &spec) {
  using Scalar = typename Derived::Scalar;
  spec.validate();
  if (w.size() == 0)
    throw Error(ErrorCode::DimensionMismatch, "fit_scale on an empty matrix");
  const Scalar levels = static_cast<Scalar>(spec.max_code());
  auto group_scale = [&](Scalar maxabs) { return maxabs > 0 ? maxabs / levels : Scalar(1); };

  if (spec.granularity == Granularity::PerMatrix)
    return {group_scale(w.cwiseAbs().maxCoeff())};

  std::vector<Scalar> scales(static_cast<std::size_t>(w.cols()));
  for (Index j = 0; j < w.cols(); ++j)
    scales[static_cast<std::size_t>(j)] = group_scale(w.col(j).cwiseAbs().maxCoeff());
  return scales;
}

template <typename Derived>
QuantizedMatrix<typename Derived::Scalar> quantize(const Eigen::MatrixBase<Derived> &w,
                                                   const QuantSpec &spec) {
  using Scalar = typename Derived::Scalar;
  require_finite(w, "quantizer input");
  QuantizedMatrix<Scalar> q{CodeGrid(w.rows(), w.cols()), fit_scale(w, spec), spec};
  const Scalar hi = static_cast<Scalar>(spec.max_code());
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) {
      // nearbyint honours the default FE_TONEAREST mode: ties go to even.
      Scalar c = std::nearbyint(w(i, j) / q.scale_for_column(j));
      c = std::clamp(c, -hi, hi);
      q.codes(i, j) = static_cast<std::int32_t>(c);
    }
  }
  return q;
}

template <typename Scalar>
Mat<Scalar> dequantize(const QuantizedMatrix<Scalar> &q) {
  Mat<Scalar> out(q.rows(), q.cols());
  for (Index i = 0; i < q.rows(); ++i)
    for (Index j = 0; j < q.cols(); ++j)
      out(i, j) = static_cast<Scalar>(q.codes(i, j)) * q.scale_for_column(j);
  return out;
}

/// The tracked scale metric: the single scale, or the mean of column scales.
template <typename Scalar>
Scalar current_scale(const QuantizedMatrix<Scalar> &q) {
  if (q.scales.empty())
    return Scalar(0);
  return std::accumulate(q.scales.begin(), q.scales.end(), Scalar(0)) /
         static_cast<Scalar>(q.scales.size());
}

} // namespace qlr
