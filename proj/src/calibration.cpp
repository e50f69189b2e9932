#include "qlr/calibration.hpp"
#include "qlr/rng.hpp"

#include <cmath>

namespace qlr {

Index k_for_rank(Index rank, Index n) {
  if (rank < 1 || n < 1)
    throw Error(ErrorCode::ConfigInvalid, "k_for_rank needs rank >= 1 and n >= 1");
  double percent;
  switch (rank) {
  case 64: percent = 0.1; break;
  case 128: percent = 0.2; break;
  case 256: percent = 0.4; break;
  default: percent = 100.0 * static_cast<double>(rank) / 65536.0; break;
  }
  const auto k = static_cast<Index>(std::llround(percent * static_cast<double>(n) / 100.0));
  return std::clamp<Index>(k, 1, std::min(rank, n));
}

PlantedActivations synth_activations(Index n, Index d, Index outlier_count, double outlier_gain,
                                     std::uint64_t seed) {
  if (n < 1 || d < 1)
    throw Error(ErrorCode::ConfigInvalid, "synth_activations needs n >= 1 and d >= 1");
  if (outlier_count < 0 || outlier_count > n)
    throw Error(ErrorCode::ConfigInvalid, "outlier count must be in [0, n]");
  if (!(outlier_gain >= 1.0) || !std::isfinite(outlier_gain))
    throw Error(ErrorCode::ConfigInvalid, "outlier gain must be a finite value >= 1");

  Rng rng(seed);
  PlantedActivations out{Matrix(n, d), {}};
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      out.x(i, j) = rng.normal();

  for (std::size_t c : rng.sample_without_replacement(static_cast<std::size_t>(n),
                                                      static_cast<std::size_t>(outlier_count)))
    out.outliers.push_back(static_cast<Index>(c));
  std::sort(out.outliers.begin(), out.outliers.end());
  for (Index c : out.outliers)
    out.x.row(c) *= outlier_gain;
  return out;
}

Matrix synth_weights(Index m, Index n, std::uint64_t seed) {
  if (m < 1 || n < 1)
    throw Error(ErrorCode::ConfigInvalid, "synth_weights needs m >= 1 and n >= 1");
  Rng rng(derive_seed(seed, 1));
  Matrix w(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      w(i, j) = rng.normal();
  return w;
}

} // namespace qlr
