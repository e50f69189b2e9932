#pragma once

// Joint Q + LR optimization: initialize (L0, R0), then for t = 1..T
//   Q_t        <- Quantize(W - L_{t-1} R_{t-1})
//   L_t, R_t   <- LRApprox(W - Q_t)
// with every iteration's metrics recorded in the activation (H) metric.

#include "qlr/calibration.hpp"
#include "qlr/core.hpp"
#include "qlr/linalg.hpp"
#include "qlr/lowrank.hpp"
#include "qlr/parallel.hpp"
#include "qlr/quantization.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qlr {

struct OptimizerConfig {
  int outer_iters = 15;
  int inner_iters = 10;
  Index rank = 1;
  int q_bits = 2;
  std::optional<int> lr_bits; // nullopt: full-precision factors
  InitStrategy init = InitStrategy::zero();
  Granularity q_granularity = Granularity::PerMatrix;
  std::uint64_t seed = 0;

  QuantSpec q_spec() const { return {q_bits, q_granularity}; }

  void validate(Index m, Index n) const {
    auto fail = [](const std::string &msg) { throw Error(ErrorCode::ConfigInvalid, msg); };
    if (outer_iters < 1)
      fail("outer_iters must be >= 1");
    if (inner_iters < 1)
      fail("inner_iters must be >= 1");
    if (rank < 1 || rank > std::min(m, n))
      fail("rank " + std::to_string(rank) + " outside [1, min(m, n)]");
    q_spec().validate();
    if (lr_bits)
      QuantSpec{*lr_bits, Granularity::PerColumn}.validate();
    if (init.kind == InitStrategy::Kind::Odlri && (init.k < 1 || init.k > std::min(rank, n)))
      fail("odlri k = " + std::to_string(init.k) + " outside [1, min(rank, n)]");
  }
};

struct IterationRecord {
  int t = 0;
  double q_scale = 0;
  double norm_q = 0;   // ||Q X|| / ||W X||
  double norm_lr = 0;  // ||L R X|| / ||W X||
  double act_err = 0;  // ||(W - Q - L R) X||^2 / ||W X||^2
  double act_err_before_lr = 0; // same, with (Q_t, L_{t-1}, R_{t-1})
};

template <typename Scalar>
struct Trajectory {
  std::vector<IterationRecord> records;
  QuantizedMatrix<Scalar> final_q;
  FactorPair<Scalar> final_factors;
};

template <typename Scalar>
struct DecompositionMetrics {
  double norm_q;
  double norm_lr;
  double act_err;
};

/// Normalized metrics of W ~ Q + L R in the H metric; all ratios are 0 when ||W X|| = 0.
template <typename Scalar>
DecompositionMetrics<Scalar> evaluate_decomposition(const Mat<Scalar> &w, const Hessian<Scalar> &h,
                                                    const Mat<Scalar> &q, const Mat<Scalar> &lr) {
  const Scalar base = act_fro_norm2(w, h.matrix());
  if (!(base > 0))
    return {0, 0, 0};
  const auto ratio = [&](Scalar v) { return static_cast<double>(v / base); };
  return {std::sqrt(ratio(act_fro_norm2(q, h.matrix()))),
          std::sqrt(ratio(act_fro_norm2(lr, h.matrix()))),
          ratio(act_fro_norm2(w - q - lr, h.matrix()))};
}

/// The LRApprox substep: exact whitened SVD, or LPLR when factors are quantized.
template <typename Scalar>
FactorPair<Scalar> lr_step(const Mat<Scalar> &target, const Hessian<Scalar> &h,
                           const OptimizerConfig &cfg) {
  if (cfg.lr_bits)
    return lplr(target, h, cfg.rank, *cfg.lr_bits, *cfg.lr_bits, cfg.inner_iters);
  return lr_approx(target, h, cfg.rank);
}

template <typename Scalar>
FactorPair<Scalar> initialize(const Mat<Scalar> &w, const Hessian<Scalar> &h,
                              const OptimizerConfig &cfg) {
  switch (cfg.init.kind) {
  case InitStrategy::Kind::Zero:
    return zero_init<Scalar>(w.rows(), w.cols(), cfg.rank);
  case InitStrategy::Kind::LRApproxW:
    return lr_step(w, h, cfg);
  case InitStrategy::Kind::Odlri:
    return odlri_init(w, h, cfg.rank, cfg.init.k);
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown init strategy");
}

template <typename Scalar>
Trajectory<Scalar> run(const Mat<Scalar> &w, const Hessian<Scalar> &h, const OptimizerConfig &cfg) {
  if (h.dim() != w.cols())
    throw Error(ErrorCode::ConfigInvalid, "Hessian is " + std::to_string(h.dim()) +
                                              "-dimensional but W has " +
                                              std::to_string(w.cols()) + " columns");
  cfg.validate(w.rows(), w.cols());
  require_finite(w, "W");

  const QuantSpec q_spec = cfg.q_spec();
  FactorPair<Scalar> factors = initialize(w, h, cfg);

  Trajectory<Scalar> traj;
  traj.records.reserve(static_cast<std::size_t>(cfg.outer_iters));
  for (int t = 1; t <= cfg.outer_iters; ++t) {
    const Mat<Scalar> previous_lr = factors.product();
    auto q = quantize(Mat<Scalar>(w - previous_lr), q_spec);
    const Mat<Scalar> q_dense = dequantize(q);
    const auto before = evaluate_decomposition(w, h, q_dense, previous_lr);

    factors = lr_step(Mat<Scalar>(w - q_dense), h, cfg);
    const auto after = evaluate_decomposition(w, h, q_dense, factors.product());

    traj.records.push_back({t, static_cast<double>(current_scale(q)), after.norm_q, after.norm_lr,
                            after.act_err, before.act_err});
    traj.final_q = std::move(q);
  }
  traj.final_factors = std::move(factors);
  return traj;
}

/// One run per strategy with otherwise identical config; results in input order.
template <typename Scalar>
std::vector<Trajectory<Scalar>> compare_inits(const Mat<Scalar> &w, const Hessian<Scalar> &h,
                                              const OptimizerConfig &base,
                                              const std::vector<InitStrategy> &strategies,
                                              std::size_t threads = 1) {
  if (strategies.empty())
    throw Error(ErrorCode::ConfigInvalid, "compare_inits needs at least one strategy");
  std::vector<Trajectory<Scalar>> out(strategies.size());
  parallel_for(strategies.size(), threads, [&](std::size_t i) {
    OptimizerConfig cfg = base;
    cfg.init = strategies[i];
    out[i] = run(w, h, cfg);
  });
  return out;
}

} // namespace qlr
