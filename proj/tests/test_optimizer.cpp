#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qlr/optimizer.hpp"

#include <random>

using namespace qlr;

namespace {

struct Instance {
  Matrix w;
  Hessian<double> h;
};

Instance planted(std::uint64_t seed, Index m = 64, Index n = 64) {
  return {synth_weights(m, n, seed),
          hessian_from_activations(synth_activations(n, 4 * n, 4, 10.0, seed).x)};
}

OptimizerConfig config(Index rank, int iters = 15) {
  OptimizerConfig cfg;
  cfg.rank = rank;
  cfg.outer_iters = iters;
  return cfg;
}

void expect_same(const Trajectory<double> &a, const Trajectory<double> &b) {
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].q_scale, b.records[i].q_scale);
    EXPECT_EQ(a.records[i].norm_q, b.records[i].norm_q);
    EXPECT_EQ(a.records[i].norm_lr, b.records[i].norm_lr);
    EXPECT_EQ(a.records[i].act_err, b.records[i].act_err);
  }
  EXPECT_EQ(a.final_q.codes, b.final_q.codes);
  EXPECT_EQ(a.final_q.scales, b.final_q.scales);
  EXPECT_EQ(a.final_factors.left, b.final_factors.left);
  EXPECT_EQ(a.final_factors.right, b.final_factors.right);
}

} // namespace

TEST(Run, SingleZeroInitIterationIsQuantizeThenResidualApprox) {
  const auto inst = planted(1, 32, 24);
  const auto traj = run(inst.w, inst.h, config(5, 1));

  const auto q = quantize(inst.w, QuantSpec{2, Granularity::PerMatrix});
  const auto f = lr_approx(Matrix(inst.w - dequantize(q)), inst.h, 5);
  EXPECT_EQ(traj.final_q.codes, q.codes);
  EXPECT_EQ(traj.final_q.scales, q.scales);
  EXPECT_EQ(traj.final_factors.left, f.left);
  EXPECT_EQ(traj.final_factors.right, f.right);
}

TEST(Run, NearLosslessAtSixteenBits) {
  std::mt19937_64 gen(2);
  const Matrix w = oracle::gaussian(16, 3, gen) * oracle::gaussian(3, 12, gen);
  const auto h = hessian_from_activations(oracle::gaussian(12, 40, gen));
  auto cfg = config(4, 3);
  cfg.q_bits = 16;
  const auto traj = run(w, h, cfg);
  EXPECT_LE(traj.records.back().act_err, 1e-6);
}

TEST(Run, ZeroInitFirstIterationIsQuantizerDominated) {
  // 4-bit Q: the 3-level 2-bit grid is too coarse for Q to carry ~all of W.
  const auto inst = planted(3);
  auto cfg = config(8, 2);
  cfg.q_bits = 4;
  const auto &first = run(inst.w, inst.h, cfg).records.front();
  EXPECT_GT(first.norm_q, 0.9);
  EXPECT_LT(first.norm_lr, 0.3);
}

TEST(Run, DeterministicAndReevaluable) {
  const auto inst = planted(4);
  for (auto init : {InitStrategy::zero(), InitStrategy::lrapprox_w(), InitStrategy::odlri(4)}) {
    auto cfg = config(8, 6);
    cfg.init = init;
    const auto a = run(inst.w, inst.h, cfg);
    const auto b = run(inst.w, inst.h, cfg);
    expect_same(a, b);
    ASSERT_EQ(a.records.size(), 6u);
    for (const auto &r : a.records) {
      EXPECT_TRUE(std::isfinite(r.norm_q) && r.norm_q >= 0);
      EXPECT_TRUE(std::isfinite(r.norm_lr) && r.norm_lr >= 0);
      EXPECT_TRUE(std::isfinite(r.act_err) && r.act_err >= 0);
    }
    const auto m = evaluate_decomposition<double>(inst.w, inst.h, dequantize(a.final_q),
                                                  a.final_factors.product());
    EXPECT_EQ(m.act_err, a.records.back().act_err);
    EXPECT_EQ(m.norm_q, a.records.back().norm_q);
    EXPECT_EQ(m.norm_lr, a.records.back().norm_lr);
    EXPECT_EQ(current_scale(a.final_q), a.records.back().q_scale);
  }
}

TEST(Run, LrStepNeverIncreasesErrorWithFullPrecisionFactors) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = planted(seed);
    for (auto init : {InitStrategy::zero(), InitStrategy::lrapprox_w(), InitStrategy::odlri(1)}) {
      auto cfg = config(8);
      cfg.init = init;
      for (const auto &r : run(inst.w, inst.h, cfg).records)
        EXPECT_LE(r.act_err, r.act_err_before_lr + 1e-10);
    }
  }
}

TEST(Run, QuantizedFactorsUseLplr) {
  const auto inst = planted(5, 32, 32);
  auto cfg = config(4, 3);
  cfg.lr_bits = 4;
  cfg.inner_iters = 3;
  const auto traj = run(inst.w, inst.h, cfg);
  ASSERT_TRUE(traj.final_factors.quant_meta.has_value());
  EXPECT_EQ(traj.final_factors.quant_meta->bits_left, 4);
  EXPECT_EQ(traj.records.size(), 3u);
}

TEST(Run, ConfigValidation) {
  const auto inst = planted(6, 16, 16);
  auto expect_invalid = [&](const Matrix &w, OptimizerConfig cfg) {
    try {
      run(w, inst.h, cfg);
      FAIL();
    } catch (const Error &e) {
      EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
    }
  };
  expect_invalid(Matrix::Ones(16, 15), config(2));
  expect_invalid(inst.w, config(0));
  expect_invalid(inst.w, config(17));
  expect_invalid(inst.w, config(2, 0));
  auto cfg = config(2);
  cfg.init = InitStrategy::odlri(3);
  expect_invalid(inst.w, cfg);
  cfg = config(2);
  cfg.q_bits = 1;
  expect_invalid(inst.w, cfg);
}

TEST(CompareInits, SingletonMatchesRun) {
  const auto inst = planted(7, 32, 32);
  const auto cfg = config(4, 4);
  const auto out = compare_inits(inst.w, inst.h, cfg, {InitStrategy::zero()});
  ASSERT_EQ(out.size(), 1u);
  expect_same(out.front(), run(inst.w, inst.h, cfg));
  EXPECT_THROW(compare_inits(inst.w, inst.h, cfg, {}), Error);
}

TEST(CompareInits, ParallelMatchesSequential) {
  const auto inst = planted(8, 32, 32);
  const std::vector<InitStrategy> inits{InitStrategy::zero(), InitStrategy::lrapprox_w(),
                                        InitStrategy::odlri(2)};
  const auto seq = compare_inits(inst.w, inst.h, config(4, 4), inits, 1);
  const auto par = compare_inits(inst.w, inst.h, config(4, 4), inits, 3);
  for (std::size_t i = 0; i < inits.size(); ++i)
    expect_same(seq[i], par[i]);
}

TEST(CompareInits, LowRankFirstKeepsLowRankDominant) {
  int dominant = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = planted(seed);
    const auto out = compare_inits(inst.w, inst.h, config(8),
                                   {InitStrategy::zero(), InitStrategy::lrapprox_w()});
    const auto &recs = out[1].records;
    dominant += std::all_of(recs.begin(), recs.end(),
                            [](const IterationRecord &r) { return r.norm_lr > r.norm_q; });
  }
  EXPECT_GE(dominant, 45);
}
