#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qlr/lowrank.hpp"
#include "qlr/quantization.hpp"

#include <random>

using namespace qlr;

namespace {

double act_error(const Matrix &a, const FactorPair<double> &f, const Hessian<double> &h) {
  return act_fro_norm2(Matrix(a - f.product()), h.matrix());
}

Hessian<double> random_full_rank_hessian(Index n, std::mt19937_64 &gen) {
  return hessian_from_activations(oracle::gaussian(n, 3 * n, gen));
}

bool on_grid(const Matrix &m, const std::vector<double> &col_scales) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      const double c = m(i, j) / col_scales[static_cast<std::size_t>(j)];
      if (std::abs(c - std::nearbyint(c)) > 1e-9)
        return false;
    }
  return true;
}

} // namespace

TEST(LrApprox, ExactOnRankOne) {
  std::mt19937_64 gen(1);
  const Matrix a = oracle::gaussian(6, 1, gen) * oracle::gaussian(1, 5, gen);
  const auto h = Hessian<double>::from_matrix(Matrix::Identity(5, 5));
  const auto f = lr_approx(a, h, 1);
  EXPECT_LE(act_error(a, f, h), 1e-24 * a.squaredNorm() + 1e-28);
}

TEST(LrApprox, IdentityHessianIsPlainTruncatedSvd) {
  std::mt19937_64 gen(2);
  const Matrix a = oracle::gaussian(7, 5, gen);
  const auto h = Hessian<double>::from_matrix(Matrix::Identity(5, 5));
  const auto sv = oracle::singular_values(a);
  for (Index r = 1; r <= 5; ++r) {
    const double expected = oracle::tail_energy(sv, static_cast<std::size_t>(r));
    EXPECT_NEAR(act_error(a, lr_approx(a, h, r), h), expected, 1e-8 * std::max(expected, 1e-12));
  }
}

TEST(LrApprox, WhitenedEckartYoung) {
  std::mt19937_64 gen(3);
  const Matrix a = oracle::gaussian(8, 6, gen);
  const auto h = random_full_rank_hessian(6, gen);
  const auto sv = oracle::singular_values(oracle::multiply(a, h.cholesky().factor.matrix()));
  const double expected = oracle::tail_energy(sv, 3);
  EXPECT_NEAR(act_error(a, lr_approx(a, h, 3), h), expected, 1e-8 * expected);
}

TEST(LrApprox, BeatsRandomCandidates) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = oracle::gaussian(9, 7, gen);
    const auto h = random_full_rank_hessian(7, gen);
    const Index r = 1 + trial % 4;
    const double best = act_error(a, lr_approx(a, h, r), h);
    for (int c = 0; c < 100; ++c) {
      // Random L, optimal R for it: still no better than the joint optimum.
      const Matrix left = oracle::gaussian(9, r, gen);
      const Matrix right = pseudoinverse(left) * a;
      const FactorPair<double> candidate{left, right, std::nullopt};
      EXPECT_LE(best, act_error(a, candidate, h) * (1 + 1e-12));
    }
  }
}

TEST(LrApprox, ScalingEquivariant) {
  std::mt19937_64 gen(5);
  const Matrix a = oracle::gaussian(6, 6, gen);
  const auto h = random_full_rank_hessian(6, gen);
  const Matrix base = lr_approx(a, h, 2).product();
  for (double c : {-3.0, 0.5, 10.0}) {
    const Matrix scaled = lr_approx(Matrix(c * a), h, 2).product();
    EXPECT_LE((scaled - c * base).norm(), 1e-10 * std::abs(c) * base.norm());
  }
}

TEST(LrApprox, Errors) {
  const auto h = Hessian<double>::from_matrix(Matrix::Identity(4, 4));
  try {
    lr_approx(Matrix::Ones(3, 4), h, 4);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::RankTooLarge);
  }
  try {
    lr_approx(Matrix::Ones(3, 5), h, 1);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Lplr, NearLosslessAtSixteenBits) {
  std::mt19937_64 gen(6);
  const Matrix a = oracle::gaussian(12, 3, gen) * oracle::gaussian(3, 10, gen);
  const auto h = random_full_rank_hessian(10, gen);
  const auto f = lplr(a, h, 4, 16, 16, 5);
  EXPECT_LE(act_error(a, f, h), 1e-6 * act_fro_norm2(a, h.matrix()));
}

TEST(Lplr, BestIterateIsMonotoneInIterationCount) {
  std::mt19937_64 gen(7);
  const Matrix a = oracle::gaussian(16, 16, gen);
  const auto h = random_full_rank_hessian(16, gen);
  const auto one = lplr_detailed(a, h, 4, 4, 4, 1);
  const auto ten = lplr_detailed(a, h, 4, 4, 4, 10);
  EXPECT_LE(ten.best_error, one.best_error);
  EXPECT_EQ(ten.errors.size(), 10u);
  EXPECT_EQ(ten.errors.front(), one.errors.front());
  EXPECT_NEAR(act_error(a, ten.factors, h), ten.best_error, 1e-12 * ten.best_error);
}

TEST(Lplr, ZeroTarget) {
  const auto h = Hessian<double>::from_matrix(Matrix::Identity(5, 5));
  const auto r = lplr_detailed(Matrix::Zero(4, 5), h, 2, 4, 4, 3);
  EXPECT_EQ(r.factors.product(), Matrix::Zero(4, 5));
  EXPECT_EQ(r.best_error, 0.0);
  EXPECT_GT(r.singular_steps, 0);
}

TEST(Lplr, FactorsLieOnTheirGrids) {
  std::mt19937_64 gen(8);
  const Matrix a = oracle::gaussian(10, 8, gen);
  const auto h = random_full_rank_hessian(8, gen);
  const auto f = lplr(a, h, 3, 4, 3, 6);
  ASSERT_TRUE(f.quant_meta.has_value());
  EXPECT_EQ(f.quant_meta->bits_left, 4);
  EXPECT_EQ(f.quant_meta->bits_right, 3);
  EXPECT_TRUE(on_grid(f.left, f.quant_meta->scales_left));
  EXPECT_TRUE(on_grid(Matrix(f.right.transpose()), f.quant_meta->scales_right));
  const double max_left = QuantSpec{4}.max_code();
  for (Index j = 0; j < f.left.cols(); ++j)
    EXPECT_LE(f.left.col(j).cwiseAbs().maxCoeff(),
              max_left * f.quant_meta->scales_left[static_cast<std::size_t>(j)] * (1 + 1e-12));
}

TEST(Lplr, RejectsBadArguments) {
  const auto h = Hessian<double>::from_matrix(Matrix::Identity(3, 3));
  EXPECT_THROW(lplr(Matrix::Ones(3, 3), h, 1, 4, 4, 0), Error);
  EXPECT_THROW(lplr(Matrix::Ones(3, 3), h, 1, 1, 4, 2), Error);
}

TEST(OdlriInit, FullSelectionReducesToLrApprox) {
  std::mt19937_64 gen(9);
  const Matrix w = oracle::gaussian(8, 6, gen);
  const auto h = random_full_rank_hessian(6, gen);
  const auto odlri = odlri_init(w, h, 6, 6);
  const auto plain = lr_approx(w, h, 6);
  EXPECT_LE((odlri.left - plain.left).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((odlri.right - plain.right).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OdlriInit, ReproducesOutlierColumnsExactly) {
  std::mt19937_64 gen(10);
  const Matrix w = oracle::gaussian(16, 32, gen);
  const auto act = synth_activations(32, 128, 4, 10.0, 10);
  const auto h = hessian_from_activations(act.x);
  const auto f = odlri_init(w, h, 8, 4);
  const auto channels = select_outlier_channels(h, 4);
  const Matrix resid = w - f.product();
  EXPECT_LE(resid(Eigen::all, channels).cwiseAbs().maxCoeff(), 1e-9 * w.cwiseAbs().maxCoeff());
}

TEST(OdlriInit, SparsityOfFactors) {
  std::mt19937_64 gen(11);
  const Matrix w = oracle::gaussian(12, 20, gen);
  const auto h = hessian_from_activations(synth_activations(20, 80, 3, 8.0, 11).x);
  const Index k = 3, r = 7;
  const auto f = odlri_init(w, h, r, k);
  const auto channels = select_outlier_channels(h, k);
  std::vector<bool> selected(20, false);
  for (Index c : channels)
    selected[static_cast<std::size_t>(c)] = true;
  for (Index j = 0; j < 20; ++j) {
    if (!selected[static_cast<std::size_t>(j)]) {
      EXPECT_TRUE((f.right.col(j).array() == 0).all()) << "column " << j;
    }
  }
  EXPECT_TRUE((f.left.rightCols(r - k).array() == 0).all());
  EXPECT_TRUE((f.right.bottomRows(r - k).array() == 0).all());
}

TEST(OdlriInit, OutlierResidualBelowFullHessianInit) {
  // Residual on the outlier activations, ||(W - L0 R0) X_o|| / ||W X_o||, for
  // the H_o-driven init against the full-H init at the same rank.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix w = synth_weights(64, 64, seed);
    const auto act = synth_activations(64, 256, 4, 10.0, seed);
    const auto h = hessian_from_activations(act.x);
    const auto split = split_hessian(h, select_outlier_channels(h, 4));
    const double denom = act_fro_norm2(w, split.h_o);
    auto ratio = [&](const FactorPair<double> &f) {
      return std::sqrt(act_fro_norm2(Matrix(w - f.product()), split.h_o) / denom);
    };
    const double outlier_ratio = ratio(odlri_init(w, h, 8, 4));
    const double full_ratio = ratio(lr_approx(w, h, 8));
    EXPECT_LE(outlier_ratio, 0.01);
    EXPECT_LT(outlier_ratio, full_ratio);
  }
}

TEST(OdlriInit, KOutOfRange) {
  const auto h = Hessian<double>::from_matrix(Matrix::Identity(6, 6));
  for (Index k : {Index{0}, Index{4}}) {
    try {
      odlri_init(Matrix::Ones(5, 6), h, 3, k);
      FAIL();
    } catch (const Error &e) {
      EXPECT_EQ(e.code(), ErrorCode::KOutOfRange);
    }
  }
}

TEST(OdlriInit, ResidualScaleNeverExceedsRawWeights) {
  // W - L0 R0 differs from W only on the outlier columns, where it is ~0, so
  // the per-matrix scale can only shrink. It shrinks strictly exactly when the
  // largest |W| entry sits in a selected column.
  const QuantSpec spec{2, Granularity::PerMatrix};
  int strict = 0, max_in_selected = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Matrix w = synth_weights(64, 64, seed);
    const auto h = hessian_from_activations(synth_activations(64, 256, 4, 10.0, seed).x);
    const Index k = k_for_rank(8, 64);
    const auto f = odlri_init(w, h, 8, k);
    const double s_odlri = current_scale(quantize(Matrix(w - f.product()), spec));
    const double s_zero = current_scale(quantize(w, spec));
    EXPECT_LE(s_odlri, s_zero * (1 + 1e-15));
    strict += s_odlri < s_zero * (1 - 1e-12);

    Index bi = 0, bj = 0;
    w.cwiseAbs().maxCoeff(&bi, &bj);
    const auto channels = select_outlier_channels(h, k);
    max_in_selected += std::find(channels.begin(), channels.end(), bj) != channels.end();
  }
  EXPECT_EQ(strict, max_in_selected);
}

TEST(ZeroInit, ProductIsZero) {
  const auto f = zero_init(5, 7, 3);
  EXPECT_EQ(f.product(), Matrix::Zero(5, 7));
  EXPECT_EQ(f.rank(), 3);
  std::mt19937_64 gen(12);
  const Matrix w = oracle::gaussian(5, 7, gen);
  EXPECT_EQ(quantize(Matrix(w - f.product()), QuantSpec{}).codes, quantize(w, QuantSpec{}).codes);
  const auto h = hessian_from_activations(oracle::gaussian(7, 20, gen));
  EXPECT_EQ(act_fro_norm2(f.product(), h.matrix()), 0.0);
}
