#include "falcon/coordloss/coord_loss.hpp"

#include "../support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

using namespace falcon;
using namespace falcon::coordloss;

namespace {

Matrix randn(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

// Direct loops over the candidate set, no shared code with the library.
double brute_obs_to_act(const Matrix& v, const Matrix& w, const Matrix& wa, const Matrix& wq, double tau) {
  const Eigen::Index b = v.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    double denom = 0.0;
    for (const Matrix* c : {&w, &wa, &wq}) {
      for (Eigen::Index j = 0; j < b; ++j) denom += std::exp(v.row(i).dot(c->row(j)) / tau);
    }
    total -= std::log(std::exp(v.row(i).dot(w.row(i)) / tau) / denom);
  }
  return total / static_cast<double>(b);
}

double brute_act_to_obs(const Matrix& v, const Matrix& w, double tau) {
  const Eigen::Index b = v.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    double denom = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) denom += std::exp(w.row(i).dot(v.row(j)) / tau);
    total -= std::log(std::exp(w.row(i).dot(v.row(i)) / tau) / denom);
  }
  return total / static_cast<double>(b);
}

}  // namespace

TEST(Derangement, NoFixedPointsAndPermutation) {
  std::mt19937_64 rng(11);
  for (int b : {2, 3, 5, 16, 64}) {
    for (int k = 0; k < 200; ++k) {
      const auto p = sample_derangement(b, rng);
      ASSERT_TRUE(is_derangement(p));
      auto sorted = p;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < b; ++i) ASSERT_EQ(sorted[i], i);
    }
  }
}

TEST(Derangement, BatchTwoIsTheSwap) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(sample_derangement(2, rng), (std::vector<int>{1, 0}));
}

TEST(Derangement, RejectsTinyBatch) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_derangement(1, rng), std::invalid_argument);
  EXPECT_THROW(sample_derangement(0, rng), std::invalid_argument);
}

TEST(Derangement, UniformOverNineForBatchFour) {
  // D(4) = 9; each should appear with probability 1/9.
  std::mt19937_64 rng(5);
  std::map<std::vector<int>, int> counts;
  const int n = 18000;
  for (int k = 0; k < n; ++k) ++counts[sample_derangement(4, rng)];
  EXPECT_EQ(counts.size(), 9u);
  double chi2 = 0.0;
  for (const auto& [p, c] : counts) chi2 += std::pow(c - n / 9.0, 2) / (n / 9.0);
  EXPECT_LT(chi2, 26.1);  // chi-square 8 dof, p = 0.001
}

TEST(Derangement, IsDerangementRejects) {
  EXPECT_FALSE(is_derangement({0, 1}));
  EXPECT_FALSE(is_derangement({1, 1}));
  EXPECT_FALSE(is_derangement({1, 2}));
  EXPECT_FALSE(is_derangement({}));
}

TEST(Summarize, MeansOverWindowAndHorizon) {
  Matrix z(4, 2);
  z << 1, 2, 3, 4, 5, 6, 7, 8;
  Matrix arm(6, 1), base(6, 2);
  arm << 1, 2, 3, 4, 5, 6;
  base << 0, 1, 0, 1, 0, 1, 2, 2, 2, 2, 2, 2;
  const Summary s = summarize(nn::constant(z), 2, nn::constant(arm), nn::constant(base), 3);
  EXPECT_EQ(s.z_bar.value(), (Matrix(2, 2) << 2, 3, 6, 7).finished());
  EXPECT_EQ(s.arm_bar.value(), (Matrix(2, 1) << 2, 5).finished());
  EXPECT_EQ(s.base_bar.value(), (Matrix(2, 2) << 0, 1, 2, 2).finished());
  EXPECT_EQ(s.u.value(), (Matrix(2, 3) << 2, 0, 1, 5, 2, 2).finished());
}

TEST(Summarize, MismatchedBatchThrows) {
  EXPECT_THROW(summarize(nn::constant(Matrix::Zero(4, 2)), 2, nn::constant(Matrix::Zero(9, 1)),
                         nn::constant(Matrix::Zero(9, 1)), 3),
               std::invalid_argument);
}

TEST(Negatives, SwapBlocksWithLambda) {
  Matrix arm(3, 2), base(3, 1);
  arm << 1, 1, 2, 2, 3, 3;
  base << 10, 20, 30;
  const std::vector<int> lambda{2, 0, 1};
  const Negatives n = build_negatives(nn::constant(arm), nn::constant(base), lambda);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(n.arm_mismatch.value().row(i).head(2), arm.row(i));
    EXPECT_EQ(n.arm_mismatch.value()(i, 2), base(lambda[i], 0));
    EXPECT_EQ(n.base_mismatch.value().row(i).head(2), arm.row(lambda[i]));
    EXPECT_EQ(n.base_mismatch.value()(i, 2), base(i, 0));
  }
  EXPECT_THROW(build_negatives(nn::constant(arm), nn::constant(base), {0, 2, 1}), std::invalid_argument);
}

TEST(InfoNce, MatchesBruteForce) {
  std::mt19937_64 rng(21);
  const int b = 5, d = 4;
  const double tau = 0.1;
  const Matrix v = unit_rows(randn(b, d, rng)), w = unit_rows(randn(b, d, rng));
  const Matrix wa = unit_rows(randn(b, d, rng)), wq = unit_rows(randn(b, d, rng));
  const InfoNce l = info_nce(nn::constant(v), nn::constant(w), nn::constant(wa), nn::constant(wq), tau);
  const double o2a = brute_obs_to_act(v, w, wa, wq, tau), a2o = brute_act_to_obs(v, w, tau);
  EXPECT_NEAR(l.obs_to_act.item(), o2a, 1e-9);
  EXPECT_NEAR(l.act_to_obs.item(), a2o, 1e-9);
  EXPECT_NEAR(l.coord.item(), 0.5 * (o2a + a2o), 1e-9);
}

TEST(InfoNce, AlignedPairsBeatShuffled) {
  std::mt19937_64 rng(2);
  const Matrix v = unit_rows(randn(8, 6, rng));
  const Matrix other = unit_rows(randn(8, 6, rng));
  const auto aligned = info_nce(nn::constant(v), nn::constant(v), nn::constant(other), nn::constant(other), 0.1);
  const auto shuffled = info_nce(nn::constant(v), nn::constant(other), nn::constant(v), nn::constant(v), 0.1);
  EXPECT_LT(aligned.coord.item(), shuffled.coord.item());
}

TEST(InfoNce, RejectsBadTemperature) {
  const Var x = nn::constant(Matrix::Identity(2, 2));
  EXPECT_THROW(info_nce(x, x, x, x, 0.0), std::invalid_argument);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 3.0, 0.5), 4.5);
  const Var t = total_loss(Var::scalar(1.0), Var::scalar(2.0), Var::scalar(3.0), 0.5);
  EXPECT_DOUBLE_EQ(t.item(), 4.5);
  EXPECT_THROW(total_loss(1.0, 2.0, 3.0, -0.1), std::invalid_argument);
}

TEST(TotalLoss, ZeroDeltaDetachesCoordinationTerm) {
  Var c(Matrix::Constant(1, 1, 3.0), true);
  const Var t = total_loss(Var::scalar(1.0), Var::scalar(2.0), c, 0.0);
  EXPECT_DOUBLE_EQ(t.item(), 3.0);
  t.backward();
  EXPECT_TRUE(c.grad().size() == 0 || c.grad()(0, 0) == 0.0);
}

TEST(CoordinationLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  const int b = 4, t_obs = 2, h = 3, dz = 5;
  CoordinationLoss loss(dz, 3 + 5, {.tau = 0.1, .proj_dim = 6, .proj_hidden = 7}, rng);
  nn::ParameterSet ps;
  loss.collect(ps, "");
  Var z(randn(b * t_obs, dz, rng), true);
  const Var arm = nn::constant(randn(b * h, 3, rng));
  const Var base = nn::constant(randn(b * h, 5, rng));
  const auto lambda = sample_derangement(b, rng);
  auto params = ps.vars();
  params.push_back(z);
  const auto g = falcon::testing::check_gradients(params, [&] { return loss.forward(z, t_obs, arm, base, h, lambda).coord; });
  EXPECT_LE(g.rel_error, 1e-5);
}

TEST(ProjectionHead, OutputsUnitRows) {
  std::mt19937_64 rng(3);
  ProjectionHead p(4, 8, 5, rng);
  const Matrix y = p.forward(nn::constant(randn(6, 4, rng))).value();
  for (Eigen::Index i = 0; i < y.rows(); ++i) EXPECT_NEAR(y.row(i).norm(), 1.0, 1e-9);
}
