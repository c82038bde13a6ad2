#include "falcon/diffusion/diffusion.hpp"
#include "falcon/nn/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace falcon;
using namespace falcon::diffusion;

namespace {

PolicySpec small_spec() {
  PolicySpec s;
  s.action_dim = 3;
  s.cond_dim = 2;
  s.horizon = 4;
  s.t_obs = 1;
  s.t_diff = 16;
  s.width = 32;
  s.blocks = 1;
  s.time_dim = 8;
  return s;
}

// Knows the clean chunk and inverts the forward process.
class OracleDenoiser final : public Denoiser {
 public:
  OracleDenoiser(Matrix clean, NoiseSchedule sched, int horizon)
      : clean_(std::move(clean)), sched_(std::move(sched)), h_(horizon) {}
  Var predict(const Var& noisy, const std::vector<int>& t, const Var&) const override {
    Matrix eps(noisy.rows(), noisy.cols());
    for (size_t i = 0; i < t.size(); ++i) {
      const double ab = sched_.alpha_bars[t[i]];
      const auto rows = static_cast<Eigen::Index>(i) * h_;
      eps.middleRows(rows, h_) =
          (noisy.value().middleRows(rows, h_) - std::sqrt(ab) * clean_.middleRows(rows, h_)) / std::sqrt(1.0 - ab);
    }
    return nn::constant(eps);
  }

 private:
  Matrix clean_;
  NoiseSchedule sched_;
  int h_;
};

class ZeroDenoiser final : public Denoiser {
 public:
  Var predict(const Var& noisy, const std::vector<int>&, const Var&) const override {
    return nn::constant(Matrix::Zero(noisy.rows(), noisy.cols()));
  }
};

}  // namespace

TEST(Schedule, CosineIsMonotoneAndClipped) {
  const auto s = NoiseSchedule::make(16, "cosine");
  ASSERT_EQ(s.steps(), 16);
  for (int t = 0; t < 16; ++t) {
    EXPECT_GT(s.betas[t], 0.0);
    EXPECT_LE(s.betas[t], 0.999);
    if (t > 0) EXPECT_LT(s.alpha_bars[t], s.alpha_bars[t - 1]);
  }
  // f(t) = cos^2(((t/T + s)/(1+s)) pi/2), alpha_bar_t = prod(1 - beta) = f(t+1)/f(0) before clipping.
  const auto f = [](double t) {
    const double x = (t / 16.0 + 0.008) / 1.008 * M_PI / 2;
    return std::cos(x) * std::cos(x);
  };
  EXPECT_NEAR(s.alpha_bars[7], f(8) / f(0), 1e-12);
}

TEST(Schedule, LinearEndpoints) {
  const auto s = NoiseSchedule::make(10, "linear");
  EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
  EXPECT_DOUBLE_EQ(s.betas.back(), 0.02);
  EXPECT_THROW(NoiseSchedule::make(10, "sigmoid"), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::make(1, "linear"), std::invalid_argument);
}

TEST(Normalizer, MapsRangeToUnitInterval) {
  Matrix x(3, 2);
  x << 0, 5, 1, 5, 2, 5;
  const auto n = Normalizer::fit(x);
  const Matrix y = n.apply(x);
  EXPECT_DOUBLE_EQ(y(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(y(2, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 0.0);
  // Degenerate dimension maps to 0 and back to its constant.
  EXPECT_EQ(y.col(1), Matrix::Zero(3, 1));
  EXPECT_LE((n.invert(y) - x).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Normalizer, JsonRoundTrip) {
  std::mt19937_64 rng(1);
  const Matrix x = Matrix::Random(20, 4);
  const auto n = Normalizer::fit(x);
  const auto m = Normalizer::from_json(n.to_json());
  EXPECT_EQ(n.apply(x), m.apply(x));
  EXPECT_THROW(Normalizer::fit(Matrix(0, 3)), std::invalid_argument);
}

TEST(TimestepEmbedding, SinCosLayout) {
  const Matrix e = timestep_embedding({0, 3}, 4);
  EXPECT_DOUBLE_EQ(e(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(e(0, 2), 1.0);
  EXPECT_DOUBLE_EQ(e(1, 0), std::sin(3.0));
  EXPECT_DOUBLE_EQ(e(1, 1), std::sin(3.0 * 0.01));
  EXPECT_DOUBLE_EQ(e(1, 3), std::cos(3.0 * 0.01));
}

TEST(TrainingLoss, OracleDenoiserIsZero) {
  const auto spec = small_spec();
  std::mt19937_64 rng(3);
  const Matrix clean = Matrix::Random(5 * spec.horizon, spec.action_dim);
  const auto sched = NoiseSchedule::make(spec.t_diff, spec.schedule);
  DiffusionPolicy p(spec, std::make_shared<OracleDenoiser>(clean, sched, spec.horizon));
  const Var cond = nn::constant(Matrix::Zero(5, spec.cond_dim));
  EXPECT_LE(p.training_loss(cond, clean, rng).item(), 1e-20);
}

TEST(TrainingLoss, ZeroDenoiserIsNoiseVariance) {
  auto spec = small_spec();
  spec.horizon = 10;
  std::mt19937_64 rng(4);
  DiffusionPolicy p(spec, std::make_shared<ZeroDenoiser>());
  const int n = 334;  // 334 * 10 * 3 ~ 1e4 draws
  const Var cond = nn::constant(Matrix::Zero(n, spec.cond_dim));
  const double l = p.training_loss(cond, Matrix::Zero(n * spec.horizon, spec.action_dim), rng).item();
  EXPECT_NEAR(l, 1.0, 0.05);
}

TEST(TrainingLoss, ShapeAndTimestepChecks) {
  const auto spec = small_spec();
  std::mt19937_64 rng(1);
  const auto p = DiffusionPolicy::make(spec, rng);
  const Var cond = nn::constant(Matrix::Zero(2, spec.cond_dim));
  const Matrix chunks = Matrix::Zero(2 * spec.horizon, spec.action_dim);
  EXPECT_THROW(p.training_loss(cond, Matrix::Zero(3, spec.action_dim), rng), std::invalid_argument);
  EXPECT_THROW(p.training_loss(cond, chunks, {0, spec.t_diff}, chunks), std::out_of_range);
}

TEST(Sampling, OracleRecoversCleanChunk) {
  const auto spec = small_spec();
  std::mt19937_64 rng(5);
  const Matrix clean = Matrix::Random(2 * spec.horizon, spec.action_dim);
  DiffusionPolicy p(spec, std::make_shared<OracleDenoiser>(clean, NoiseSchedule::make(spec.t_diff, spec.schedule),
                                                           spec.horizon));
  const Matrix x = p.sample_chunk(Matrix::Zero(2, spec.cond_dim), rng);
  EXPECT_LE((x - clean).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Sampling, DeterministicWithSeedAndShaped) {
  const auto spec = small_spec();
  std::mt19937_64 init(6);
  const auto p = DiffusionPolicy::make(spec, init);
  const Matrix cond = Matrix::Random(3, spec.cond_dim);
  std::mt19937_64 a(10), b(10);
  const Matrix xa = p.sample_chunk(cond, a), xb = p.sample_chunk(cond, b);
  EXPECT_EQ(xa, xb);
  EXPECT_EQ(xa.rows(), 3 * spec.horizon);
  EXPECT_EQ(xa.cols(), spec.action_dim);
  EXPECT_LE(xa.cwiseAbs().maxCoeff(), kChunkClamp);
}

TEST(Training, OverfitsConstantAction) {
  const auto spec = small_spec();
  std::mt19937_64 rng(7);
  const auto p = DiffusionPolicy::make(spec, rng);
  const int n = 16;
  Matrix target(n * spec.horizon, spec.action_dim);
  target.rowwise() = (Eigen::RowVectorXd(3) << 0.5, -0.3, 0.8).finished();
  const Var cond = nn::constant(Matrix::Zero(n, spec.cond_dim));
  nn::Adam opt(p.parameters().vars(), {.lr = 2e-3});
  for (int k = 0; k < 1500; ++k) {
    opt.zero_grad();
    p.training_loss(cond, target, rng).backward();
    opt.step();
  }
  std::mt19937_64 srng(1);
  const Matrix x = p.sample_chunk(Matrix::Zero(4, spec.cond_dim), srng);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  EXPECT_LE((mean - target.row(0)).cwiseAbs().maxCoeff(), 0.05) << mean;
}

TEST(Spec, ValidationAndJson) {
  auto s = small_spec();
  nlohmann::json j = s;
  PolicySpec t = j.get<PolicySpec>();
  EXPECT_EQ(nlohmann::json(t), j);
  s.time_dim = 7;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.t_diff = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}
