#include "falcon/llc/ppo.hpp"

#include "../support/gradcheck.hpp"

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <cmath>

using namespace falcon;
using namespace falcon::llc;

TEST(DesiredGravity, IdentityPointsDown) {
  EXPECT_EQ(desired_gravity(0.0, 0.0), Vec3(0, 0, -1));
}

TEST(DesiredGravity, PitchSymmetry) {
  const Vec3 a = desired_gravity(0.2, 0.0), b = desired_gravity(-0.2, 0.0);
  EXPECT_DOUBLE_EQ(a.x(), -b.x());
  EXPECT_DOUBLE_EQ(a.z(), b.z());
}

TEST(DesiredGravity, MatchesQuaternionOracle) {
  // Rotate world gravity into the body frame by hand: v' = q^* v q.
  const double roll = 0.2, half = roll / 2;
  const Eigen::Quaterniond q(std::cos(half), std::sin(half), 0, 0);
  const Eigen::Quaterniond v(0, 0, 0, -1);
  const Eigen::Quaterniond r = q.conjugate() * v * q;
  const Vec3 g = desired_gravity(0.0, roll);
  EXPECT_NEAR(g.x(), r.x(), 1e-9);
  EXPECT_NEAR(g.y(), r.y(), 1e-9);
  EXPECT_NEAR(g.z(), r.z(), 1e-9);
}

TEST(OrientationPenalty, ZeroWhenMatched) {
  EXPECT_EQ(orientation_penalty(desired_gravity(0.1, -0.05), 0.1, -0.05), 0.0);
  EXPECT_EQ(orientation_penalty(Vec3(0, 0, -1), 0.0, 0.0), 0.0);
}

TEST(OrientationPenalty, BruteForce) {
  const Vec3 g(std::sin(0.3), 0.0, -std::cos(0.3));
  const Vec3 d(std::sin(0.1), 0.0, -std::cos(0.1));
  const double expect = (g.x() - d.x()) * (g.x() - d.x()) + (g.y() - d.y()) * (g.y() - d.y());
  EXPECT_NEAR(orientation_penalty(g, 0.1, 0.0), expect, 1e-12);
}

TEST(Dynamics, ZeroInputIsStationary) {
  BodyState s;
  const BodyState n = reduced_dynamics_step(s, {}, {}, {}, 0.02, {});
  EXPECT_EQ(n, s);
}

TEST(Dynamics, ConstantActuationNoDrag) {
  DynamicsParams p;
  p.drag = 0.0;
  Actuation u;
  u.u[0] = 0.7;
  BodyState s;
  for (int k = 0; k < 50; ++k) s = reduced_dynamics_step(s, u, p, {}, 0.01, {});
  EXPECT_NEAR(s.vx, 0.7 * 0.5, 1e-9);
  // Semi-implicit Euler position: dt^2 * a * n(n+1)/2.
  EXPECT_NEAR(s.x, 0.01 * 0.01 * 0.7 * 50 * 51 / 2, 1e-9);
}

TEST(Dynamics, MassScaleHalvesAcceleration) {
  DynamicsParams a, b;
  b.mass_scale = 2.0;
  Actuation u;
  u.u[1] = 1.0;
  const BodyState na = reduced_dynamics_step({}, u, a, {}, 0.02, {});
  const BodyState nb = reduced_dynamics_step({}, u, b, {}, 0.02, {});
  EXPECT_DOUBLE_EQ(nb.vy, na.vy / 2);
}

TEST(Dynamics, BodyLimitsClamp) {
  Actuation u;
  u.u[3] = 20.0;
  BodyState s;
  for (int k = 0; k < 200; ++k) s = reduced_dynamics_step(s, u, {}, {}, 0.02, {});
  EXPECT_DOUBLE_EQ(s.height, BodyLimits{}.height.hi);
}

TEST(Reward, PerfectTracking) {
  RewardWeights w;
  BodyState next;
  BaseCommand cmd;
  next.height = cmd.height;
  const auto r = compute_reward({}, cmd, {}, {}, next, w);
  EXPECT_DOUBLE_EQ(r.total, w.velocity + w.height);
  EXPECT_EQ(r.terms.at("orientation"), 0.0);
}

TEST(Reward, TermByTerm) {
  RewardWeights w;
  BodyState next;
  next.vx = 0.2;
  next.vy = -0.05;
  next.wz = 0.1;
  next.height = 0.27;
  next.pitch = 0.12;
  BaseCommand cmd{0.25, 0.0, 0.2, 0.05, 0.3};
  Actuation u, prev;
  u.u = {1.0, -0.5, 0.3, 2.0, -1.0};
  prev.u = {0.5, 0.0, 0.0, 0.0, 1.0};
  const auto r = compute_reward({}, cmd, u, prev, next, w);
  const double ev = 0.05 * 0.05 + 0.05 * 0.05 + 0.1 * 0.1;
  const double eh = 0.03 * 0.03;
  const double gx = std::sin(0.12) - std::sin(0.05);
  double rate = 0.0;
  for (int i = 0; i < kActuationDim; ++i) rate += std::pow((u.u[i] - prev.u[i]) / kActuationScale[i], 2);
  const double expect = w.velocity * std::exp(-ev / w.sigma_velocity) + w.height * std::exp(-eh / w.sigma_height) -
                        w.orientation * gx * gx - w.action_rate * rate;
  EXPECT_NEAR(r.total, expect, 1e-12);
}

TEST(Analytic, AtRestWithZeroCommandIsZero) {
  const AnalyticController c;
  const Actuation a = c.actuate(make_llc_state({}, {}));
  for (double v : a.u) EXPECT_EQ(v, 0.0);
}

TEST(Analytic, ProportionalToVelocityError) {
  const AnalyticController c;
  BaseCommand cmd;
  cmd.vx = 0.2;
  BodyState at, off;
  at.vx = 0.2;
  off.vx = 0.05;
  const double du = c.actuate(make_llc_state(off, cmd)).u[0] - c.actuate(make_llc_state(at, cmd)).u[0];
  EXPECT_NEAR(du, c.gains().velocity * 0.15, 1e-12);
}

TEST(Analytic, StepSettlesUnderTwoSeconds) {
  const AnalyticController c;
  BodyState body;
  BaseCommand cmd;
  cmd.vx = 0.3;
  Actuation prev;
  double settle = 0.0;
  for (int k = 0; k < 250; ++k) {
    const Actuation u = c.actuate(make_llc_state(body, cmd));
    body = integrate_control_period(body, prev, u, {}, {}, 0.02, 4, {});
    prev = u;
    if (std::abs(body.vx - 0.3) > 0.03) settle = (k + 1) * 0.02;
  }
  EXPECT_LT(settle, 2.0);
}

TEST(Ppo, SurrogateGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  GaussianPolicy policy(8, rng);
  nn::Matrix states = nn::Matrix::Random(12, kLlcStateDim) * 0.3;
  const nn::Matrix actions = policy.mean_action(states) + nn::Matrix::Random(12, kActuationDim) * 0.2;
  nn::Vector old_lp = policy.log_prob(nn::constant(states), actions).value().col(0);
  nn::Vector adv = nn::Vector::Random(12);
  for (int i = 0; i < 12; ++i) old_lp[i] += 0.03 * (i % 3 - 1);
  const auto g = falcon::testing::check_gradients(policy.parameters().vars(), [&] {
    return ppo_surrogate(policy, states, actions, old_lp, adv, 0.2);
  });
  EXPECT_LE(g.rel_error, 1e-4);
}

TEST(Ppo, ZeroAdvantagesGiveZeroPolicyGradient) {
  std::mt19937_64 rng(4);
  GaussianPolicy policy(8, rng);
  const nn::Matrix states = nn::Matrix::Random(6, kLlcStateDim);
  const nn::Matrix actions = nn::Matrix::Random(6, kActuationDim);
  const nn::Vector old_lp = nn::Vector::Zero(6);
  auto params = policy.parameters();
  params.zero_grad();
  ppo_surrogate(policy, states, actions, old_lp, nn::Vector::Zero(6), 0.2).backward();
  for (const auto& [name, v] : params.items()) {
    if (v.grad().size()) EXPECT_EQ(v.grad().cwiseAbs().maxCoeff(), 0.0) << name;
  }
}

TEST(Ppo, ZeroLearningRateLeavesParameters) {
  std::mt19937_64 rng(5);
  GaussianPolicy policy(8, rng);
  ValueFunction value(8, rng);
  PpoHyper h;
  h.lr = 0.0;
  h.epochs = 1;
  h.minibatch = 16;
  PpoLearner learner(policy, value, h);
  LlcEnv env;
  env.reset(rng);
  RolloutBatch b;
  b.horizon = 8;
  b.num_envs = 2;
  b.states = nn::Matrix::Random(16, kLlcStateDim);
  b.actions = nn::Matrix::Random(16, kActuationDim);
  b.log_probs = nn::Vector::Zero(16);
  b.rewards = nn::Vector::Random(16);
  b.values = nn::Vector::Zero(16);
  b.dones.assign(16, 0);
  b.bootstrap_values = nn::Vector::Zero(2);
  std::vector<nn::Matrix> before;
  for (const auto& v : policy.parameters().vars()) before.push_back(v.value());
  learner.update(b, rng);
  const auto after = policy.parameters().vars();
  for (size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(after[i].value() == before[i]);
}

TEST(Ppo, GaeMatchesHandComputation) {
  RolloutBatch b;
  b.horizon = 3;
  b.num_envs = 1;
  b.states = nn::Matrix::Zero(3, kLlcStateDim);
  b.actions = nn::Matrix::Zero(3, kActuationDim);
  b.log_probs = nn::Vector::Zero(3);
  b.rewards = nn::Vector{{1.0, 0.5, -0.2}};
  b.values = nn::Vector{{0.3, 0.1, 0.4}};
  b.dones = {0, 1, 0};
  b.bootstrap_values = nn::Vector{{0.7}};
  nn::Vector adv, ret;
  const double g = 0.9, l = 0.8;
  compute_gae(b, g, l, adv, ret);
  const double d2 = -0.2 + g * 0.7 - 0.4;
  const double d1 = 0.5 - 0.1;  // episode ends after step 1
  const double d0 = 1.0 + g * 0.1 - 0.3;
  EXPECT_NEAR(adv[2], d2, 1e-12);
  EXPECT_NEAR(adv[1], d1, 1e-12);
  EXPECT_NEAR(adv[0], d0 + g * l * d1, 1e-12);
  EXPECT_NEAR(ret[0], adv[0] + 0.3, 1e-12);
}

TEST(LlcEnv, RandomizedParamsStayInRanges) {
  LlcEnv env;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    env.reset(rng);
    EXPECT_TRUE(env.config().randomization.contains(env.params()));
  }
}

TEST(Policy, SaveLoadRoundTrip) {
  std::mt19937_64 rng(1);
  GaussianPolicy p(8, rng);
  const auto path = std::filesystem::temp_directory_path() / "falcon_policy_rt.falcon";
  save_policy(path, p);
  const GaussianPolicy q = load_policy(path);
  const nn::Matrix s = nn::Matrix::Random(4, kLlcStateDim);
  EXPECT_TRUE(p.mean_action(s) == q.mean_action(s));
  std::filesystem::remove(path);
}
