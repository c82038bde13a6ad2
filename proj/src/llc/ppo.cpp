#include "falcon/llc/ppo.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace falcon::llc {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Matrix scale_for(int state_dim) {
  if (state_dim == kLlcStateDim) return llc_input_scale();
  return Matrix::Ones(1, state_dim);
}

Matrix gather_rows(const Matrix& m, const std::vector<size_t>& idx, size_t begin, size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = m.row(idx[i]);
  return out;
}

Vector gather(const Vector& v, const std::vector<size_t>& idx, size_t begin, size_t end) {
  Vector out(static_cast<Eigen::Index>(end - begin));
  for (size_t i = begin; i < end; ++i) out(static_cast<Eigen::Index>(i - begin)) = v(idx[i]);
  return out;
}

Var column(const Vector& v) { return nn::constant(Matrix(v)); }

}  // namespace

Matrix llc_input_scale() {
  // Inverse of typical magnitudes for q, q_dot, g, omega and the command.
  const std::array<double, kLlcStateDim> typical = {0.08, 0.3, 0.4, 0.3, 0.5, 1.5, 0.3, 0.3, 1.0,
                                                    1.0,  1.5, 0.8, 0.4, 0.3, 0.8, 0.3, 0.08};
  Matrix s(1, kLlcStateDim);
  for (int i = 0; i < kLlcStateDim; ++i) s(0, i) = 1.0 / typical[i];
  return s;
}

std::array<double, kActuationDim> llc_action_scale() { return kActuationScale; }

Matrix stack_states(const std::vector<LlcState>& states) {
  Matrix m(static_cast<Eigen::Index>(states.size()), kLlcStateDim);
  for (size_t i = 0; i < states.size(); ++i) {
    const auto f = states[i].flat();
    for (int j = 0; j < kLlcStateDim; ++j) m(static_cast<Eigen::Index>(i), j) = f[j];
  }
  return m;
}

// --- networks -----------------------------------------------------------------

GaussianPolicy::GaussianPolicy(int hidden, std::mt19937_64& rng, double init_log_std,
                               int state_dim, int action_dim)
    : hidden_(hidden),
      state_dim_(state_dim),
      action_dim_(action_dim),
      l1_(state_dim, hidden, rng),
      l2_(hidden, hidden, rng),
      out_(hidden, action_dim, rng),
      log_std_(nn::make_param(Matrix::Constant(1, action_dim, init_log_std))),
      scale_(scale_for(state_dim)) {
  // Small output layer so the initial policy is close to zero actuation.
  out_.weight().mutable_value() *= 0.1;
}

Var GaussianPolicy::features(const Var& states) const {
  Var x = nn::mul(states, nn::constant(scale_));
  x = nn::tanh(l1_.forward(x));
  return nn::tanh(l2_.forward(x));
}

Var GaussianPolicy::mean(const Var& states) const { return out_.forward(features(states)); }

Var GaussianPolicy::log_prob(const Var& states, const Matrix& actions) const {
  Var mu = mean(states);
  Var diff = nn::sub(nn::constant(actions), mu);
  Var z = nn::mul(diff, nn::exp(nn::neg(log_std_)));
  Var quad = nn::scale(nn::row_sum(nn::square(z)), -0.5);
  Var norm = nn::add_scalar(nn::sum(log_std_), 0.5 * action_dim_ * kLog2Pi);
  return nn::sub(quad, norm);
}

Var GaussianPolicy::entropy() const {
  return nn::add_scalar(nn::sum(log_std_), 0.5 * action_dim_ * (1.0 + kLog2Pi));
}

Matrix GaussianPolicy::mean_action(const Matrix& states) const {
  nn::NoGradGuard guard;
  return mean(nn::constant(states)).value();
}

Matrix GaussianPolicy::sample(const Matrix& states, std::mt19937_64& rng) const {
  Matrix mu = mean_action(states);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    for (Eigen::Index j = 0; j < mu.cols(); ++j) {
      mu(i, j) += std::exp(log_std_.value()(0, j)) * n(rng);
    }
  }
  return mu;
}

nn::ParameterSet GaussianPolicy::parameters() const {
  nn::ParameterSet p;
  l1_.collect(p, "l1.");
  l2_.collect(p, "l2.");
  out_.collect(p, "out.");
  p.add("log_std", log_std_);
  return p;
}

ValueFunction::ValueFunction(int hidden, std::mt19937_64& rng, int state_dim)
    : state_dim_(state_dim),
      l1_(state_dim, hidden, rng),
      l2_(hidden, hidden, rng),
      out_(hidden, 1, rng),
      scale_(scale_for(state_dim)) {}

Var ValueFunction::forward(const Var& states) const {
  Var x = nn::mul(states, nn::constant(scale_));
  x = nn::tanh(l1_.forward(x));
  x = nn::tanh(l2_.forward(x));
  return out_.forward(x);
}

nn::ParameterSet ValueFunction::parameters() const {
  nn::ParameterSet p;
  l1_.collect(p, "l1.");
  l2_.collect(p, "l2.");
  out_.collect(p, "out.");
  return p;
}

// --- PPO core -----------------------------------------------------------------

void RolloutBatch::validate() const {
  const auto n = static_cast<Eigen::Index>(size());
  if (horizon <= 0 || num_envs <= 0) throw std::invalid_argument("rollout batch is empty");
  if (states.rows() != n || actions.rows() != n || log_probs.size() != n || rewards.size() != n ||
      values.size() != n || static_cast<Eigen::Index>(dones.size()) != n ||
      bootstrap_values.size() != num_envs) {
    throw std::invalid_argument("rollout batch has inconsistent sizes");
  }
  if (!states.allFinite() || !actions.allFinite() || !log_probs.allFinite() ||
      !rewards.allFinite() || !values.allFinite() || !bootstrap_values.allFinite()) {
    throw std::invalid_argument("rollout batch contains non-finite values");
  }
}

void compute_gae(const RolloutBatch& b, double gamma, double lambda, Vector& advantages,
                 Vector& returns) {
  const auto n = static_cast<Eigen::Index>(b.size());
  advantages.resize(n);
  returns.resize(n);
  for (int e = 0; e < b.num_envs; ++e) {
    double gae = 0.0;
    for (int t = b.horizon - 1; t >= 0; --t) {
      const Eigen::Index i = static_cast<Eigen::Index>(t) * b.num_envs + e;
      const double next_value =
          t == b.horizon - 1 ? b.bootstrap_values(e) : b.values(i + b.num_envs);
      const double nonterminal = b.dones[static_cast<size_t>(i)] ? 0.0 : 1.0;
      const double delta = b.rewards(i) + gamma * next_value * nonterminal - b.values(i);
      gae = delta + gamma * lambda * nonterminal * gae;
      advantages(i) = gae;
      returns(i) = gae + b.values(i);
    }
  }
}

Var ppo_surrogate(const GaussianPolicy& policy, const Matrix& states, const Matrix& actions,
                  const Vector& old_log_probs, const Vector& advantages, double clip) {
  Var logp = policy.log_prob(nn::constant(states), actions);
  Var ratio = nn::exp(nn::sub(logp, column(old_log_probs)));
  Var adv = column(advantages);
  Var unclipped = nn::mul(ratio, adv);
  Var clipped = nn::mul(nn::clamp(ratio, 1.0 - clip, 1.0 + clip), adv);
  return nn::neg(nn::mean(nn::minimum(unclipped, clipped)));
}

PpoLearner::PpoLearner(GaussianPolicy& policy, ValueFunction& value, PpoHyper hyper)
    : policy_(policy),
      value_(value),
      hyper_(hyper),
      optimizer_(
          [&] {
            auto v = policy.parameters().vars();
            auto w = value.parameters().vars();
            v.insert(v.end(), w.begin(), w.end());
            return v;
          }(),
          nn::AdamConfig{.lr = hyper.lr, .max_grad_norm = hyper.max_grad_norm}) {}

PpoDiagnostics PpoLearner::update(const RolloutBatch& batch, std::mt19937_64& rng) {
  batch.validate();
  Vector adv, ret;
  compute_gae(batch, hyper_.gamma, hyper_.gae_lambda, adv, ret);
  const double mu = adv.mean();
  const double sd = std::sqrt((adv.array() - mu).square().mean());
  if (sd > 1e-8) adv = (adv.array() - mu) / sd;

  const size_t n = batch.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const size_t mb = std::min<size_t>(n, static_cast<size_t>(std::max(1, hyper_.minibatch)));

  PpoDiagnostics d;
  int count = 0;
  for (int epoch = 0; epoch < hyper_.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t begin = 0; begin + mb <= n; begin += mb) {
      const size_t end = begin + mb;
      const Matrix s = gather_rows(batch.states, idx, begin, end);
      const Matrix a = gather_rows(batch.actions, idx, begin, end);
      const Vector old_lp = gather(batch.log_probs, idx, begin, end);
      const Vector a_mb = gather(adv, idx, begin, end);
      const Vector r_mb = gather(ret, idx, begin, end);

      optimizer_.zero_grad();
      Var pl = ppo_surrogate(policy_, s, a, old_lp, a_mb, hyper_.clip);
      Var vl = nn::mse(value_.forward(nn::constant(s)), column(r_mb));
      Var ent = policy_.entropy();
      Var loss = nn::add(nn::add(pl, nn::scale(vl, hyper_.value_coef)),
                         nn::scale(ent, -hyper_.entropy_coef));
      if (!std::isfinite(loss.item())) throw std::runtime_error("PPO loss is not finite");
      loss.backward();
      optimizer_.step();

      {
        nn::NoGradGuard guard;
        const Matrix lp = policy_.log_prob(nn::constant(s), a).value();
        const Vector log_ratio = lp.col(0) - old_lp;
        d.approx_kl += ((log_ratio.array().exp() - 1.0) - log_ratio.array()).mean();
        d.clip_fraction +=
            ((log_ratio.array().exp() - 1.0).abs() > hyper_.clip).cast<double>().mean();
      }
      d.policy_loss += pl.item();
      d.value_loss += vl.item();
      d.entropy += ent.item();
      d.grad_norm += optimizer_.last_grad_norm();
      ++count;
    }
  }
  if (count > 0) {
    d.policy_loss /= count;
    d.value_loss /= count;
    d.entropy /= count;
    d.approx_kl /= count;
    d.clip_fraction /= count;
    d.grad_norm /= count;
  }
  return d;
}

// --- environment --------------------------------------------------------------

LlcEnv::LlcEnv(LlcEnvConfig config) : config_(std::move(config)) {}

void LlcEnv::reset(std::mt19937_64& rng) {
  body_ = BodyState{};
  params_ = config_.randomize ? config_.randomization.sample(rng, config_.body_damping)
                              : DynamicsParams{.body_damping = config_.body_damping};
  cmd_ = config_.commands.sample(rng);
  prev_ = Actuation{};
  t_ = 0;
}

LlcStepResult LlcEnv::step(const Actuation& u_in, std::mt19937_64& rng) {
  const Actuation u = config_.actuation.clamp(u_in);
  const DisturbanceDraw dist = sample_disturbance(params_, rng);
  const BodyState next = integrate_control_period(body_, prev_, u, params_, dist, config_.dt,
                                                  config_.substeps, config_.limits);
  LlcStepResult r;
  r.reward = compute_reward(body_, cmd_, u, prev_, next, config_.weights).total;
  r.velocity_error = std::sqrt((next.vx - cmd_.vx) * (next.vx - cmd_.vx) +
                               (next.vy - cmd_.vy) * (next.vy - cmd_.vy) +
                               (next.wz - cmd_.wz) * (next.wz - cmd_.wz));
  r.orientation_penalty = orientation_penalty(desired_gravity(next.pitch, 0.0), cmd_.pitch, 0.0);
  body_ = next;
  prev_ = u;
  ++t_;
  if (config_.command_hold_steps > 0 && t_ % config_.command_hold_steps == 0) {
    cmd_ = config_.commands.sample(rng);
  }
  r.done = t_ >= config_.episode_steps;
  return r;
}

Actuation policy_output_to_actuation(const double* raw, const ActuationLimits& limits) {
  const auto s = llc_action_scale();
  Actuation a;
  for (int i = 0; i < kActuationDim; ++i) a.u[i] = raw[i] * s[i];
  return limits.clamp(a);
}

// --- training -----------------------------------------------------------------

PpoTrainResult train_ppo(const PpoTrainConfig& cfg,
                         const std::function<void(const PpoTrainRecord&)>& on_iteration) {
  if (cfg.num_envs <= 0 || cfg.horizon <= 0) throw std::invalid_argument("invalid PPO sizes");
  std::mt19937_64 rng(cfg.seed);
  PpoTrainResult result;
  result.policy = GaussianPolicy(cfg.hidden, rng);
  result.value = ValueFunction(cfg.hidden, rng);
  PpoLearner learner(result.policy, result.value, cfg.hyper);

  std::vector<LlcEnv> envs(static_cast<size_t>(cfg.num_envs), LlcEnv(cfg.env));
  for (auto& e : envs) e.reset(rng);

  const auto start = std::chrono::steady_clock::now();
  const int E = cfg.num_envs;
  const auto N = static_cast<Eigen::Index>(cfg.horizon) * E;
  long env_steps = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed >= cfg.time_budget_s) break;
    learner.set_lr(cfg.hyper.lr * std::max(0.1, 1.0 - static_cast<double>(it) / cfg.iterations));

    RolloutBatch b;
    b.horizon = cfg.horizon;
    b.num_envs = E;
    b.states.resize(N, kLlcStateDim);
    b.actions.resize(N, kActuationDim);
    b.log_probs.resize(N);
    b.rewards.resize(N);
    b.values.resize(N);
    b.dones.assign(static_cast<size_t>(N), 0);
    b.bootstrap_values.resize(E);

    double sum_err = 0.0, sum_ori = 0.0;
    for (int t = 0; t < cfg.horizon; ++t) {
      std::vector<LlcState> obs;
      obs.reserve(envs.size());
      for (const auto& e : envs) obs.push_back(e.observation());
      const Matrix s = stack_states(obs);
      const Matrix a = result.policy.sample(s, rng);
      Matrix lp, v;
      {
        nn::NoGradGuard guard;
        lp = result.policy.log_prob(nn::constant(s), a).value();
        v = result.value.forward(nn::constant(s)).value();
      }
      for (int e = 0; e < E; ++e) {
        const Eigen::Index i = static_cast<Eigen::Index>(t) * E + e;
        b.states.row(i) = s.row(e);
        b.actions.row(i) = a.row(e);
        b.log_probs(i) = lp(e, 0);
        b.values(i) = v(e, 0);
        const Actuation u = policy_output_to_actuation(a.row(e).data(), cfg.env.actuation);
        auto& env = envs[static_cast<size_t>(e)];
        const LlcStepResult r = env.step(u, rng);
        double reward = r.reward;
        if (r.done) {
          // Time-limit truncation: bootstrap from the final state.
          nn::NoGradGuard guard;
          const Matrix last = stack_states({env.observation()});
          reward += cfg.hyper.gamma * result.value.forward(nn::constant(last)).value()(0, 0);
          b.dones[static_cast<size_t>(i)] = 1;
          env.reset(rng);
        }
        b.rewards(i) = reward;
        sum_err += r.velocity_error;
        sum_ori += r.orientation_penalty;
      }
    }
    {
      std::vector<LlcState> obs;
      for (const auto& e : envs) obs.push_back(e.observation());
      nn::NoGradGuard guard;
      const Matrix v = result.value.forward(nn::constant(stack_states(obs))).value();
      for (int e = 0; e < E; ++e) b.bootstrap_values(e) = v(e, 0);
    }
    env_steps += N;

    PpoTrainRecord rec;
    rec.iteration = it;
    rec.env_steps = env_steps;
    rec.mean_reward = b.rewards.mean();
    rec.mean_velocity_error = sum_err / static_cast<double>(N);
    rec.mean_orientation_penalty = sum_ori / static_cast<double>(N);
    rec.diag = learner.update(b, rng);
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.curve.push_back(rec);
    if (on_iteration) on_iteration(rec);
    if (it % 20 == 0) {
      spdlog::debug("ppo it={} steps={} reward={:.4f} verr={:.4f} kl={:.4f}", it, env_steps,
                    rec.mean_reward, rec.mean_velocity_error, rec.diag.approx_kl);
    }
  }
  return result;
}

void write_training_curve(const std::filesystem::path& csv,
                          const std::vector<PpoTrainRecord>& curve) {
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << "iteration,env_steps,wall_s,mean_reward,mean_velocity_error,mean_orientation_penalty,"
         "policy_loss,value_loss,entropy,approx_kl,clip_fraction\n";
  for (const auto& r : curve) {
    out << r.iteration << ',' << r.env_steps << ',' << r.wall_s << ',' << r.mean_reward << ','
        << r.mean_velocity_error << ',' << r.mean_orientation_penalty << ',' << r.diag.policy_loss
        << ',' << r.diag.value_loss << ',' << r.diag.entropy << ',' << r.diag.approx_kl << ','
        << r.diag.clip_fraction << '\n';
  }
}

TrackingEvaluation evaluate_tracking(const Controller& controller, const LlcEnvConfig& env_cfg,
                                     int episodes, uint64_t seed) {
  std::mt19937_64 rng(seed);
  LlcEnv env(env_cfg);
  TrackingEvaluation ev;
  ev.episodes = episodes;
  for (int ep = 0; ep < episodes; ++ep) {
    env.reset(rng);
    double err = 0.0, ori = 0.0, rew = 0.0;
    int steps = 0;
    for (;;) {
      const LlcStepResult r = env.step(controller.actuate(env.observation()), rng);
      err += r.velocity_error;
      ori += r.orientation_penalty;
      rew += r.reward;
      ++steps;
      if (r.done) break;
    }
    ev.mean_velocity_error += err / steps;
    ev.mean_orientation_penalty += ori / steps;
    ev.mean_reward += rew / steps;
  }
  if (episodes > 0) {
    ev.mean_velocity_error /= episodes;
    ev.mean_orientation_penalty /= episodes;
    ev.mean_reward /= episodes;
  }
  return ev;
}

Actuation PpoController::actuate(const LlcState& state) const {
  const Matrix a = policy_.mean_action(stack_states({state}));
  return policy_output_to_actuation(a.data(), limits_);
}

void save_policy(const std::filesystem::path& path, const GaussianPolicy& policy) {
  nlohmann::json meta = {{"hidden", policy.hidden()},
                         {"state_dim", policy.state_dim()},
                         {"action_dim", policy.action_dim()}};
  nn::save_checkpoint(path, "llc_ppo_policy", meta, policy.parameters());
}

GaussianPolicy load_policy(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.kind != "llc_ppo_policy") throw std::runtime_error("not an LLC policy checkpoint");
  std::mt19937_64 rng(0);
  GaussianPolicy p(ck.meta.at("hidden").get<int>(), rng, 0.0, ck.meta.at("state_dim").get<int>(),
                   ck.meta.at("action_dim").get<int>());
  nn::ParameterSet params = p.parameters();
  nn::assign(params, ck);
  return p;
}

}  // namespace falcon::llc
