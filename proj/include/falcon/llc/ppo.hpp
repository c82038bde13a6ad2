#pragma once

// PPO training of the learned tracking backend on the reduced base model.

#include "falcon/llc/llc.hpp"
#include "falcon/nn/checkpoint.hpp"
#include "falcon/nn/optim.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace falcon::llc {

using nn::Matrix;
using nn::Var;
using nn::Vector;

// Fixed per-feature scales applied to the flat LLC state before the networks.
Matrix llc_input_scale();
// Network outputs are multiplied by this before clamping to actuation limits.
std::array<double, kActuationDim> llc_action_scale();

Matrix stack_states(const std::vector<LlcState>& states);

class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int hidden, std::mt19937_64& rng, double init_log_std = -1.0, int state_dim = kLlcStateDim,
                 int action_dim = kActuationDim);

  // states: N x state_dim (raw, unscaled). Returns N x action_dim means.
  Var mean(const Var& states) const;
  // Diagonal Gaussian log-density, N x 1.
  Var log_prob(const Var& states, const Matrix& actions) const;
  // Per-sample entropy (state independent), 1 x 1.
  Var entropy() const;

  Matrix sample(const Matrix& states, std::mt19937_64& rng) const;
  Matrix mean_action(const Matrix& states) const;

  nn::ParameterSet parameters() const;
  int hidden() const { return hidden_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  Var& log_std() { return log_std_; }

 private:
  Var features(const Var& states) const;
  int hidden_ = 0;
  int state_dim_ = 0;
  int action_dim_ = 0;
  nn::Linear l1_, l2_, out_;
  Var log_std_;
  Matrix scale_;
};

class ValueFunction {
 public:
  ValueFunction() = default;
  ValueFunction(int hidden, std::mt19937_64& rng, int state_dim = kLlcStateDim);

  Var forward(const Var& states) const;  // N x 1
  nn::ParameterSet parameters() const;

 private:
  int state_dim_ = 0;
  nn::Linear l1_, l2_, out_;
  Matrix scale_;
};

// Time-major rollout of `num_envs` parallel environments for `horizon` steps.
// Row t*num_envs + e holds environment e at step t.
struct RolloutBatch {
  int horizon = 0;
  int num_envs = 0;
  Matrix states;
  Matrix actions;
  Vector log_probs;
  Vector rewards;
  Vector values;
  std::vector<uint8_t> dones;  // episode ended after this step
  Vector bootstrap_values;     // V(s_T) per environment

  size_t size() const { return static_cast<size_t>(horizon) * num_envs; }
  void validate() const;
};

struct PpoHyper {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  int epochs = 6;
  int minibatch = 512;
  double lr = 3e-4;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 1.0;
};

// Generalized advantage estimation; outputs have batch.size() entries.
void compute_gae(const RolloutBatch& batch, double gamma, double lambda, Vector& advantages,
                 Vector& returns);

// Clipped surrogate, negated so that it is minimized. advantages are used as given.
Var ppo_surrogate(const GaussianPolicy& policy, const Matrix& states, const Matrix& actions,
                  const Vector& old_log_probs, const Vector& advantages, double clip);

struct PpoDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

// Owns the optimizer state across updates.
class PpoLearner {
 public:
  PpoLearner(GaussianPolicy& policy, ValueFunction& value, PpoHyper hyper);
  PpoDiagnostics update(const RolloutBatch& batch, std::mt19937_64& rng);
  void set_lr(double lr) { optimizer_.set_lr(lr); }

 private:
  GaussianPolicy& policy_;
  ValueFunction& value_;
  PpoHyper hyper_;
  nn::Adam optimizer_;
};

struct LlcEnvConfig {
  CommandRanges commands;
  RandomizationRanges randomization;
  bool randomize = true;
  BodyLimits limits;
  ActuationLimits actuation;
  RewardWeights weights;
  double dt = 0.02;
  int substeps = 4;
  int episode_steps = 200;
  int command_hold_steps = 100;
  double body_damping = 4.0;
};

struct LlcStepResult {
  double reward = 0.0;
  bool done = false;
  double velocity_error = 0.0;      // |v - v_cmd| over (vx, vy, wz)
  double orientation_penalty = 0.0;
};

class LlcEnv {
 public:
  explicit LlcEnv(LlcEnvConfig config = {});
  void reset(std::mt19937_64& rng);
  LlcStepResult step(const Actuation& u, std::mt19937_64& rng);

  LlcState observation() const { return make_llc_state(body_, cmd_); }
  const BodyState& body() const { return body_; }
  const BaseCommand& command() const { return cmd_; }
  const DynamicsParams& params() const { return params_; }
  const LlcEnvConfig& config() const { return config_; }
  void set_command(const BaseCommand& c) { cmd_ = config_.commands.clamp(c); }

 private:
  LlcEnvConfig config_;
  BodyState body_;
  BaseCommand cmd_;
  DynamicsParams params_;
  Actuation prev_;
  int t_ = 0;
};

Actuation policy_output_to_actuation(const double* raw, const ActuationLimits& limits);

// Training env: the orientation weight is raised to 5 so the pitch channel is
// learned within the budget. Evaluation still reports the raw penalty.
inline LlcEnvConfig ppo_training_env() {
  LlcEnvConfig env;
  env.weights.orientation = 5.0;
  return env;
}

struct PpoTrainConfig {
  LlcEnvConfig env = ppo_training_env();
  PpoHyper hyper;
  int hidden = 64;
  int num_envs = 16;
  int horizon = 128;
  int iterations = 600;
  double time_budget_s = 600.0;
  uint64_t seed = 0;
};

struct PpoTrainRecord {
  int iteration = 0;
  long env_steps = 0;
  double wall_s = 0.0;
  double mean_reward = 0.0;
  double mean_velocity_error = 0.0;
  double mean_orientation_penalty = 0.0;
  PpoDiagnostics diag;
};

struct PpoTrainResult {
  GaussianPolicy policy;
  ValueFunction value;
  std::vector<PpoTrainRecord> curve;
};

PpoTrainResult train_ppo(const PpoTrainConfig& cfg,
                         const std::function<void(const PpoTrainRecord&)>& on_iteration = {});

void write_training_curve(const std::filesystem::path& csv, const std::vector<PpoTrainRecord>& curve);

struct TrackingEvaluation {
  int episodes = 0;
  double mean_velocity_error = 0.0;
  double mean_orientation_penalty = 0.0;
  double mean_reward = 0.0;
};

TrackingEvaluation evaluate_tracking(const Controller& controller, const LlcEnvConfig& env_cfg,
                                     int episodes, uint64_t seed);

// Deterministic (mean-action) controller backed by a trained policy.
class PpoController final : public Controller {
 public:
  PpoController(GaussianPolicy policy, ActuationLimits limits = {})
      : policy_(std::move(policy)), limits_(limits) {}
  Actuation actuate(const LlcState& state) const override;
  std::string name() const override { return "ppo"; }
  const GaussianPolicy& policy() const { return policy_; }

 private:
  GaussianPolicy policy_;
  ActuationLimits limits_;
};

void save_policy(const std::filesystem::path& path, const GaussianPolicy& policy);
GaussianPolicy load_policy(const std::filesystem::path& path);

}  // namespace falcon::llc
