#pragma once

// Conditional DDPM over fixed-horizon action chunks.

#include "falcon/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace falcon::diffusion {

using nn::Matrix;
using nn::Var;

enum class Subsystem { kArm, kBase };
std::string to_string(Subsystem s);
Subsystem parse_subsystem(const std::string& s);

inline constexpr int kArmActionDim = 3;   // ee x, ee y, gripper
inline constexpr int kBaseActionDim = 5;  // vx, vy, wz, pitch, height
inline constexpr double kChunkClamp = 1.5;

struct PolicySpec {
  Subsystem subsystem = Subsystem::kArm;
  int action_dim = kArmActionDim;
  int cond_dim = 0;
  int horizon = 8;
  int t_obs = 2;
  int t_diff = 16;
  std::string schedule = "cosine";
  int width = 96;
  int blocks = 2;
  int time_dim = 32;

  void validate() const;
};

void to_json(nlohmann::json& j, const PolicySpec& s);
void from_json(const nlohmann::json& j, PolicySpec& s);

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  // "cosine" (s = 0.008, betas clipped at 0.999) or "linear" (1e-4 .. 0.02).
  static NoiseSchedule make(int t_diff, const std::string& id);
  int steps() const { return static_cast<int>(betas.size()); }
};

// Per-dimension affine map of [min, max] onto [-1, 1]; constant dimensions map to 0.
class Normalizer {
 public:
  Normalizer() = default;
  static Normalizer fit(const Matrix& rows);
  Matrix apply(const Matrix& x) const;
  Matrix invert(const Matrix& x) const;
  int dim() const { return static_cast<int>(lo_.size()); }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);

 private:
  std::vector<double> lo_;
  std::vector<double> hi_;
};

Matrix timestep_embedding(const std::vector<int>& t, int dim);

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // noisy: (N*H) x A, t: N timesteps, cond: N x C. Returns predicted noise (N*H) x A.
  virtual Var predict(const Var& noisy, const std::vector<int>& t, const Var& cond) const = 0;
  virtual nn::ParameterSet parameters() const { return {}; }
};

// Conditioning token followed by H action tokens, mixed by learned token-mixing
// matrices and per-token MLPs. The conditioning embedding is also added to every
// action token.
class TokenMixerDenoiser final : public Denoiser {
 public:
  TokenMixerDenoiser(const PolicySpec& spec, std::mt19937_64& rng);
  Var predict(const Var& noisy, const std::vector<int>& t, const Var& cond) const override;
  nn::ParameterSet parameters() const override;

 private:
  struct Block {
    nn::LayerNorm norm_mix;
    Var mix;  // (H+1) x (H+1)
    nn::LayerNorm norm_mlp;
    nn::Mlp mlp;
  };
  PolicySpec spec_;
  nn::Linear cond_in_;
  nn::Mlp time_mlp_;
  nn::Linear action_in_;
  Var position_;  // H x W
  std::vector<Block> blocks_;
  nn::LayerNorm norm_out_;
  nn::Linear action_out_;
};

class DiffusionPolicy {
 public:
  DiffusionPolicy() = default;
  DiffusionPolicy(PolicySpec spec, std::shared_ptr<Denoiser> denoiser);
  static DiffusionPolicy make(const PolicySpec& spec, std::mt19937_64& rng);

  // chunks: (N*H) x A normalized targets; cond: N x C.
  Var training_loss(const Var& cond, const Matrix& chunks, std::mt19937_64& rng) const;
  // Same objective with explicit timesteps and noise.
  Var training_loss(const Var& cond, const Matrix& chunks, const std::vector<int>& t,
                    const Matrix& noise) const;
  // Full reverse process from Gaussian noise; returns (N*H) x A, clamped.
  Matrix sample_chunk(const Matrix& cond, std::mt19937_64& rng) const;

  const PolicySpec& spec() const { return spec_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const Denoiser& denoiser() const { return *denoiser_; }
  nn::ParameterSet parameters() const { return denoiser_->parameters(); }

 private:
  PolicySpec spec_;
  NoiseSchedule schedule_;
  std::shared_ptr<Denoiser> denoiser_;
};

}  // namespace falcon::diffusion
