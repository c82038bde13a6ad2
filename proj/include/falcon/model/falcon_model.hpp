#pragma once

// Arm and base diffusion policies conditioned on their own views and proprio
// plus the shared coordinator latent z, with the coordination loss on top.

#include "falcon/coordinator/coordinator.hpp"
#include "falcon/coordloss/coord_loss.hpp"
#include "falcon/data/dataset.hpp"
#include "falcon/diffusion/diffusion.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace falcon::model {

using nn::Matrix;
using nn::Var;

enum class Variant { kFalcon, kNoCl, kNoPhaseCl };
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

// Proprio slices: base = pose, height, pitch and velocities; arm = joints, ee, gripper.
inline constexpr int kBaseProprioBegin = 0;
inline constexpr int kBaseProprioDim = 9;
inline constexpr int kArmProprioBegin = 9;
inline constexpr int kArmProprioDim = 5;

struct ModelConfig {
  coordinator::CoordinatorConfig coordinator;
  int t_obs = 2;
  int horizon = 8;
  int h_exec = 4;
  int t_diff = 16;
  std::string schedule = "cosine";
  int width = 96;
  int blocks = 2;
  int proprio_hidden = 64;
  int proprio_embed = 32;
  coordloss::CoordLossConfig coord;
  double delta = 0.1;
  Variant variant = Variant::kFalcon;

  // delta, forced to 0 for both ablations.
  double effective_delta() const { return variant == Variant::kFalcon ? delta : 0.0; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Frame-major inputs for N samples with T frames each: frame row = i*T + k.
struct Batch {
  int samples = 0;
  Matrix views;   // (N*T*3) x D_f unit rows, used when the image encoder is frozen
  Matrix pixels;  // (N*T*3) x pixels, used otherwise
  Matrix proprio;     // (N*T) x 14
  Matrix arm_chunks;  // (N*H) x 3   normalized
  Matrix base_chunks; // (N*H) x 5   normalized
};

struct Losses {
  Var arm;
  Var base;
  Var coord;  // empty when delta is 0
  Var total;
};

struct Latent {
  Var h;    // N x D
  Var rho;  // N x K
  Var c;    // N x K
  Var p;    // N x 1
  Var z;    // N x (D+K+1); rho and p zeroed for the no-phase variant
  Matrix k_star;  // N x 1
};

struct Plan {
  Matrix arm;   // H x 3, physical units
  Matrix base;  // H x 5
  coordinator::ConditioningLatent latent;  // latest frame
};

class FalconModel {
 public:
  FalconModel() = default;
  FalconModel(ModelConfig cfg, coordinator::Coordinator coord, coordinator::PhasePromptSet prompts,
              std::string instruction, data::ActionNormalizers norms, std::mt19937_64& rng);

  const ModelConfig& config() const { return cfg_; }
  const coordinator::Coordinator& coordinator() const { return coord_; }
  const coordinator::PhasePromptSet& prompts() const { return prompts_; }
  const std::string& instruction() const { return instruction_; }
  const data::ActionNormalizers& normalizers() const { return norms_; }
  const diffusion::DiffusionPolicy& arm_policy() const { return arm_; }
  const diffusion::DiffusionPolicy& base_policy() const { return base_; }
  int z_dim() const;
  int cond_dim() const;

  // views: (M*3) x D_f unit rows, proprio: M x 14 for M frames.
  Latent latent(const Var& views, const Matrix& proprio) const;
  Var arm_condition(const Var& views, const Matrix& proprio, const Var& z, int samples) const;
  Var base_condition(const Var& views, const Matrix& proprio, const Var& z, int samples) const;

  // lambda: derangement for the coordination negatives (sampled from rng if empty).
  Losses losses(const Batch& b, std::mt19937_64& rng, std::vector<int> lambda = {}) const;

  // Window of T frames (oldest first). Separate streams keep the two policies decoupled.
  Plan plan(const Matrix& views, const Matrix& proprio, std::mt19937_64& arm_rng,
            std::mt19937_64& base_rng) const;
  Matrix sample_arm(const Matrix& views, const Matrix& proprio, std::mt19937_64& rng) const;
  Matrix sample_base(const Matrix& views, const Matrix& proprio, std::mt19937_64& rng) const;

  // Recomputes cached prompt and instruction embeddings from the text encoder.
  void refresh_text_cache();

  // Gradient-carrying parameters (frozen encoders excluded).
  nn::ParameterSet trainable_parameters() const;
  // Everything that is saved, including frozen encoders.
  nn::ParameterSet parameters() const;

 private:
  Var text_rows(const std::vector<std::string>& texts, const Matrix& cached) const;
  Var frame_features(const Var& views, const Matrix& proprio, int view_a, int view_b,
                     const nn::Mlp& enc, int begin, int dim) const;

  ModelConfig cfg_;
  coordinator::Coordinator coord_;
  coordinator::PhasePromptSet prompts_;
  std::string instruction_;
  Matrix instruction_emb_;  // 1 x D_f
  data::ActionNormalizers norms_;
  nn::Mlp arm_proprio_;
  nn::Mlp base_proprio_;
  diffusion::DiffusionPolicy arm_;
  diffusion::DiffusionPolicy base_;
  coordloss::CoordinationLoss closs_;
};

void save_model(const FalconModel& m, const std::filesystem::path& path, const nlohmann::json& extra);
FalconModel load_model(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace falcon::model
