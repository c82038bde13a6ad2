#pragma once

// Multi-view image, text and proprio encoders, the fusion encoder producing h,
// and the language-defined phase/progress head producing rho, p and z.

#include "falcon/nn/layers.hpp"
#include "falcon/world/world.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace falcon::coordinator {

using nn::Matrix;
using nn::Var;
using Vector = Eigen::VectorXd;

inline constexpr int kViews = 3;  // wrist, body, head (row order everywhere)

struct CoordinatorConfig {
  int raster = 96;        // expected view size
  int pool = 3;           // average pooling factor applied before the conv stack
  int embed_dim = 64;     // D_f
  int latent_dim = 128;   // D
  int text_buckets = 1024;
  int proprio_hidden = 64;
  int fusion_hidden = 256;
  double alpha = 10.0;
  bool freeze_image = true;
  bool freeze_text = true;

  int pooled() const { return raster / pool; }
  void validate() const;
};

void to_json(nlohmann::json& j, const CoordinatorConfig& c);
void from_json(const nlohmann::json& j, CoordinatorConfig& c);

// Average-pooled HWC pixels scaled to [-0.5, 0.5]; throws on a size mismatch.
Matrix preprocess(const world::Raster& r, const CoordinatorConfig& cfg);

// k4 s2 p1 convolutions 3 -> 16 -> 32 -> 32 with relu, then a linear map to D_f.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(int input_size, int embed_dim, std::mt19937_64& rng);
  Var forward(const Var& images) const;  // N x (s*s*3) -> N x D_f
  void collect(nn::ParameterSet& p, const std::string& prefix) const;

 private:
  struct Conv {
    nn::ConvGeometry geom;
    nn::Linear map;
  };
  std::vector<Conv> convs_;
  nn::Linear head_;
};

// Lowercased word unigrams and adjacent bigrams hashed into buckets.
std::vector<int> tokenize(const std::string& text, int buckets);

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(int buckets, int embed_dim, std::mt19937_64& rng);
  Var forward(const std::vector<std::string>& texts) const;  // N x D_f
  void collect(nn::ParameterSet& p, const std::string& prefix) const;
  int buckets() const { return buckets_; }

 private:
  int buckets_ = 0;
  Var table_;
  nn::Linear out_;
};

// Pre-LN single-head attention block over 5 tokens per sample:
// [wrist, body, head, proprio, instruction]; h is the token mean.
class FusionEncoder {
 public:
  FusionEncoder() = default;
  FusionEncoder(const CoordinatorConfig& cfg, std::mt19937_64& rng);
  // views: (N*3) x D_f unit rows; proprio: N x 14; instruction: N x D_f.
  Var forward(const Var& views, const Var& proprio, const Var& instruction) const;
  void collect(nn::ParameterSet& p, const std::string& prefix) const;

 private:
  nn::Linear view_in_;
  Var view_embed_;  // 3 x D
  nn::Mlp proprio_;
  nn::Linear instr_in_;
  nn::LayerNorm norm_attn_;
  nn::Linear q_, k_, v_, o_;
  nn::LayerNorm norm_mlp_;
  nn::Mlp mlp_;
  nn::LayerNorm norm_out_;
  int d_ = 0;
};

struct PhasePrompt {
  std::string name;
  std::string ongoing;
  std::string done;
};

struct PhasePromptSet {
  std::string task;
  std::vector<PhasePrompt> phases;
  Matrix e_ongoing;  // K x D_f unit rows
  Matrix e_done;

  int size() const { return static_cast<int>(phases.size()); }
  bool encoded() const { return e_ongoing.rows() == size() && size() > 0; }

  static PhasePromptSet from_json(const nlohmann::json& j);
  static PhasePromptSet load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct PhaseScores {
  Vector logits;
  Vector rho;
};

PhaseScores phase_scores(const Vector& f, const PhasePromptSet& prompts);
Vector phase_completion(const Vector& f, const PhasePromptSet& prompts, double alpha);

struct Progress {
  int k_star = 0;
  double p = 0.0;
};

// argmax with ties to the lowest index; p = (k* + c_k*) / K.
Progress progress(const Vector& rho, const Vector& c);

struct ConditioningLatent {
  Vector h;
  Vector rho;
  Vector c;
  int k_star = 0;
  double p = 0.0;

  // [h, rho, p]
  Vector z() const;
};

// Output of the image side for one frame.
struct FrameFeatures {
  Matrix views;  // 3 x D_f unit rows
  Vector f;      // unit-normalized mean of the view rows
};

class Coordinator {
 public:
  Coordinator() = default;
  Coordinator(CoordinatorConfig cfg, std::mt19937_64& rng);

  const CoordinatorConfig& config() const { return cfg_; }
  int z_dim(int k) const { return cfg_.latent_dim + k + 1; }

  // images: (N*3) x pixels in view order. Returns unit rows (N*3) x D_f.
  Var view_embeddings(const Var& images) const;
  // Unit-normalized mean over each sample's 3 view rows.
  static Var pooled_embedding(const Var& views);
  Var fuse(const Var& views, const Var& proprio, const Var& instruction) const;
  Var text_embeddings(const std::vector<std::string>& texts) const;  // unit rows

  FrameFeatures image_features(const world::ObservationBundle& obs) const;
  void encode_prompts(PhasePromptSet& prompts) const;
  Vector instruction_embedding(const std::string& instruction) const;

  // Phase head from frozen features only.
  ConditioningLatent phase_head(const Vector& f, const PhasePromptSet& prompts) const;
  ConditioningLatent encode_frame(const world::ObservationBundle& obs,
                                  const PhasePromptSet& prompts,
                                  const std::string& instruction) const;

  ImageEncoder& image() { return image_; }
  TextEncoder& text() { return text_; }
  FusionEncoder& fusion() { return fusion_; }

  // Parameter groups; prefixes "image.", "text.", "fusion.".
  nn::ParameterSet image_parameters() const;
  nn::ParameterSet text_parameters() const;
  nn::ParameterSet fusion_parameters() const;
  nn::ParameterSet parameters() const;
  // Fusion plus every encoder whose freeze flag is off.
  nn::ParameterSet trainable_parameters() const;

 private:
  CoordinatorConfig cfg_;
  ImageEncoder image_;
  TextEncoder text_;
  FusionEncoder fusion_;
};

void save_coordinator(const Coordinator& c, const std::filesystem::path& path,
                      const nlohmann::json& extra = {});
Coordinator load_coordinator(const std::filesystem::path& path);

}  // namespace falcon::coordinator
