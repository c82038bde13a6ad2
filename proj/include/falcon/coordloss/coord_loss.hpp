#pragma once

// Coordination-aware contrastive objective between observation latents and
// joint (arm + base) action summaries, with cross-subsystem mismatched negatives.

#include "falcon/nn/layers.hpp"

#include <random>
#include <vector>

namespace falcon::coordloss {

using nn::Matrix;
using nn::Var;

// Uniformly random permutation with no fixed points (rejection sampling).
// Throws std::invalid_argument for B < 2.
std::vector<int> sample_derangement(int batch, std::mt19937_64& rng);
bool is_derangement(const std::vector<int>& lambda);

struct Summary {
  Var z_bar;     // B x Dz, temporal mean over the observation window
  Var arm_bar;   // B x A, horizon mean of the arm chunk
  Var base_bar;  // B x Q, horizon mean of the base chunk
  Var u;         // B x (A + Q), [arm_bar, base_bar]
};

// z_seq: (B*T) x Dz with rows of sample i contiguous; chunks: (B*H) x dim.
Summary summarize(const Var& z_seq, int t_obs, const Var& arm_chunks, const Var& base_chunks,
                  int horizon);

struct Negatives {
  Var arm_mismatch;   // [arm_bar[i], base_bar[lambda(i)]]
  Var base_mismatch;  // [arm_bar[lambda(i)], base_bar[i]]
};

Negatives build_negatives(const Var& arm_bar, const Var& base_bar, const std::vector<int>& lambda);

struct InfoNce {
  Var obs_to_act;  // anchors v_i, candidates {w_j} u {w_j^arm} u {w_j^quad}
  Var act_to_obs;  // anchors w_i, candidates {v_j}
  Var coord;       // mean of the two directions
};

// All embeddings must already be unit-normalized B x Dc matrices.
InfoNce info_nce(const Var& v, const Var& w, const Var& w_arm, const Var& w_quad, double tau);

Var total_loss(const Var& l_arm, const Var& l_quad, const Var& l_coord, double delta);
double total_loss(double l_arm, double l_quad, double l_coord, double delta);

// Two-layer nonlinear map followed by L2 normalization.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, std::mt19937_64& rng);
  Var forward(const Var& x) const;
  void collect(nn::ParameterSet& params, const std::string& prefix) const;
  Eigen::Index in_dim() const { return in_; }

 private:
  nn::Mlp mlp_;
  Eigen::Index in_ = 0;
};

struct CoordLossConfig {
  double tau = 0.1;
  int proj_dim = 64;
  int proj_hidden = 128;
};

// P_obs on z_bar, P_act on u and both mismatched joint actions.
class CoordinationLoss {
 public:
  CoordinationLoss() = default;
  CoordinationLoss(Eigen::Index z_dim, Eigen::Index action_dim, CoordLossConfig cfg,
                   std::mt19937_64& rng);

  InfoNce forward(const Var& z_seq, int t_obs, const Var& arm_chunks, const Var& base_chunks,
                  int horizon, const std::vector<int>& lambda) const;
  void collect(nn::ParameterSet& params, const std::string& prefix) const;
  const CoordLossConfig& config() const { return cfg_; }

 private:
  CoordLossConfig cfg_;
  ProjectionHead obs_;
  ProjectionHead act_;
};

}  // namespace falcon::coordloss
