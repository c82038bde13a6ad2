#include "falcon/coordloss/coord_loss.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace falcon::coordloss {

std::vector<int> sample_derangement(int batch, std::mt19937_64& rng) {
  if (batch < 2) throw std::invalid_argument("derangement needs a batch of at least 2");
  std::vector<int> p(static_cast<size_t>(batch));
  // Acceptance probability tends to 1/e, so the expected number of draws is < 3.
  for (;;) {
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    if (is_derangement(p)) return p;
  }
}

bool is_derangement(const std::vector<int>& lambda) {
  std::vector<bool> seen(lambda.size(), false);
  for (size_t i = 0; i < lambda.size(); ++i) {
    const int j = lambda[i];
    if (j < 0 || static_cast<size_t>(j) >= lambda.size() || seen[j] || static_cast<size_t>(j) == i) {
      return false;
    }
    seen[j] = true;
  }
  return !lambda.empty();
}

Summary summarize(const Var& z_seq, int t_obs, const Var& arm_chunks, const Var& base_chunks,
                  int horizon) {
  if (t_obs < 1 || horizon < 1) throw std::invalid_argument("summarize: window sizes must be >= 1");
  Summary s;
  s.z_bar = nn::group_mean_rows(z_seq, t_obs);
  s.arm_bar = nn::group_mean_rows(arm_chunks, horizon);
  s.base_bar = nn::group_mean_rows(base_chunks, horizon);
  if (s.z_bar.rows() != s.arm_bar.rows() || s.arm_bar.rows() != s.base_bar.rows()) {
    throw std::invalid_argument("summarize: batch sizes differ");
  }
  const Var parts[] = {s.arm_bar, s.base_bar};
  s.u = nn::concat_cols(parts);
  return s;
}

Negatives build_negatives(const Var& arm_bar, const Var& base_bar, const std::vector<int>& lambda) {
  if (!is_derangement(lambda) || static_cast<Eigen::Index>(lambda.size()) != arm_bar.rows()) {
    throw std::invalid_argument("build_negatives: lambda must be a derangement of the batch");
  }
  std::vector<Eigen::Index> idx(lambda.begin(), lambda.end());
  const Var base_perm = nn::select_rows(base_bar, idx);
  const Var arm_perm = nn::select_rows(arm_bar, idx);
  const Var a[] = {arm_bar, base_perm};
  const Var b[] = {arm_perm, base_bar};
  return {nn::concat_cols(a), nn::concat_cols(b)};
}

namespace {

// -(1/B) sum_i log softmax(logits)_{i, i}
Var diagonal_nll(const Var& logits) {
  const Eigen::Index b = logits.rows();
  Matrix mask = Matrix::Zero(b, logits.cols());
  for (Eigen::Index i = 0; i < b; ++i) mask(i, i) = 1.0;
  return nn::scale(nn::sum(nn::mul(nn::log_softmax_rows(logits), nn::constant(mask))),
                   -1.0 / static_cast<double>(b));
}

}  // namespace

InfoNce info_nce(const Var& v, const Var& w, const Var& w_arm, const Var& w_quad, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: temperature must be > 0");
  if (v.rows() != w.rows() || w_arm.rows() != w.rows() || w_quad.rows() != w.rows()) {
    throw std::invalid_argument("info_nce: batch sizes differ");
  }
  const Var cands[] = {w, w_arm, w_quad};
  const Var c = nn::concat_rows(cands);
  InfoNce out;
  out.obs_to_act = diagonal_nll(nn::scale(nn::matmul_nt(v, c), 1.0 / tau));
  out.act_to_obs = diagonal_nll(nn::scale(nn::matmul_nt(w, v), 1.0 / tau));
  out.coord = nn::scale(nn::add(out.obs_to_act, out.act_to_obs), 0.5);
  return out;
}

Var total_loss(const Var& l_arm, const Var& l_quad, const Var& l_coord, double delta) {
  if (delta < 0.0) throw std::invalid_argument("total_loss: delta must be >= 0");
  Var t = nn::add(l_arm, l_quad);
  return delta == 0.0 ? t : nn::add(t, nn::scale(l_coord, delta));
}

double total_loss(double l_arm, double l_quad, double l_coord, double delta) {
  if (delta < 0.0) throw std::invalid_argument("total_loss: delta must be >= 0");
  return l_arm + l_quad + delta * l_coord;
}

ProjectionHead::ProjectionHead(Eigen::Index in, Eigen::Index hidden, Eigen::Index out,
                               std::mt19937_64& rng)
    : mlp_(in, hidden, out, rng, nn::Activation::kRelu), in_(in) {}

Var ProjectionHead::forward(const Var& x) const { return nn::l2_normalize_rows(mlp_.forward(x)); }

void ProjectionHead::collect(nn::ParameterSet& params, const std::string& prefix) const {
  mlp_.collect(params, prefix);
}

CoordinationLoss::CoordinationLoss(Eigen::Index z_dim, Eigen::Index action_dim,
                                   CoordLossConfig cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      obs_(z_dim, cfg.proj_hidden, cfg.proj_dim, rng),
      act_(action_dim, cfg.proj_hidden, cfg.proj_dim, rng) {}

InfoNce CoordinationLoss::forward(const Var& z_seq, int t_obs, const Var& arm_chunks,
                                  const Var& base_chunks, int horizon,
                                  const std::vector<int>& lambda) const {
  const Summary s = summarize(z_seq, t_obs, arm_chunks, base_chunks, horizon);
  const Negatives n = build_negatives(s.arm_bar, s.base_bar, lambda);
  return info_nce(obs_.forward(s.z_bar), act_.forward(s.u), act_.forward(n.arm_mismatch),
                  act_.forward(n.base_mismatch), cfg_.tau);
}

void CoordinationLoss::collect(nn::ParameterSet& params, const std::string& prefix) const {
  obs_.collect(params, prefix + "obs.");
  act_.collect(params, prefix + "act.");
}

}  // namespace falcon::coordloss
