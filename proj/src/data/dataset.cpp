#include "falcon/data/dataset.hpp"

#include <spdlog/spdlog.h>

#include <stdexcept>

namespace falcon::data {

WindowDataset::WindowDataset(const std::vector<size_t>& episode_lengths, int t_obs, int horizon)
    : t_obs_(t_obs), horizon_(horizon) {
  if (t_obs < 1 || horizon < 1) throw std::invalid_argument("dataset: T_obs and H must be >= 1");
  const size_t window = static_cast<size_t>(t_obs + horizon);
  for (size_t e = 0; e < episode_lengths.size(); ++e) {
    if (episode_lengths[e] < window) {
      ++skipped_;
      continue;
    }
    for (size_t t = 0; t + window <= episode_lengths[e]; ++t) index_.push_back({e, t});
  }
  if (skipped_ > 0) spdlog::warn("dataset: skipped {} episodes shorter than {} steps", skipped_, window);
}

Matrix arm_rows(const Episode& e) {
  Matrix m(static_cast<Eigen::Index>(e.size()), kArmActionDim);
  for (size_t i = 0; i < e.size(); ++i) {
    for (int k = 0; k < kArmActionDim; ++k) m(static_cast<Eigen::Index>(i), k) = e.steps[i].arm[k];
  }
  return m;
}

Matrix base_rows(const Episode& e) {
  Matrix m(static_cast<Eigen::Index>(e.size()), kBaseActionDim);
  for (size_t i = 0; i < e.size(); ++i) {
    for (int k = 0; k < kBaseActionDim; ++k) m(static_cast<Eigen::Index>(i), k) = e.steps[i].base[k];
  }
  return m;
}

ActionNormalizers fit_action_normalizers(const std::vector<const Episode*>& episodes) {
  Eigen::Index rows = 0;
  for (const Episode* e : episodes) rows += static_cast<Eigen::Index>(e->size());
  if (rows == 0) throw std::invalid_argument("fit_action_normalizers: empty dataset");
  Matrix arm(rows, kArmActionDim), base(rows, kBaseActionDim);
  Eigen::Index r = 0;
  for (const Episode* e : episodes) {
    const auto n = static_cast<Eigen::Index>(e->size());
    arm.middleRows(r, n) = arm_rows(*e);
    base.middleRows(r, n) = base_rows(*e);
    r += n;
  }
  return {diffusion::Normalizer::fit(arm), diffusion::Normalizer::fit(base)};
}

}  // namespace falcon::data
