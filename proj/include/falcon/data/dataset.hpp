#pragma once

// Windowed (observation window, action chunk) indexing over recorded episodes.
// Sample i with start t uses observations t .. t+T_obs-1 and the actions
// recorded at steps t+T_obs .. t+T_obs+H-1.

#include "falcon/data/episode.hpp"
#include "falcon/diffusion/diffusion.hpp"

#include <cstddef>
#include <vector>

namespace falcon::data {

using nn::Matrix;

struct SampleIndex {
  size_t episode = 0;
  size_t start = 0;
  bool operator==(const SampleIndex&) const = default;
};

class WindowDataset {
 public:
  WindowDataset(const std::vector<size_t>& episode_lengths, int t_obs, int horizon);

  size_t size() const { return index_.size(); }
  const SampleIndex& at(size_t i) const { return index_.at(i); }
  size_t skipped() const { return skipped_; }
  int t_obs() const { return t_obs_; }
  int horizon() const { return horizon_; }
  size_t obs_step(size_t i, int k) const { return at(i).start + static_cast<size_t>(k); }
  size_t action_step(size_t i, int h) const {
    return at(i).start + static_cast<size_t>(t_obs_ + h);
  }

 private:
  std::vector<SampleIndex> index_;
  size_t skipped_ = 0;
  int t_obs_ = 0;
  int horizon_ = 0;
};

struct ActionNormalizers {
  diffusion::Normalizer arm;
  diffusion::Normalizer base;
};

// Min/max over every recorded action; throws on an empty episode list.
ActionNormalizers fit_action_normalizers(const std::vector<const Episode*>& episodes);

Matrix arm_rows(const Episode& e);   // steps x 3
Matrix base_rows(const Episode& e);  // steps x 5

}  // namespace falcon::data
