#pragma once

// Offline training from recorded episodes: per-episode feature caches, window
// batches, the Adam loop, and caption pretraining of the encoders.

#include "falcon/coordinator/captions.hpp"
#include "falcon/data/dataset.hpp"
#include "falcon/model/falcon_model.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <vector>

namespace falcon::train {

using nn::Matrix;

struct EpisodeCache {
  Matrix views;           // (steps*3) x D_f, frozen image encoder output
  Eigen::MatrixXf pixels; // (steps*3) x pixels, only when the image encoder trains
  Matrix proprio;         // steps x 14
  Matrix arm;             // steps x 3, normalized
  Matrix base;            // steps x 5, normalized
  size_t steps() const { return static_cast<size_t>(proprio.rows()); }
};

struct FrameStore {
  std::vector<EpisodeCache> episodes;
  bool has_pixels = false;
  std::vector<size_t> lengths() const;
};

// Pixel rows for every step of an episode in view order.
Matrix episode_pixels(const data::Episode& e, const coordinator::CoordinatorConfig& cfg);

FrameStore build_frame_store(const coordinator::Coordinator& coord,
                             const std::vector<const data::Episode*>& episodes,
                             const data::ActionNormalizers& norms);

model::Batch make_batch(const FrameStore& store, const data::WindowDataset& ds,
                        const std::vector<size_t>& samples);

struct TrainConfig {
  int steps = 3000;
  int batch = 64;
  double lr = 1e-3;
  double lr_min = 1e-5;
  int warmup = 100;
  double weight_decay = 1e-6;
  double max_grad_norm = 1.0;
  uint64_t seed = 0;
  int log_every = 50;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Linear warmup then cosine decay to lr_min.
double learning_rate(const TrainConfig& c, int step);

struct TrainRecord {
  int step = 0;
  double total = 0.0;
  double arm = 0.0;
  double base = 0.0;
  double coord = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

std::vector<TrainRecord> train_model(model::FalconModel& m, const FrameStore& store,
                                     const TrainConfig& cfg,
                                     const std::function<void(const TrainRecord&)>& on_log = {});

void write_metrics_csv(const std::vector<TrainRecord>& records, const std::filesystem::path& path);

// Frames (every `stride` steps) labeled from the recorded world state.
std::vector<coordinator::CaptionFrame> caption_frames(const world::WorldConfig& wc,
                                                      const coordinator::CoordinatorConfig& cc,
                                                      const std::vector<const data::Episode*>& episodes,
                                                      int stride);

}  // namespace falcon::train
