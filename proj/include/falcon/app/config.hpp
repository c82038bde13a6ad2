#pragma once

// Run configuration: one JSON file with an optional "extends" parent. Files
// are merged parent-first, then CLI overrides, then validated. Unknown keys
// anywhere are rejected.

#include "falcon/coordinator/captions.hpp"
#include "falcon/data/expert.hpp"
#include "falcon/eval/eval.hpp"
#include "falcon/llc/ppo.hpp"
#include "falcon/model/falcon_model.hpp"
#include "falcon/train/train.hpp"
#include "falcon/world/world.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace falcon::data {
void to_json(nlohmann::json& j, const ExpertConfig& c);
void from_json(const nlohmann::json& j, ExpertConfig& c);
}  // namespace falcon::data

namespace falcon::app {

struct PretrainSettings {
  bool enabled = true;
  int stride = 2;  // every n-th recorded step becomes a caption frame
  coordinator::CaptionPretrainConfig caption;
};

struct CollectSettings {
  world::TaskId task = world::TaskId::kTask2;
  world::Region region = world::Region::kCenter;
  int episodes = 50;
  uint64_t seed_base = 0;
  int threads = 0;
};

struct EvalSettings {
  world::TaskId task = world::TaskId::kTask2;
  std::vector<world::Region> regions{world::kAllRegions.begin(), world::kAllRegions.end()};
  int trials_per_region = 5;
  uint64_t seed_base = 1000;
  int64_t max_sim_steps = 3000;
  int threads = 0;
};

struct ServeSettings {
  int port = 8765;
  double frame_rate = 20.0;  // state frames per second
  double watchdog_s = 5.0;
  double time_scale = 1.0;   // sim seconds per wall second
  bool thumbnails = false;
  std::string autonomous = "policy";  // policy | expert
  std::string mode = "tele_base";      // initial operator mode
};

struct LlcTrainSettings {
  int iterations = 600;
  double time_budget_s = 600.0;
  int num_envs = 16;
  int horizon = 128;
  int hidden = 64;
};

struct RunConfig {
  uint64_t seed = 0;
  world::WorldConfig world;
  data::ExpertConfig expert;
  model::ModelConfig model;
  PretrainSettings pretrain;
  train::TrainConfig train;
  CollectSettings collect;
  EvalSettings eval;
  ServeSettings serve;
  LlcTrainSettings llc_train;
  std::map<std::string, std::string> prompts;  // task name -> prompt file

  void validate() const;
  nlohmann::json to_json() const;
  // `base_dir` resolves relative prompt paths.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

  // Hash over the sections that shape recorded data and trained weights.
  std::string hash() const;
  std::filesystem::path prompt_path(world::TaskId task) const;
};

// Reads `path`, following "extends" chains (relative to each file). Returns the merged JSON.
nlohmann::json load_config_json(const std::filesystem::path& path);

// "a.b.c=value" with value parsed as JSON when possible, otherwise as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Config path from the argument, then $FALCON_CONFIG, then the installed default.
std::filesystem::path resolve_config_path(const std::string& arg);

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace falcon::app
