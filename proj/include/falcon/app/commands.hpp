#pragma once

// Library side of the CLI subcommands. Each writes its artifacts plus the
// effective config (config.json) into the output directory.

#include "falcon/app/config.hpp"
#include "falcon/data/episode.hpp"
#include "falcon/eval/eval.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace falcon::app {

inline constexpr const char* kBundleFile = "bundle.falcon";
inline constexpr const char* kCoordinatorFile = "coordinator.falcon";

// Hash stored in episodes: world and expert sections only.
std::string data_hash(const RunConfig& cfg);

void write_effective_config(const RunConfig& cfg, const std::filesystem::path& dir);

data::CollectionManifest cmd_collect(const RunConfig& cfg, const std::filesystem::path& out, bool force);

struct Dataset {
  data::CollectionManifest manifest;
  std::vector<data::Episode> episodes;
  std::vector<const data::Episode*> pointers() const;
};

// `dir` is either a task directory holding manifest.json or a collection root,
// in which case the task comes from cfg.collect.task.
Dataset load_dataset(const RunConfig& cfg, const std::filesystem::path& dir);

// Builds the coordinator and runs caption pretraining when enabled.
coordinator::Coordinator pretrain_coordinator(const RunConfig& cfg, const Dataset& ds,
                                              std::vector<coordinator::CaptionPretrainRecord>* curve = nullptr);
coordinator::Coordinator cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& dataset,
                                      const std::filesystem::path& out);

struct TrainOutput {
  std::shared_ptr<model::FalconModel> model;
  std::vector<train::TrainRecord> metrics;
  std::filesystem::path bundle;
};

// A ready coordinator skips pretraining; otherwise it runs per cfg.pretrain.
TrainOutput train_from_dataset(const RunConfig& cfg, const Dataset& ds, model::Variant variant,
                               const std::filesystem::path& out,
                               const std::optional<coordinator::Coordinator>& coord = std::nullopt);
TrainOutput cmd_train(const RunConfig& cfg, const std::filesystem::path& dataset, model::Variant variant,
                      const std::filesystem::path& out,
                      const std::optional<std::filesystem::path>& coordinator_ckpt = std::nullopt);

// Loads a bundle and warns when its config hash differs from cfg's.
std::shared_ptr<model::FalconModel> load_bundle(const RunConfig& cfg, const std::filesystem::path& bundle);

eval::TrialPlan trial_plan(const RunConfig& cfg);

// source: "policy" (needs a bundle), "expert" or "random".
std::vector<eval::StageOutcome> run_eval(const RunConfig& cfg, const std::string& source,
                                         const std::shared_ptr<const model::FalconModel>& model,
                                         const std::string& method);
std::vector<eval::StageOutcome> cmd_eval(const RunConfig& cfg, const std::string& source,
                                         const std::optional<std::filesystem::path>& bundle,
                                         const std::filesystem::path& out);

// Pretrains once, trains all three variants and evaluates each over cfg.eval.
eval::SuccessTable cmd_ablate(const RunConfig& cfg, const std::filesystem::path& dataset,
                              const std::filesystem::path& out);

llc::TrackingEvaluation cmd_train_llc(const RunConfig& cfg, const std::filesystem::path& out);

// Replays a teleop session log against the configured autonomous source.
eval::StageOutcome cmd_replay(const RunConfig& cfg, const std::filesystem::path& log,
                              const std::optional<std::filesystem::path>& bundle);

}  // namespace falcon::app
