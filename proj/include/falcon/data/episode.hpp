#pragma once

// Episode files:
//   "FALCONEP" | u32 format_version | u32 header_len | header JSON | u32 header CRC
//   | u32 stream_count | streams...
// Each stream is u32 name_len | name | u64 payload_len | payload | u32 CRC(payload).
// Raster streams are zlib-compressed HxWx3 frames concatenated in step order.
//
// Step k holds the observation after the world advanced to k and the commands
// that were active while it advanced from k-1 (step 0 holds the reset commands).

#include "falcon/data/expert.hpp"
#include "falcon/world/world.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace falcon::data {

inline constexpr uint32_t kEpisodeFormatVersion = 1;
inline constexpr int kArmActionDim = 3;
inline constexpr int kBaseActionDim = 5;

using ArmAction = std::array<double, kArmActionDim>;    // ee x, ee y (body frame), gripper
using BaseAction = std::array<double, kBaseActionDim>;  // vx, vy, wz, pitch, height

ArmAction to_action(const world::ArmCommand& a);
world::ArmCommand to_arm_command(const ArmAction& a);  // gripper closes above 0.5
BaseAction to_action(const llc::BaseCommand& b);
llc::BaseCommand to_base_command(const BaseAction& b);

struct EpisodeHeader {
  world::TaskId task = world::TaskId::kTask1;
  world::Region region = world::Region::kCenter;
  uint64_t seed = 0;
  std::string timestamp;
  uint32_t format_version = kEpisodeFormatVersion;
  std::string instruction;
  std::string config_hash;
  int raster = 96;
  double step_dt = world::kSimDt * world::kSimStepsPerAction;
  bool success = false;

  bool operator==(const EpisodeHeader&) const = default;
};

struct EpisodeStep {
  world::Raster wrist;
  world::Raster body;
  world::Raster head;
  std::array<double, world::kProprioDim> proprio{};
  ArmAction arm{};
  BaseAction base{};
  double time = 0.0;
  std::vector<uint8_t> state;  // encode_state bytes

  bool operator==(const EpisodeStep&) const = default;
};

struct Episode {
  EpisodeHeader header;
  std::vector<EpisodeStep> steps;

  bool operator==(const Episode&) const = default;
  size_t size() const { return steps.size(); }
  // Throws std::invalid_argument on non-increasing time or inconsistent rasters.
  void validate() const;
};

std::vector<uint8_t> encode_episode(const Episode& e);
// Throws FormatError with a byte offset on any corruption.
Episode decode_episode(std::span<const uint8_t> bytes);

void save_episode(const Episode& e, const std::filesystem::path& path);
Episode load_episode(const std::filesystem::path& path);

// Stage predicates the recorder stops on, shared with the eval harness.
bool task_complete(const world::World& w, const world::WorldState& s);

struct RecordOptions {
  int max_steps = 600;  // policy steps (3000 sim steps)
  ExpertConfig expert;
  std::string config_hash;
  std::string timestamp;
};

// Runs the scripted expert from reset until task completion or the step limit.
Episode record_episode(const world::World& w, world::TaskId task, world::Region region,
                       uint64_t seed, const RecordOptions& opt);

std::filesystem::path episode_path(const std::filesystem::path& root, world::TaskId task,
                                   uint64_t seed);

struct CollectionManifest {
  world::TaskId task = world::TaskId::kTask1;
  world::Region region = world::Region::kCenter;
  std::vector<uint64_t> seeds;
  std::vector<size_t> lengths;
  std::vector<bool> success;
  std::string config_hash;
  size_t total_steps = 0;

  nlohmann::json to_json() const;
  static CollectionManifest from_json(const nlohmann::json& j);
};

struct CollectOptions {
  world::TaskId task = world::TaskId::kTask1;
  world::Region region = world::Region::kCenter;
  std::vector<uint64_t> seeds;
  bool force = false;
  int threads = 0;  // 0 = hardware concurrency
  RecordOptions record;
};

// Writes <out>/<task>/<seed>.ep for each seed plus <out>/<task>/manifest.json.
// Refuses to overwrite existing episode files unless force is set.
CollectionManifest collect(const world::World& w, const std::filesystem::path& out,
                           const CollectOptions& opt);

}  // namespace falcon::data
