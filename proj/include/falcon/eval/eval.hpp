#pragma once

// Stage-gated trials, command sources, success tables and subsystem scoring.

#include "falcon/data/expert.hpp"
#include "falcon/model/falcon_model.hpp"
#include "falcon/world/world.hpp"

#include <nlohmann/json.hpp>

#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace falcon::eval {

using nn::Matrix;

// task1: navigation, open_drawer, pick_toy, place_toy; task2: navigation, place_toy, close_drawer.
const std::vector<std::string>& stage_names(world::TaskId task);
// Raw predicate for stage k, before gating.
bool stage_predicate(world::TaskId task, int k, const world::Predicates& p);

// Latches stages in order; stage k can only turn on once stage k-1 is on.
class StageTracker {
 public:
  explicit StageTracker(world::TaskId task);
  void update(const world::Predicates& p);
  const std::vector<bool>& stages() const { return stages_; }
  bool complete() const { return stages_.back(); }
  int first_unmet() const;  // -1 when complete

 private:
  world::TaskId task_;
  std::vector<bool> stages_;
};

enum class TeleopMode { kNone, kTeleBase, kTeleArm };
std::string to_string(TeleopMode m);
TeleopMode parse_teleop_mode(const std::string& s);

struct StageOutcome {
  world::TaskId task = world::TaskId::kTask1;
  world::Region region = world::Region::kCenter;
  uint64_t seed = 0;
  std::string method;
  TeleopMode mode = TeleopMode::kNone;
  std::vector<bool> stages;
  bool success = false;
  int64_t steps = 0;  // sim steps
  std::string failure;  // empty on success

  bool operator==(const StageOutcome&) const = default;
  // Stage booleans are monotone and success equals the last stage.
  bool consistent() const;
};

void to_json(nlohmann::json& j, const StageOutcome& o);
void from_json(const nlohmann::json& j, StageOutcome& o);

struct TickContext {
  const world::World& world;
  const world::WorldState& state;
  const world::ObservationBundle* obs;  // set when a source asked for observations
  int tick = 0;
};

struct SourceCommand {
  llc::BaseCommand base;
  world::ArmCommand arm;
  std::string abort;  // nonempty ends the trial as a failure with this annotation
};

inline const std::string kTeleopTimeout = "teleop timeout";

// One provider of high-level commands at the 10 Hz tick. A trial reads the base
// half from its base source and the arm half from its arm source.
class Source {
 public:
  virtual ~Source() = default;
  virtual std::string name() const = 0;
  virtual bool needs_observation() const { return false; }
  virtual bool human() const { return false; }
  virtual void reset(const world::World& w, const world::WorldState& s, uint64_t seed) = 0;
  virtual SourceCommand act(const TickContext& ctx) = 0;
  virtual std::optional<coordinator::ConditioningLatent> latent() const { return std::nullopt; }
};

class ExpertSource : public Source {
 public:
  explicit ExpertSource(data::ExpertConfig cfg = {}) : cfg_(cfg) {}
  std::string name() const override { return "expert"; }
  void reset(const world::World& w, const world::WorldState& s, uint64_t seed) override;
  SourceCommand act(const TickContext& ctx) override;

 private:
  data::ExpertConfig cfg_;
  std::optional<data::ScriptedExpert> expert_;
};

// Uniform commands over the command ranges and the arm workspace box.
class RandomSource : public Source {
 public:
  std::string name() const override { return "random"; }
  void reset(const world::World& w, const world::WorldState& s, uint64_t seed) override;
  SourceCommand act(const TickContext& ctx) override;

 private:
  std::mt19937_64 rng_;
};

// Receding-horizon chunk execution: replans both chunks every h_exec ticks.
class PolicySource : public Source {
 public:
  explicit PolicySource(std::shared_ptr<const model::FalconModel> model, std::string name = "falcon");
  std::string name() const override { return name_; }
  bool needs_observation() const override { return true; }
  void reset(const world::World& w, const world::WorldState& s, uint64_t seed) override;
  SourceCommand act(const TickContext& ctx) override;
  std::optional<coordinator::ConditioningLatent> latent() const override { return latent_; }

 private:
  std::shared_ptr<const model::FalconModel> model_;
  std::string name_;
  std::deque<Matrix> views_;    // 3 x D_f per frame
  std::deque<std::array<double, world::kProprioDim>> proprio_;
  std::deque<llc::BaseCommand> base_queue_;
  std::deque<world::ArmCommand> arm_queue_;
  std::mt19937_64 arm_rng_;
  std::mt19937_64 base_rng_;
  std::optional<coordinator::ConditioningLatent> latent_;
};

// Per-tick record of what a human-driven subsystem applied.
struct TeleopTick {
  int tick = 0;
  SourceCommand command;
};

struct TeleopLog {
  TeleopMode mode = TeleopMode::kTeleBase;
  world::TaskId task = world::TaskId::kTask2;
  world::Region region = world::Region::kCenter;
  uint64_t seed = 0;
  std::string autonomous;  // name of the source driving the other subsystem
  std::vector<TeleopTick> ticks;

  nlohmann::json to_json() const;
  static TeleopLog from_json(const nlohmann::json& j);
};

// Replays a recorded human stream tick by tick; running past its end times out.
class ReplaySource : public Source {
 public:
  explicit ReplaySource(TeleopLog log) : log_(std::move(log)) {}
  std::string name() const override { return "replay"; }
  bool human() const override { return true; }
  void reset(const world::World&, const world::WorldState&, uint64_t) override { next_ = 0; }
  SourceCommand act(const TickContext& ctx) override;

 private:
  TeleopLog log_;
  size_t next_ = 0;
};

struct TrialLimits {
  int64_t max_sim_steps = 3000;
};

struct TrialHooks {
  std::function<void(const world::WorldState&, int tick, const SourceCommand& applied)> on_tick;
  std::function<void(const world::WorldState&)> on_sim_step;
};

StageOutcome run_trial(Source& arm, Source& base, const world::World& w, world::TaskId task,
                       world::Region region, uint64_t seed, const TrialLimits& limits = {},
                       const TrialHooks& hooks = {});

struct SourcePair {
  std::shared_ptr<Source> arm;
  std::shared_ptr<Source> base;  // may alias arm
};
using SourceFactory = std::function<SourcePair()>;

struct TrialPlan {
  world::TaskId task = world::TaskId::kTask2;
  std::vector<world::Region> regions{world::kAllRegions.begin(), world::kAllRegions.end()};
  int trials_per_region = 5;
  uint64_t seed_base = 1000;
  int threads = 0;
  TrialLimits limits;
};

uint64_t trial_seed(const TrialPlan& p, int i);

// Outcomes in (region, trial) order regardless of thread scheduling.
std::vector<StageOutcome> run_trials(const SourceFactory& factory, const std::string& method,
                                     const world::World& w, const TrialPlan& plan);

struct TableRow {
  std::string method;
  world::Region region = world::Region::kCenter;
  std::string stage;
  int successes = 0;
  int trials = 0;
  double rate() const { return trials > 0 ? 100.0 * successes / trials : 0.0; }
};

struct SuccessTable {
  world::TaskId task = world::TaskId::kTask1;
  std::vector<TableRow> rows;

  std::string csv() const;
  std::string text() const;
};

// Rows ordered by method (first appearance), region, stage. Regions in
// `regions` with no outcomes for a method are omitted with a warning.
SuccessTable aggregate(const std::vector<StageOutcome>& outcomes,
                       const std::vector<world::Region>& regions = {});

struct SubsystemScore {
  double base = 0.0;  // %
  double arm = 0.0;   // %
  int trials = 0;
};

SubsystemScore human_in_loop_score(const std::vector<StageOutcome>& outcomes, TeleopMode mode);

void write_outcomes(const std::vector<StageOutcome>& outcomes, const std::filesystem::path& path);
std::vector<StageOutcome> read_outcomes(const std::filesystem::path& path);
// outcomes.jsonl, table.csv and table.txt under dir.
void write_results(const std::vector<StageOutcome>& outcomes, const SuccessTable& table,
                   const std::filesystem::path& dir);

}  // namespace falcon::eval
