#include "falcon/eval/eval.hpp"

#include "falcon/data/episode.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace falcon::eval {

const std::vector<std::string>& stage_names(world::TaskId task) {
  static const std::vector<std::string> t1 = {"navigation", "open_drawer", "pick_toy", "place_toy"};
  static const std::vector<std::string> t2 = {"navigation", "place_toy", "close_drawer"};
  return task == world::TaskId::kTask1 ? t1 : t2;
}

bool stage_predicate(world::TaskId task, int k, const world::Predicates& p) {
  if (k == 0) return p.at_manip_pose;
  if (task == world::TaskId::kTask1) {
    switch (k) {
      case 1: return p.drawer_open;
      case 2: return p.toy_grasped;
      case 3: return p.toy_in_drawer;
    }
  } else {
    switch (k) {
      case 1: return p.toy_in_drawer;
      case 2: return p.toy_in_drawer && p.drawer_closed;
    }
  }
  throw std::out_of_range("stage index out of range");
}

StageTracker::StageTracker(world::TaskId task) : task_(task), stages_(stage_names(task).size(), false) {}

void StageTracker::update(const world::Predicates& p) {
  for (size_t k = 0; k < stages_.size(); ++k) {
    if (stages_[k]) continue;
    if ((k == 0 || stages_[k - 1]) && stage_predicate(task_, static_cast<int>(k), p)) {
      stages_[k] = true;
    } else {
      break;
    }
  }
}

int StageTracker::first_unmet() const {
  for (size_t k = 0; k < stages_.size(); ++k) {
    if (!stages_[k]) return static_cast<int>(k);
  }
  return -1;
}

std::string to_string(TeleopMode m) {
  switch (m) {
    case TeleopMode::kNone: return "none";
    case TeleopMode::kTeleBase: return "tele_base";
    case TeleopMode::kTeleArm: return "tele_arm";
  }
  return "none";
}

TeleopMode parse_teleop_mode(const std::string& s) {
  if (s == "none" || s.empty()) return TeleopMode::kNone;
  if (s == "tele_base") return TeleopMode::kTeleBase;
  if (s == "tele_arm") return TeleopMode::kTeleArm;
  throw std::invalid_argument("unknown teleop mode '" + s + "' (tele_base, tele_arm)");
}

bool StageOutcome::consistent() const {
  if (stages.size() != stage_names(task).size()) return false;
  for (size_t k = 1; k < stages.size(); ++k) {
    if (stages[k] && !stages[k - 1]) return false;
  }
  return success == stages.back();
}

void to_json(nlohmann::json& j, const StageOutcome& o) {
  nlohmann::json st = nlohmann::json::object();
  const auto& names = stage_names(o.task);
  for (size_t k = 0; k < o.stages.size() && k < names.size(); ++k) st[names[k]] = static_cast<bool>(o.stages[k]);
  j = {{"task", world::to_string(o.task)},
       {"region", world::to_string(o.region)},
       {"seed", o.seed},
       {"method", o.method},
       {"mode", to_string(o.mode)},
       {"stages", st},
       {"success", o.success},
       {"steps", o.steps},
       {"failure", o.failure}};
}

void from_json(const nlohmann::json& j, StageOutcome& o) {
  o.task = world::parse_task(j.at("task").get<std::string>());
  o.region = world::parse_region(j.at("region").get<std::string>());
  o.seed = j.at("seed").get<uint64_t>();
  o.method = j.at("method").get<std::string>();
  o.mode = parse_teleop_mode(j.value("mode", std::string("none")));
  o.stages.clear();
  for (const auto& name : stage_names(o.task)) o.stages.push_back(j.at("stages").at(name).get<bool>());
  o.success = j.at("success").get<bool>();
  o.steps = j.at("steps").get<int64_t>();
  o.failure = j.value("failure", std::string());
}

// --- sources ---------------------------------------------------------------------

void ExpertSource::reset(const world::World& w, const world::WorldState&, uint64_t seed) {
  expert_.emplace(w.config(), cfg_, seed);
}

SourceCommand ExpertSource::act(const TickContext& ctx) {
  SourceCommand c;
  c.base = expert_->base(ctx.state);
  c.arm = expert_->arm(ctx.state);
  return c;
}

void RandomSource::reset(const world::World&, const world::WorldState&, uint64_t seed) {
  rng_.seed(seed ^ 0x5EED5EEDULL);
}

SourceCommand RandomSource::act(const TickContext& ctx) {
  SourceCommand c;
  c.base = ctx.world.config().commands.sample(rng_);
  std::uniform_real_distribution<double> ux(0.1, 0.55), uy(-0.35, 0.35);
  c.arm.ee_target = {ux(rng_), uy(rng_)};
  c.arm.gripper_close = std::bernoulli_distribution(0.5)(rng_);
  return c;
}

PolicySource::PolicySource(std::shared_ptr<const model::FalconModel> model, std::string name)
    : model_(std::move(model)), name_(std::move(name)) {
  if (!model_) throw std::invalid_argument("PolicySource: null model");
}

void PolicySource::reset(const world::World&, const world::WorldState&, uint64_t seed) {
  views_.clear();
  proprio_.clear();
  base_queue_.clear();
  arm_queue_.clear();
  arm_rng_.seed(seed * 2 + 11);
  base_rng_.seed(seed * 2 + 12);
  latent_.reset();
}

SourceCommand PolicySource::act(const TickContext& ctx) {
  if (!ctx.obs) throw std::logic_error("PolicySource needs observations");
  const int t_obs = model_->config().t_obs;
  const coordinator::FrameFeatures ff = model_->coordinator().image_features(*ctx.obs);
  views_.push_back(ff.views);
  proprio_.push_back(ctx.obs->proprio);
  // The first window repeats the reset frame.
  while (static_cast<int>(views_.size()) < t_obs) {
    views_.push_front(views_.front());
    proprio_.push_front(proprio_.front());
  }
  while (static_cast<int>(views_.size()) > t_obs) {
    views_.pop_front();
    proprio_.pop_front();
  }
  if (arm_queue_.empty() || base_queue_.empty()) {
    const Eigen::Index d = views_.front().cols();
    Matrix views(t_obs * 3, d), proprio(t_obs, world::kProprioDim);
    for (int k = 0; k < t_obs; ++k) {
      views.middleRows(k * 3, 3) = views_[static_cast<size_t>(k)];
      for (int i = 0; i < world::kProprioDim; ++i) proprio(k, i) = proprio_[static_cast<size_t>(k)][static_cast<size_t>(i)];
    }
    const model::Plan plan = model_->plan(views, proprio, arm_rng_, base_rng_);
    latent_ = plan.latent;
    arm_queue_.clear();
    base_queue_.clear();
    for (int h = 0; h < model_->config().h_exec; ++h) {
      data::ArmAction a;
      data::BaseAction b;
      for (int i = 0; i < data::kArmActionDim; ++i) a[static_cast<size_t>(i)] = plan.arm(h, i);
      for (int i = 0; i < data::kBaseActionDim; ++i) b[static_cast<size_t>(i)] = plan.base(h, i);
      arm_queue_.push_back(data::to_arm_command(a));
      base_queue_.push_back(data::to_base_command(b));
    }
  }
  SourceCommand c;
  c.arm = arm_queue_.front();
  c.base = base_queue_.front();
  arm_queue_.pop_front();
  base_queue_.pop_front();
  return c;
}

namespace {

nlohmann::json command_json(const SourceCommand& c) {
  return {{"base", c.base.as_array()},
          {"arm", {c.arm.ee_target.x(), c.arm.ee_target.y(), c.arm.gripper_close ? 1.0 : 0.0}},
          {"abort", c.abort}};
}

SourceCommand command_from_json(const nlohmann::json& j) {
  SourceCommand c;
  c.base = llc::BaseCommand::from_array(j.at("base").get<std::array<double, 5>>());
  const auto a = j.at("arm").get<std::array<double, 3>>();
  c.arm.ee_target = {a[0], a[1]};
  c.arm.gripper_close = a[2] > 0.5;
  c.abort = j.value("abort", std::string());
  return c;
}

}  // namespace

nlohmann::json TeleopLog::to_json() const {
  nlohmann::json ticks_j = nlohmann::json::array();
  for (const auto& t : ticks) {
    nlohmann::json e = command_json(t.command);
    e["tick"] = t.tick;
    ticks_j.push_back(std::move(e));
  }
  return {{"mode", to_string(mode)},  {"task", world::to_string(task)},
          {"region", world::to_string(region)}, {"seed", seed},
          {"autonomous", autonomous}, {"ticks", ticks_j}};
}

TeleopLog TeleopLog::from_json(const nlohmann::json& j) {
  TeleopLog log;
  log.mode = parse_teleop_mode(j.at("mode").get<std::string>());
  log.task = world::parse_task(j.at("task").get<std::string>());
  log.region = world::parse_region(j.at("region").get<std::string>());
  log.seed = j.at("seed").get<uint64_t>();
  log.autonomous = j.value("autonomous", std::string());
  for (const auto& e : j.at("ticks")) log.ticks.push_back({e.at("tick").get<int>(), command_from_json(e)});
  return log;
}

SourceCommand ReplaySource::act(const TickContext& ctx) {
  if (next_ >= log_.ticks.size() || log_.ticks[next_].tick != ctx.tick) {
    SourceCommand c;
    c.abort = kTeleopTimeout;
    return c;
  }
  return log_.ticks[next_++].command;
}

// --- trials ----------------------------------------------------------------------

StageOutcome run_trial(Source& arm, Source& base, const world::World& w, world::TaskId task,
                       world::Region region, uint64_t seed, const TrialLimits& limits,
                       const TrialHooks& hooks) {
  world::WorldState s = w.reset_task(task, region, seed);
  const bool shared = &arm == &base;
  arm.reset(w, s, seed);
  if (!shared) base.reset(w, s, seed);

  StageOutcome out;
  out.task = task;
  out.region = region;
  out.seed = seed;
  StageTracker tracker(task);
  tracker.update(w.object_predicates(s));

  SourceCommand applied;
  applied.base = s.last_cmd;
  applied.arm = {s.arm_target, s.gripper_closed};
  const bool want_obs = arm.needs_observation() || base.needs_observation();
  int64_t step = 0;
  for (; step < limits.max_sim_steps && !tracker.complete(); ++step) {
    if (step % world::kSimStepsPerAction == 0) {
      const int tick = static_cast<int>(step / world::kSimStepsPerAction);
      std::optional<world::ObservationBundle> obs;
      if (want_obs) obs = w.render_views(s);
      const TickContext ctx{w, s, obs ? &*obs : nullptr, tick};
      const SourceCommand a = arm.act(ctx);
      const SourceCommand b = shared ? a : base.act(ctx);
      if (!a.abort.empty() || !b.abort.empty()) {
        out.failure = !a.abort.empty() ? a.abort : b.abort;
        break;
      }
      applied.arm = a.arm;
      applied.base = b.base;
      if (hooks.on_tick) hooks.on_tick(s, tick, applied);
    }
    s = w.step(s, applied.base, applied.arm, world::kSimDt);
    tracker.update(w.object_predicates(s));
    if (hooks.on_sim_step) hooks.on_sim_step(s);
  }
  out.stages = tracker.stages();
  out.success = tracker.complete();
  out.steps = step;
  if (!out.success && out.failure.empty()) {
    out.failure = "step limit before " + stage_names(task)[static_cast<size_t>(tracker.first_unmet())];
  }
  if (arm.human() && !base.human()) out.mode = TeleopMode::kTeleArm;
  if (base.human() && !arm.human()) out.mode = TeleopMode::kTeleBase;
  return out;
}

uint64_t trial_seed(const TrialPlan& p, int i) { return p.seed_base + static_cast<uint64_t>(i); }

std::vector<StageOutcome> run_trials(const SourceFactory& factory, const std::string& method,
                                     const world::World& w, const TrialPlan& plan) {
  const size_t per = static_cast<size_t>(std::max(0, plan.trials_per_region));
  const size_t total = per * plan.regions.size();
  std::vector<StageOutcome> out(total);
  std::atomic<size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= total) return;
      try {
        SourcePair src = factory();
        Source& base = src.base ? *src.base : *src.arm;
        out[i] = run_trial(*src.arm, base, w, plan.task, plan.regions[i / per],
                           trial_seed(plan, static_cast<int>(i % per)), plan.limits);
        out[i].method = method;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned n = static_cast<unsigned>(std::min<size_t>(plan.threads > 0 ? plan.threads : hw, std::max<size_t>(1, total)));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  return out;
}

// --- tables ----------------------------------------------------------------------

SuccessTable aggregate(const std::vector<StageOutcome>& outcomes, const std::vector<world::Region>& regions) {
  if (outcomes.empty()) throw std::invalid_argument("aggregate: no outcomes");
  SuccessTable t;
  t.task = outcomes.front().task;
  std::vector<std::string> methods;
  for (const auto& o : outcomes) {
    if (o.task != t.task) throw std::invalid_argument("aggregate: mixed task ids in one table");
    if (std::find(methods.begin(), methods.end(), o.method) == methods.end()) methods.push_back(o.method);
  }
  std::vector<world::Region> regs = regions;
  if (regs.empty()) {
    for (auto r : world::kAllRegions) {
      if (std::any_of(outcomes.begin(), outcomes.end(), [&](const auto& o) { return o.region == r; })) regs.push_back(r);
    }
  }
  const auto& names = stage_names(t.task);
  for (const auto& m : methods) {
    for (auto r : regs) {
      std::vector<const StageOutcome*> bucket;
      for (const auto& o : outcomes) {
        if (o.method == m && o.region == r) bucket.push_back(&o);
      }
      if (bucket.empty()) {
        spdlog::warn("aggregate: no outcomes for method '{}' in region {}; row omitted", m, world::to_string(r));
        continue;
      }
      for (size_t k = 0; k < names.size(); ++k) {
        TableRow row{m, r, names[k], 0, static_cast<int>(bucket.size())};
        for (const auto* o : bucket) row.successes += o->stages.at(k) ? 1 : 0;
        t.rows.push_back(row);
      }
    }
  }
  return t;
}

namespace {

std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << v;
  return s.str();
}

}  // namespace

std::string SuccessTable::csv() const {
  std::ostringstream s;
  s << "task,method,region,stage,success_rate,successes,trials\n";
  for (const auto& r : rows) {
    s << world::to_string(task) << ',' << r.method << ',' << world::to_string(r.region) << ',' << r.stage << ','
      << percent(r.rate()) << ',' << r.successes << ',' << r.trials << '\n';
  }
  return s.str();
}

std::string SuccessTable::text() const {
  const std::vector<std::string> head = {"method", "region", "stage", "success %", "trials"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.method, world::to_string(r.region), r.stage, percent(r.rate()),
                     std::to_string(r.successes) + "/" + std::to_string(r.trials)});
  }
  std::vector<size_t> width(head.size());
  for (size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream s;
  s << world::to_string(task) << '\n';
  auto line = [&](const std::vector<std::string>& row) {
    for (size_t c = 0; c < row.size(); ++c) {
      if (c) s << "  ";
      if (c >= 3) s << std::setw(static_cast<int>(width[c])) << std::right << row[c];
      else s << std::setw(static_cast<int>(width[c])) << std::left << row[c];
    }
    s << '\n';
  };
  line(head);
  for (const auto& row : cells) line(row);
  return s.str();
}

SubsystemScore human_in_loop_score(const std::vector<StageOutcome>& outcomes, TeleopMode mode) {
  if (mode == TeleopMode::kNone) throw std::invalid_argument("human_in_loop_score: mode must be tele_base or tele_arm");
  SubsystemScore s;
  int base_ok = 0, arm_ok = 0;
  for (const auto& o : outcomes) {
    if (o.mode == TeleopMode::kNone) throw std::invalid_argument("human_in_loop_score: untagged outcome (seed " + std::to_string(o.seed) + ")");
    if (o.mode != mode) continue;
    ++s.trials;
    base_ok += o.stages.at(0) ? 1 : 0;
    arm_ok += std::all_of(o.stages.begin() + 1, o.stages.end(), [](bool b) { return b; }) ? 1 : 0;
  }
  if (s.trials == 0) throw std::invalid_argument("human_in_loop_score: no outcomes tagged " + to_string(mode));
  s.base = 100.0 * base_ok / s.trials;
  s.arm = 100.0 * arm_ok / s.trials;
  return s;
}

void write_outcomes(const std::vector<StageOutcome>& outcomes, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& o : outcomes) out << nlohmann::json(o).dump() << '\n';
}

std::vector<StageOutcome> read_outcomes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<StageOutcome> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<StageOutcome>());
  }
  return out;
}

void write_results(const std::vector<StageOutcome>& outcomes, const SuccessTable& table,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_outcomes(outcomes, dir / "outcomes.jsonl");
  std::ofstream(dir / "table.csv") << table.csv();
  std::ofstream(dir / "table.txt") << table.text();
}

}  // namespace falcon::eval
