#include "falcon/app/commands.hpp"

#include "falcon/common/hash.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace falcon::app {

namespace fs = std::filesystem;
using nlohmann::json;

std::string data_hash(const RunConfig& cfg) {
  const json full = cfg.to_json();
  return config_hash({{"world", full.at("world")}, {"expert", full.at("expert")}});
}

void write_effective_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  json j = cfg.to_json();
  j["config_hash"] = cfg.hash();
  std::ofstream(dir / "config.json") << j.dump(2) << '\n';
}

namespace {

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace

data::CollectionManifest cmd_collect(const RunConfig& cfg, const fs::path& out, bool force) {
  const world::World w(cfg.world);
  data::CollectOptions opt;
  opt.task = cfg.collect.task;
  opt.region = cfg.collect.region;
  opt.force = force;
  opt.threads = cfg.collect.threads;
  for (int i = 0; i < cfg.collect.episodes; ++i) opt.seeds.push_back(cfg.collect.seed_base + static_cast<uint64_t>(i));
  opt.record.expert = cfg.expert;
  opt.record.config_hash = data_hash(cfg);
  opt.record.timestamp = utc_timestamp();
  const data::CollectionManifest m = data::collect(w, out, opt);
  write_effective_config(cfg, out / world::to_string(cfg.collect.task));
  return m;
}

std::vector<const data::Episode*> Dataset::pointers() const {
  std::vector<const data::Episode*> p;
  for (const auto& e : episodes) p.push_back(&e);
  return p;
}

Dataset load_dataset(const RunConfig& cfg, const fs::path& dir) {
  fs::path task_dir = dir;
  if (!fs::exists(task_dir / "manifest.json")) task_dir = dir / world::to_string(cfg.collect.task);
  const fs::path manifest = task_dir / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("no dataset manifest at " + manifest.string());
  Dataset ds;
  ds.manifest = data::CollectionManifest::from_json(json::parse(in));
  const std::string expect = data_hash(cfg);
  if (ds.manifest.config_hash != expect) {
    spdlog::warn("dataset config hash {} differs from the current world/expert config {}", ds.manifest.config_hash, expect);
  }
  for (uint64_t seed : ds.manifest.seeds) {
    data::Episode e = data::load_episode(task_dir / (std::to_string(seed) + ".ep"));
    if (e.header.task != ds.manifest.task) throw std::runtime_error("episode task does not match its manifest");
    if (e.header.raster != cfg.model.coordinator.raster) {
      throw std::runtime_error("episode raster " + std::to_string(e.header.raster) +
                               " does not match the encoder input " + std::to_string(cfg.model.coordinator.raster));
    }
    if (!e.header.success) spdlog::warn("episode seed {} did not finish the task; kept for training", seed);
    ds.episodes.push_back(std::move(e));
  }
  if (ds.episodes.empty()) throw std::runtime_error("dataset " + task_dir.string() + " has no episodes");
  return ds;
}

coordinator::Coordinator pretrain_coordinator(const RunConfig& cfg, const Dataset& ds,
                                              std::vector<coordinator::CaptionPretrainRecord>* curve) {
  std::mt19937_64 rng(cfg.seed);
  coordinator::Coordinator coord(cfg.model.coordinator, rng);
  if (!cfg.pretrain.enabled || cfg.pretrain.caption.steps == 0) return coord;
  const auto frames = train::caption_frames(cfg.world, cfg.model.coordinator, ds.pointers(), cfg.pretrain.stride);
  auto records = coordinator::pretrain_encoders(coord, frames, cfg.pretrain.caption,
                                                [](const coordinator::CaptionPretrainRecord& r) {
                                                  if (r.step % 250 == 0) spdlog::info("pretrain step {} loss {:.4f}", r.step, r.loss);
                                                });
  spdlog::info("caption accuracy {:.3f} over {} frames", coordinator::caption_accuracy(coord, frames), frames.size());
  if (curve) *curve = std::move(records);
  return coord;
}

coordinator::Coordinator cmd_pretrain(const RunConfig& cfg, const fs::path& dataset, const fs::path& out) {
  const Dataset ds = load_dataset(cfg, dataset);
  std::vector<coordinator::CaptionPretrainRecord> curve;
  coordinator::Coordinator coord = pretrain_coordinator(cfg, ds, &curve);
  fs::create_directories(out);
  coordinator::save_coordinator(coord, out / kCoordinatorFile, {{"config_hash", cfg.hash()}});
  std::ofstream csv(out / "pretrain.csv");
  csv << "step,loss\n";
  for (const auto& r : curve) csv << r.step << ',' << r.loss << '\n';
  write_effective_config(cfg, out);
  return coord;
}

TrainOutput train_from_dataset(const RunConfig& cfg, const Dataset& ds, model::Variant variant,
                               const fs::path& out, const std::optional<coordinator::Coordinator>& coord_in) {
  const auto prompts = coordinator::PhasePromptSet::load(cfg.prompt_path(ds.manifest.task));
  if (prompts.task != world::to_string(ds.manifest.task)) {
    throw std::runtime_error("prompt set is for " + prompts.task + " but the dataset is " + world::to_string(ds.manifest.task));
  }
  const coordinator::Coordinator coord = coord_in ? *coord_in : pretrain_coordinator(cfg, ds);
  model::ModelConfig mc = cfg.model;
  mc.variant = variant;
  const auto eps = ds.pointers();
  const auto norms = data::fit_action_normalizers(eps);
  std::mt19937_64 rng(cfg.seed + 1);
  auto m = std::make_shared<model::FalconModel>(mc, coord, prompts, data::instruction_for(ds.manifest.task), norms, rng);
  const train::FrameStore store = train::build_frame_store(m->coordinator(), eps, norms);

  TrainOutput result;
  result.metrics = train::train_model(*m, store, cfg.train, [](const train::TrainRecord& r) {
    spdlog::info("step {} loss {:.4f} (arm {:.4f} base {:.4f} coord {:.4f}) lr {:.2e}", r.step, r.total, r.arm,
                 r.base, r.coord, r.lr);
  });
  fs::create_directories(out);
  train::write_metrics_csv(result.metrics, out / "metrics.csv");
  json metrics = {{"initial_loss", result.metrics.front().total}, {"final_loss", result.metrics.back().total},
                  {"steps", cfg.train.steps}};
  result.bundle = out / kBundleFile;
  model::save_model(*m, result.bundle,
                    {{"config_hash", cfg.hash()}, {"data_hash", ds.manifest.config_hash},
                     {"variant", model::to_string(variant)}, {"metrics", metrics}});
  write_effective_config(cfg, out);
  result.model = m;
  return result;
}

TrainOutput cmd_train(const RunConfig& cfg, const fs::path& dataset, model::Variant variant, const fs::path& out,
                      const std::optional<fs::path>& coordinator_ckpt) {
  const Dataset ds = load_dataset(cfg, dataset);
  std::optional<coordinator::Coordinator> coord;
  if (coordinator_ckpt) {
    coord = coordinator::load_coordinator(*coordinator_ckpt);
    nlohmann::json cj, mj;
    coordinator::to_json(cj, coord->config());
    coordinator::to_json(mj, cfg.model.coordinator);
    if (cj != mj) throw std::runtime_error("coordinator checkpoint config does not match model.coordinator");
  }
  return train_from_dataset(cfg, ds, variant, out, coord);
}

std::shared_ptr<model::FalconModel> load_bundle(const RunConfig& cfg, const fs::path& bundle) {
  json extra;
  auto m = std::make_shared<model::FalconModel>(model::load_model(bundle, &extra));
  const std::string h = extra.value("config_hash", std::string());
  if (h != cfg.hash()) {
    spdlog::warn("bundle config hash {} differs from the current config {}; proceeding", h, cfg.hash());
  }
  return m;
}

eval::TrialPlan trial_plan(const RunConfig& cfg) {
  eval::TrialPlan p;
  p.task = cfg.eval.task;
  p.regions = cfg.eval.regions;
  p.trials_per_region = cfg.eval.trials_per_region;
  p.seed_base = cfg.eval.seed_base;
  p.threads = cfg.eval.threads;
  p.limits.max_sim_steps = cfg.eval.max_sim_steps;
  return p;
}

std::vector<eval::StageOutcome> run_eval(const RunConfig& cfg, const std::string& source,
                                         const std::shared_ptr<const model::FalconModel>& m,
                                         const std::string& method) {
  const world::World w(cfg.world);
  eval::SourceFactory factory;
  if (source == "policy") {
    if (!m) throw std::invalid_argument("policy evaluation needs a bundle");
    if (m->prompts().task != world::to_string(cfg.eval.task)) {
      throw std::invalid_argument("bundle was trained for " + m->prompts().task + ", eval task is " +
                                  world::to_string(cfg.eval.task));
    }
    factory = [m, method] {
      auto p = std::make_shared<eval::PolicySource>(m, method);
      return eval::SourcePair{p, p};
    };
  } else if (source == "expert") {
    const data::ExpertConfig e = cfg.expert;
    factory = [e] {
      auto p = std::make_shared<eval::ExpertSource>(e);
      return eval::SourcePair{p, p};
    };
  } else if (source == "random") {
    factory = [] {
      auto p = std::make_shared<eval::RandomSource>();
      return eval::SourcePair{p, p};
    };
  } else {
    throw std::invalid_argument("unknown source '" + source + "' (policy, expert, random)");
  }
  return eval::run_trials(factory, method, w, trial_plan(cfg));
}

std::vector<eval::StageOutcome> cmd_eval(const RunConfig& cfg, const std::string& source,
                                         const std::optional<fs::path>& bundle, const fs::path& out) {
  std::shared_ptr<const model::FalconModel> m;
  std::string method = source;
  if (source == "policy") {
    if (!bundle) throw std::invalid_argument("--bundle is required for policy evaluation");
    m = load_bundle(cfg, *bundle);
    const auto v = m->config().variant;
    method = model::to_string(v);
  }
  auto outcomes = run_eval(cfg, source, m, method);
  fs::create_directories(out);
  if (outcomes.empty()) {
    spdlog::warn("eval: no trials requested; writing empty outcomes and no table rows");
    eval::write_outcomes(outcomes, out / "outcomes.jsonl");
    std::ofstream(out / "table.csv") << "task,method,region,stage,success_rate,successes,trials\n";
    std::ofstream(out / "table.txt") << "";
  } else {
    const auto table = eval::aggregate(outcomes, cfg.eval.regions);
    eval::write_results(outcomes, table, out);
    std::fputs(table.text().c_str(), stdout);
  }
  write_effective_config(cfg, out);
  return outcomes;
}

eval::SuccessTable cmd_ablate(const RunConfig& cfg, const fs::path& dataset, const fs::path& out) {
  const Dataset ds = load_dataset(cfg, dataset);
  if (ds.manifest.task != cfg.eval.task) throw std::invalid_argument("ablation: dataset task differs from eval.task");
  const coordinator::Coordinator coord = pretrain_coordinator(cfg, ds);
  std::vector<eval::StageOutcome> all;
  for (auto v : {model::Variant::kFalcon, model::Variant::kNoCl, model::Variant::kNoPhaseCl}) {
    const std::string name = model::to_string(v);
    spdlog::info("ablation: training {}", name);
    const TrainOutput t = train_from_dataset(cfg, ds, v, out / name, coord);
    auto outcomes = run_eval(cfg, "policy", t.model, name);
    eval::write_results(outcomes, eval::aggregate(outcomes, cfg.eval.regions), out / name);
    all.insert(all.end(), outcomes.begin(), outcomes.end());
  }
  const auto table = eval::aggregate(all, cfg.eval.regions);
  eval::write_results(all, table, out);
  write_effective_config(cfg, out);
  std::fputs(table.text().c_str(), stdout);
  return table;
}

llc::TrackingEvaluation cmd_train_llc(const RunConfig& cfg, const fs::path& out) {
  llc::PpoTrainConfig pc;
  pc.iterations = cfg.llc_train.iterations;
  pc.time_budget_s = cfg.llc_train.time_budget_s;
  pc.num_envs = cfg.llc_train.num_envs;
  pc.horizon = cfg.llc_train.horizon;
  pc.hidden = cfg.llc_train.hidden;
  pc.seed = cfg.seed;
  pc.env.commands = cfg.world.commands;
  pc.env.randomization = cfg.world.randomization;
  pc.env.limits = cfg.world.limits;
  auto result = llc::train_ppo(pc, [](const llc::PpoTrainRecord& r) {
    if (r.iteration % 25 == 0) {
      spdlog::info("ppo iter {} reward {:.3f} vel err {:.3f} ori {:.4f}", r.iteration, r.mean_reward,
                   r.mean_velocity_error, r.mean_orientation_penalty);
    }
  });
  fs::create_directories(out);
  llc::save_policy(out / "llc_policy.falcon", result.policy);
  llc::write_training_curve(out / "llc_curve.csv", result.curve);
  llc::LlcEnvConfig eval_env;
  eval_env.commands = cfg.world.commands;
  eval_env.randomization = cfg.world.randomization;
  eval_env.limits = cfg.world.limits;
  const llc::PpoController ctl(result.policy);
  const auto ev = llc::evaluate_tracking(ctl, eval_env, 100, cfg.seed + 7);
  std::ofstream(out / "llc_eval.json") << json{{"episodes", ev.episodes},
                                                {"mean_velocity_error", ev.mean_velocity_error},
                                                {"mean_orientation_penalty", ev.mean_orientation_penalty},
                                                {"mean_reward", ev.mean_reward}}
                                              .dump(2)
                                       << '\n';
  write_effective_config(cfg, out);
  return ev;
}

eval::StageOutcome cmd_replay(const RunConfig& cfg, const fs::path& log_path, const std::optional<fs::path>& bundle) {
  std::ifstream in(log_path);
  if (!in) throw std::runtime_error("cannot read teleop log " + log_path.string());
  const eval::TeleopLog log = eval::TeleopLog::from_json(json::parse(in));
  std::shared_ptr<eval::Source> autonomous;
  if (log.autonomous == "expert") {
    autonomous = std::make_shared<eval::ExpertSource>(cfg.expert);
  } else {
    if (!bundle) throw std::invalid_argument("replay: session used a policy; pass --bundle");
    autonomous = std::make_shared<eval::PolicySource>(load_bundle(cfg, *bundle), log.autonomous);
  }
  eval::ReplaySource human(log);
  const world::World w(cfg.world);
  eval::TrialLimits limits{cfg.eval.max_sim_steps};
  const bool tele_base = log.mode == eval::TeleopMode::kTeleBase;
  eval::StageOutcome o = tele_base ? eval::run_trial(*autonomous, human, w, log.task, log.region, log.seed, limits)
                                   : eval::run_trial(human, *autonomous, w, log.task, log.region, log.seed, limits);
  o.method = log.autonomous;
  return o;
}

}  // namespace falcon::app
