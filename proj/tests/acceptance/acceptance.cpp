// Acceptance criteria runner. Each criterion prints exactly one line:
//   PASS <name>: <measurements>   or   FAIL <name>: <measurements>
// and the process exits nonzero on failure.

#include "falcon/app/commands.hpp"
#include "falcon/app/teleop.hpp"
#include "falcon/common/bytes.hpp"
#include "falcon/coordloss/coord_loss.hpp"
#include "falcon/data/dataset.hpp"
#include "falcon/diffusion/diffusion.hpp"
#include "falcon/llc/ppo.hpp"

#include "../support/gradcheck.hpp"
#include "../support/teleop_driver.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace falcon;
using nn::Matrix;
using nn::Var;
using nn::Vector;
using nlohmann::json;

namespace {

struct Result {
  bool pass = true;
  std::vector<std::string> notes;
  void require(bool ok, const std::string& note) {
    pass = pass && ok;
    notes.push_back(ok ? note : "[x] " + note);
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_work;

app::RunConfig default_config() { return app::load_run_config(FALCON_SOURCE_DIR "/configs/default.json"); }

// --- analytic values ---------------------------------------------------------------

Result analytic() {
  Result r;
  const auto t0 = std::chrono::steady_clock::now();

  // Phase head with identical prompt rows: equal logits, so rho is uniform.
  coordinator::PhasePromptSet prompts;
  prompts.task = "task2";
  prompts.phases.resize(4);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  Vector f(16);
  for (auto& x : f) x = n01(rng);
  f.normalize();
  Vector row(16);
  for (auto& x : row) x = n01(rng);
  row.normalize();
  prompts.e_ongoing = row.transpose().replicate(4, 1);
  prompts.e_done = prompts.e_ongoing;
  const auto scores = coordinator::phase_scores(f, prompts);
  double soft_err = 0.0;
  for (double v : scores.rho) soft_err = std::max(soft_err, std::abs(v - 0.25));
  r.require(soft_err <= 1e-12, fmt::format("softmax K=4 max |rho-0.25| {:.1e}", soft_err));

  const Vector c = coordinator::phase_completion(f, prompts, 10.0);
  const Var s0 = nn::sigmoid(nn::constant(Matrix::Zero(1, 1)));
  const bool sigma_exact = s0.item() == 0.5 && (c.array() == 0.5).all();
  r.require(sigma_exact, "sigma(0) == 0.5 exactly");

  double prog_err = 0.0;
  bool k_ok = true;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const int k = 2 + i % 4;
    Vector rho(k), cc(k);
    for (int j = 0; j < k; ++j) {
      rho[j] = u01(rng);
      cc[j] = u01(rng);
    }
    if (i % 5 == 0) rho[k - 1] = rho[0] = 2.0;  // tie goes to the lowest index
    rho /= rho.sum();
    int k_star = 0;
    for (int j = 0; j < k; ++j) {
      if (rho[j] > rho[k_star]) k_star = j;
    }
    const double expect = (k_star + cc[k_star]) / k;
    const auto got = coordinator::progress(rho, cc);
    k_ok = k_ok && got.k_star == k_star;
    prog_err = std::max(prog_err, std::abs(got.p - expect));
  }
  r.require(prog_err <= 1e-12 && k_ok, fmt::format("progress 20 cases max err {:.1e}", prog_err));

  double nce_err = 0.0;
  for (int b : {2, 4, 8}) {
    Matrix e = Matrix::Zero(b, 8);
    e.col(0).setOnes();
    const Var v = nn::constant(e);
    const auto nce = coordloss::info_nce(v, v, v, v, 0.1);
    nce_err = std::max(nce_err, std::abs(nce.obs_to_act.item() - std::log(3.0 * b)));
  }
  r.require(nce_err <= 1e-6, fmt::format("InfoNCE uniform = ln(3B) max err {:.1e}", nce_err));

  double ori = 0.0;
  for (double pitch : {-0.3, 0.0, 0.17}) {
    for (double roll : {-0.1, 0.0, 0.2}) {
      ori = std::max(ori, llc::orientation_penalty(llc::desired_gravity(pitch, roll), pitch, roll));
    }
  }
  r.require(ori == 0.0, fmt::format("orientation penalty at match {:.1e}", ori));
  const llc::Vec3 g = llc::desired_gravity(0.0, 0.0);
  r.require(g == llc::Vec3(0, 0, -1), fmt::format("desired_gravity(0,0) = ({}, {}, {})", g.x(), g.y(), g.z()));

  const double dt = seconds_since(t0);
  r.require(dt < 10.0, fmt::format("{:.2f} s < 10 s", dt));
  return r;
}

// --- gradients ---------------------------------------------------------------------

Result gradient() {
  Result r;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  auto randn = [&](int rows, int cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
    return m;
  };

  {
    const int b = 4, t_obs = 2, horizon = 3;
    coordloss::CoordLossConfig cfg{.tau = 0.2, .proj_dim = 4, .proj_hidden = 8};
    coordloss::CoordinationLoss loss(6, 3 + 5, cfg, rng);
    nn::ParameterSet ps;
    loss.collect(ps, "closs.");
    Var z(randn(b * t_obs, 6), true), arm(randn(b * horizon, 3), true), base(randn(b * horizon, 5), true);
    auto params = ps.vars();
    params.push_back(z);
    params.push_back(arm);
    params.push_back(base);
    const auto lambda = coordloss::sample_derangement(b, rng);
    const auto g = testing::check_gradients(params, [&] {
      return loss.forward(z, t_obs, arm, base, horizon, lambda).coord;
    });
    r.require(g.rel_error <= 1e-4 && g.checked <= 1000,
              fmt::format("contrastive rel {:.1e} ({} params)", g.rel_error, g.checked));
  }
  {
    diffusion::PolicySpec spec;
    spec.action_dim = 3;
    spec.cond_dim = 6;
    spec.horizon = 4;
    spec.t_diff = 8;
    spec.width = 8;
    spec.blocks = 1;
    spec.time_dim = 8;
    const auto policy = diffusion::DiffusionPolicy::make(spec, rng);
    const int n = 3;
    Var cond(randn(n, spec.cond_dim), true);
    const Matrix chunks = randn(n * spec.horizon, spec.action_dim);
    const Matrix noise = randn(n * spec.horizon, spec.action_dim);
    const std::vector<int> t{0, 3, 7};
    auto params = policy.parameters().vars();
    params.push_back(cond);
    const auto g = testing::check_gradients(params, [&] { return policy.training_loss(cond, chunks, t, noise); });
    r.require(g.rel_error <= 1e-4 && g.checked <= 1000,
              fmt::format("diffusion rel {:.1e} ({} params)", g.rel_error, g.checked));
  }
  {
    llc::GaussianPolicy policy(8, rng, -0.5);
    const int n = 16;
    const Matrix states = randn(n, llc::kLlcStateDim) * 0.3;
    const Matrix actions = policy.mean_action(states) + randn(n, llc::kActuationDim) * 0.3;
    Vector old_lp;
    {
      nn::NoGradGuard ng;
      old_lp = policy.log_prob(nn::constant(states), actions).value().col(0);
    }
    // Ratios spread on both sides of the clip band, away from its edges.
    Vector adv(n);
    for (int i = 0; i < n; ++i) {
      old_lp[i] += (i % 4 == 0) ? 0.5 : ((i % 4 == 1) ? -0.5 : 0.05 * (i % 3 - 1));
      adv[i] = n01(rng);
    }
    const auto g = testing::check_gradients(policy.parameters().vars(), [&] {
      return llc::ppo_surrogate(policy, states, actions, old_lp, adv, 0.2);
    });
    r.require(g.rel_error <= 1e-4 && g.checked <= 1000,
              fmt::format("ppo surrogate rel {:.1e} ({} params)", g.rel_error, g.checked));
  }
  const double dt = seconds_since(t0);
  r.require(dt < 120.0, fmt::format("{:.2f} s < 120 s", dt));
  return r;
}

// --- derangements -------------------------------------------------------------------

Result derangement() {
  Result r;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(3);
  long fixed = 0, bad_perm = 0;
  const int per_batch = 2500;
  for (int b : {2, 3, 5, 17}) {
    for (int s = 0; s < per_batch; ++s) {
      const auto l = coordloss::sample_derangement(b, rng);
      std::vector<int> sorted = l;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < b; ++i) {
        if (l[static_cast<size_t>(i)] == i) ++fixed;
        if (sorted[static_cast<size_t>(i)] != i) ++bad_perm;
      }
    }
  }
  r.require(fixed == 0 && bad_perm == 0,
            fmt::format("{} samples over B in {{2,3,5,17}}: {} fixed points", 4 * per_batch, fixed));
  bool threw = false;
  try {
    coordloss::sample_derangement(1, rng);
  } catch (const std::invalid_argument&) {
    threw = true;
  }
  r.require(threw, "B=1 rejected");
  const double dt = seconds_since(t0);
  r.require(dt < 5.0, fmt::format("{:.2f} s < 5 s", dt));
  return r;
}

// --- simulator and IK ----------------------------------------------------------------

std::vector<world::WorldState> random_rollout(const world::World& w, uint64_t seed, int steps) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.2, 0.7), uy(-0.35, 0.35);
  world::WorldState s = w.reset_task(world::TaskId::kTask1, world::kAllRegions[seed % 3], seed);
  std::vector<world::WorldState> out{s};
  llc::BaseCommand b;
  world::ArmCommand a;
  for (int i = 0; i < steps; ++i) {
    if (i % world::kSimStepsPerAction == 0) {
      b = w.config().commands.sample(rng);
      a.ee_target = {ux(rng), uy(rng)};
      a.gripper_close = rng() % 2;
    }
    s = w.step(s, b, a, world::kSimDt);
    out.push_back(s);
  }
  return out;
}

Result sim() {
  Result r;
  const auto t0 = std::chrono::steady_clock::now();
  const world::WorldConfig cfg;
  std::mt19937_64 rng(5);
  const double l1 = cfg.link1, l2 = cfg.link2;
  std::uniform_real_distribution<double> ur(std::abs(l1 - l2) + 1e-6, l1 + l2 - 1e-6), ua(-M_PI, M_PI);
  double ik_err = 0.0;
  bool reachable = true;
  for (int i = 0; i < 10000; ++i) {
    const double rad = ur(rng), ang = ua(rng);
    const world::Vec2 target(rad * std::cos(ang), rad * std::sin(ang));
    const auto ik = world::solve_ik(target, l1, l2);
    reachable = reachable && ik.reachable;
    ik_err = std::max(ik_err, (world::forward_kinematics(ik.joints, l1, l2) - target).norm());
  }
  r.require(reachable && ik_err <= 1e-9, fmt::format("FK(IK) 1e4 targets max err {:.1e} m", ik_err));

  const world::World w(cfg);
  bool det = true;
  for (uint64_t seed : {0, 1, 2}) det = det && random_rollout(w, seed, 1000) == random_rollout(w, seed, 1000);
  r.require(det, "3 seeds x 1000 steps bit-equal");

  // Random fuzzing with the base parked at the manipulation pose so the arm keeps reaching the handle.
  std::uniform_real_distribution<double> ux(0.3, 0.78), uy(-0.25, 0.25), uv(-1.0, 1.0);
  double f_min = 1.0, f_max = 0.0;
  long engaged = 0, interior = 0;
  world::WorldState s;
  llc::BaseCommand b;
  world::ArmCommand a;
  for (long i = 0; i < 100000; ++i) {
    if (i % 2000 == 0) {
      s = w.reset_task(world::TaskId::kTask1, world::Region::kCenter, static_cast<uint64_t>(i));
      s.base.x = cfg.manip_pose.x;
      s.base.y = cfg.manip_pose.y;
      s.base.yaw = cfg.manip_pose.yaw;
      s.drawer_fraction = (i / 2000) % 3 == 0 ? 1.0 : 0.0;
    }
    if (i % world::kSimStepsPerAction == 0) {
      b = llc::BaseCommand{0.1 * uv(rng), 0.1 * uv(rng), 0.2 * uv(rng), 0.3 * uv(rng), 0.3 + 0.08 * uv(rng)};
      b = cfg.commands.clamp(b);
      if (rng() % 3 == 0 || i % 2000 == 0) {
        // Half the targets land near the handle, the rest anywhere in the box.
        const auto h = world::world_to_body(s.base, world::handle_position(cfg, s.drawer_fraction));
        a.ee_target = rng() % 2 ? world::Vec2(h.x() + 0.15 * uv(rng), h.y() + 0.03 * uv(rng))
                                : world::Vec2(ux(rng), uy(rng));
      }
      if (rng() % 8 == 0) a.gripper_close = !a.gripper_close;
    }
    s = w.step(s, b, a, world::kSimDt);
    f_min = std::min(f_min, s.drawer_fraction);
    f_max = std::max(f_max, s.drawer_fraction);
    engaged += s.handle_engaged;
    interior += s.drawer_fraction > 0.0 && s.drawer_fraction < 1.0;
  }
  r.require(f_min >= 0.0 && f_max <= 1.0,
            fmt::format("1e5 fuzz steps drawer in [{:.3f}, {:.3f}], engaged {} steps, {} steps strictly inside",
                        f_min, f_max, engaged, interior));
  const double dt = seconds_since(t0);
  r.require(dt < 60.0, fmt::format("{:.2f} s < 60 s", dt));
  return r;
}

// --- persistence -----------------------------------------------------------------------

Result persistence() {
  Result r;
  const auto t0 = std::chrono::steady_clock::now();
  const world::World w;
  const fs::path dir = g_work / "persistence";
  fs::create_directories(dir);
  int exact = 0, rejected = 0;
  for (int i = 0; i < 10; ++i) {
    data::RecordOptions opt;
    opt.max_steps = 120;
    opt.timestamp = "2026-01-01T00:00:00Z";
    const auto task = i % 2 ? world::TaskId::kTask2 : world::TaskId::kTask1;
    const data::Episode e = data::record_episode(w, task, world::kAllRegions[i % 3], 100 + i, opt);
    const fs::path p = dir / fmt::format("{}.ep", i);
    data::save_episode(e, p);
    const data::Episode back = data::load_episode(p);
    const auto bytes = read_file(p);
    if (back == e && data::encode_episode(back) == bytes) ++exact;
    const std::vector<uint8_t> cut(bytes.begin(), bytes.end() - 1);
    try {
      data::decode_episode(cut);
    } catch (const FormatError&) {
      ++rejected;
    }
  }
  r.require(exact == 10, fmt::format("{}/10 episodes bit-exact", exact));
  r.require(rejected == 10, fmt::format("{}/10 truncations rejected", rejected));
  const double dt = seconds_since(t0);
  r.require(dt < 30.0, fmt::format("{:.2f} s < 30 s", dt));
  return r;
}

// --- LLC ---------------------------------------------------------------------------------

Result llc_tracking() {
  Result r;
  {
    const llc::AnalyticController ctl;
    const llc::DynamicsParams params;
    const llc::BodyLimits limits;
    llc::BodyState body;
    llc::BaseCommand cmd;
    cmd.vx = 0.3;
    llc::Actuation prev;
    const double dt = world::kSimDt;
    double settle = 0.0;
    for (int k = 0; k < 250; ++k) {
      const llc::Actuation u = ctl.actuate(llc::make_llc_state(body, cmd));
      body = llc::integrate_control_period(body, prev, u, params, {}, dt, 4, limits);
      prev = u;
      if (std::abs(body.vx - 0.3) > 0.03) settle = (k + 1) * dt;
    }
    r.require(settle < 2.0, fmt::format("analytic settles in {:.2f} s", settle));
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    llc::PpoTrainConfig pc;
    pc.seed = 0;
    pc.time_budget_s = 600.0;
    const auto result = llc::train_ppo(pc);
    const double train_s = seconds_since(t0);
    const llc::PpoController ctl(result.policy);
    llc::LlcEnvConfig env;
    env.randomize = true;
    const auto e = llc::evaluate_tracking(ctl, env, 100, 4242);
    r.require(train_s <= 600.0, fmt::format("ppo trained {} it in {:.0f} s", result.curve.size(), train_s));
    r.require(e.mean_velocity_error <= 0.1, fmt::format("vel err {:.4f} m/s", e.mean_velocity_error));
    r.require(e.mean_orientation_penalty <= 0.01, fmt::format("ori {:.4f}", e.mean_orientation_penalty));
  }
  return r;
}

// --- end to end -----------------------------------------------------------------------------

fs::path prepared_bundle() { return g_work / "ablate" / "falcon" / app::kBundleFile; }

// Collects the demos and runs the ablation once; later criteria read the artifacts.
Result prepare() {
  Result r;
  const app::RunConfig cfg = default_config();
  const fs::path stamp = g_work / "prepare.json";
  if (fs::exists(stamp)) {
    std::ifstream in(stamp);
    const json j = json::parse(in);
    if (j.value("config_hash", "") == cfg.hash() && fs::exists(prepared_bundle())) {
      r.require(true, "reusing " + g_work.string());
      return r;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  app::cmd_collect(cfg, g_work / "data", true);
  const double collect_s = seconds_since(t0);
  const auto t1 = std::chrono::steady_clock::now();
  app::cmd_ablate(cfg, g_work / "data", g_work / "ablate");
  const double ablate_s = seconds_since(t1);
  std::ofstream(stamp) << json{{"config_hash", cfg.hash()}, {"collect_s", collect_s}, {"ablate_s", ablate_s}}.dump(2);
  r.require(true, fmt::format("collect {:.0f} s, ablation {:.0f} s", collect_s, ablate_s));
  return r;
}

Result e2e() {
  Result r;
  app::RunConfig cfg = default_config();
  std::ifstream in(g_work / "prepare.json");
  if (!in) {
    r.require(false, "missing prepared artifacts (run the prepare step)");
    return r;
  }
  const json stamp = json::parse(in);
  const auto ds = app::load_dataset(cfg, g_work / "data");
  r.require(ds.episodes.size() == 50, fmt::format("{} demos", ds.episodes.size()));

  cfg.eval.task = world::TaskId::kTask2;
  cfg.eval.regions = {world::Region::kCenter};
  cfg.eval.trials_per_region = 20;
  const auto model = app::load_bundle(cfg, prepared_bundle());
  const auto falcon = app::run_eval(cfg, "policy", model, "falcon");
  const auto expert = app::run_eval(cfg, "expert", nullptr, "expert");
  auto rate = [](const std::vector<eval::StageOutcome>& o) {
    return 100.0 * std::count_if(o.begin(), o.end(), [](const auto& x) { return x.success; }) / o.size();
  };
  r.require(rate(falcon) >= 70.0, fmt::format("falcon task2/center {:.1f}% (20 trials)", rate(falcon)));
  r.require(rate(expert) >= 95.0, fmt::format("expert {:.1f}%", rate(expert)));
  const double ablate_s = stamp.at("ablate_s").get<double>();
  r.require(ablate_s <= 6 * 3600.0, fmt::format("pretrain+train+eval of 3 variants {:.0f} s", ablate_s));

  const auto table_outcomes = eval::read_outcomes(g_work / "ablate" / "outcomes.jsonl");
  const auto table = eval::aggregate(table_outcomes, {world::kAllRegions.begin(), world::kAllRegions.end()});
  std::map<std::string, int> cells;
  bool populated = true;
  for (const auto& row : table.rows) {
    ++cells[row.method];
    populated = populated && row.trials > 0;
  }
  const size_t stages = eval::stage_names(world::TaskId::kTask2).size();
  bool shape = cells.size() == 3;
  for (const auto& [m, n] : cells) shape = shape && n == static_cast<int>(3 * stages);
  r.require(shape && populated, fmt::format("ablation table {} rows (3 variants x 3 regions x {} stages)",
                                            table.rows.size(), stages));
  return r;
}

Result phase_head() {
  Result r;
  const app::RunConfig cfg = default_config();
  if (!fs::exists(prepared_bundle())) {
    r.require(false, "missing prepared bundle (run the prepare step)");
    return r;
  }
  const model::FalconModel m = model::load_model(prepared_bundle());
  const world::World w(cfg.world);
  auto p_of = [&](const world::WorldState& s) {
    return m.coordinator().encode_frame(w.render_views(s), m.prompts(), m.instruction()).p;
  };
  int rising = 0, success = 0;
  const int n = 50;
  for (int i = 0; i < n; ++i) {
    const uint64_t seed = 5000 + i;
    eval::ExpertSource expert(cfg.expert);
    world::WorldState last;
    eval::TrialHooks hooks;
    hooks.on_sim_step = [&](const world::WorldState& s) { last = s; };
    const auto o = eval::run_trial(expert, expert, w, world::TaskId::kTask2, world::Region::kCenter, seed,
                                   {cfg.eval.max_sim_steps}, hooks);
    if (!o.success) continue;
    ++success;
    if (p_of(last) > p_of(w.reset_task(world::TaskId::kTask2, world::Region::kCenter, seed))) ++rising;
  }
  r.require(rising >= 45, fmt::format("p(final) > p(first) in {}/{} episodes ({} expert successes)", rising, n,
                                      success));
  return r;
}

// --- teleop ----------------------------------------------------------------------------------

Result teleop() {
  Result r;
  const app::RunConfig cfg = testing::teleop_test_config();
  const fs::path out = g_work / "teleop";
  fs::remove_all(out);
  app::TeleopServer server(cfg, [&cfg] { return std::make_shared<eval::ExpertSource>(cfg.expert); }, out);
  const uint16_t port = server.start(0);
  int equal = 0;
  const int fixtures = 10;
  for (int i = 0; i < fixtures; ++i) {
    const auto mode = i < 5 ? eval::TeleopMode::kTeleBase : eval::TeleopMode::kTeleArm;
    const auto task = i % 2 ? world::TaskId::kTask1 : world::TaskId::kTask2;
    const auto region = world::kAllRegions[i % 3];
    const auto live = testing::drive_session(cfg, port, mode, task, region, 300 + i);
    const auto live_outcome = live.outcome.get<eval::StageOutcome>();
    const auto replayed = app::cmd_replay(cfg, live.log, std::nullopt);
    if (replayed == live_outcome) ++equal;
    else spdlog::warn("fixture {}: live {} replay {}", i, json(live_outcome).dump(), json(replayed).dump());
  }
  r.require(equal == fixtures, fmt::format("replay == live {}/{}", equal, fixtures));
  const auto silent = testing::drive_session(cfg, port, eval::TeleopMode::kTeleBase, world::TaskId::kTask2,
                                             world::Region::kCenter, 7, true);
  const std::string failure = silent.outcome.value("failure", "");
  r.require(!silent.outcome.value("success", true) && failure == eval::kTeleopTimeout,
            "watchdog outcome '" + failure + "'");
  server.stop();
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"falcon acceptance criteria"};
  std::string name;
  std::string work = FALCON_ACCEPTANCE_WORK;
  cli.add_option("criterion", name, "analytic | gradient | derangement | sim | persistence | llc | prepare | e2e | "
                                    "phase | teleop | all")
      ->required();
  cli.add_option("--work", work, "Directory for acceptance artifacts");
  CLI11_PARSE(cli, argc, argv);
  g_work = work;
  fs::create_directories(g_work);
  spdlog::set_level(spdlog::level::warn);

  const std::vector<std::pair<std::string, std::function<Result()>>> criteria = {
      {"analytic", analytic}, {"gradient", gradient}, {"derangement", derangement}, {"sim", sim},
      {"persistence", persistence}, {"llc", llc_tracking}, {"prepare", prepare}, {"e2e", e2e},
      {"phase", phase_head}, {"teleop", teleop}};
  bool all_pass = true, found = false;
  for (const auto& [n, fn] : criteria) {
    if (name != "all" && name != n) continue;
    found = true;
    Result res;
    try {
      res = fn();
    } catch (const std::exception& e) {
      res.require(false, std::string("exception: ") + e.what());
    }
    std::string notes;
    for (const auto& s : res.notes) notes += (notes.empty() ? "" : "; ") + s;
    std::cout << (res.pass ? "PASS " : "FAIL ") << n << ": " << notes << std::endl;
    all_pass = all_pass && res.pass;
  }
  if (!found) {
    std::cerr << "unknown criterion '" << name << "'\n";
    return 2;
  }
  return all_pass ? 0 : 1;
}
