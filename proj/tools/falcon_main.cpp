#include "falcon/app/commands.hpp"
#include "falcon/app/teleop.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace falcon;

namespace {

std::atomic<bool> g_interrupted{false};

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool needs_out) {
  sub->add_option("--config", c.config, "Run config file (default: $FALCON_CONFIG or the bundled default)");
  sub->add_option("--seed", c.seed, "Root seed override");
  sub->add_option("--set", c.overrides, "Config override, e.g. --set train.steps=500")->take_all();
  auto* o = sub->add_option("--out", c.out, "Output directory");
  if (needs_out) o->required();
}

app::RunConfig load(const Common& c) {
  auto overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  return app::load_run_config(app::resolve_config_path(c.config), overrides);
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

int serve(const app::RunConfig& cfg, const std::optional<fs::path>& bundle, const fs::path& out) {
  app::AutonomousFactory factory;
  if (cfg.serve.autonomous == "policy") {
    if (!bundle) throw std::invalid_argument("serve with autonomous=policy needs --bundle");
    std::shared_ptr<const model::FalconModel> m = app::load_bundle(cfg, *bundle);
    factory = [m] { return std::make_shared<eval::PolicySource>(m); };
  } else {
    factory = [&cfg] { return std::make_shared<eval::ExpertSource>(cfg.expert); };
  }
  app::TeleopServer server(cfg, factory, out);
  server.start(static_cast<uint16_t>(cfg.serve.port));
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  spdlog::info("shutting down");
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"falcon: simulated loco-manipulation with coordinated dual-agent policies"};
  cli.require_subcommand(1);

  Common common;
  bool force = false;
  std::string variant = "falcon", dataset, bundle, coordinator, source = "policy", mode, log;
  std::optional<int> port;

  auto* collect = cli.add_subcommand("collect", "Record scripted-expert episodes");
  add_common(collect, common, true);
  collect->add_flag("--force", force, "Overwrite existing episodes");

  auto* pretrain = cli.add_subcommand("pretrain", "Caption-pretrain the coordinator on a dataset");
  add_common(pretrain, common, true);
  pretrain->add_option("--dataset", dataset, "Collection directory")->required();

  auto* trn = cli.add_subcommand("train", "Train arm and base policies");
  add_common(trn, common, true);
  trn->add_option("--dataset", dataset, "Collection directory")->required();
  trn->add_option("--variant", variant, "falcon | no_cl | no_phase_cl");
  trn->add_option("--coordinator", coordinator, "Pretrained coordinator checkpoint");

  auto* ev = cli.add_subcommand("eval", "Run the stage-gated evaluation plan");
  add_common(ev, common, true);
  ev->add_option("--source", source, "policy | expert | random");
  ev->add_option("--bundle", bundle, "Trained bundle (for --source policy)");

  auto* ablate = cli.add_subcommand("ablate", "Train and evaluate all three variants");
  add_common(ablate, common, true);
  ablate->add_option("--dataset", dataset, "Collection directory")->required();

  auto* llc_cmd = cli.add_subcommand("train-llc", "Train the learned low-level controller with PPO");
  add_common(llc_cmd, common, true);

  auto* srv = cli.add_subcommand("serve", "Host the websocket teleoperation service");
  add_common(srv, common, false);
  srv->add_option("--bundle", bundle, "Trained bundle driving the autonomous subsystem");
  srv->add_option("--mode", mode, "Initial operator mode: tele_base | tele_arm");
  srv->add_option("--port", port, "Listen port (0 picks a free port)");

  auto* replay = cli.add_subcommand("replay", "Replay a recorded teleop session");
  add_common(replay, common, false);
  replay->add_option("--log", log, "Session log")->required();
  replay->add_option("--bundle", bundle, "Trained bundle for the autonomous subsystem");

  CLI11_PARSE(cli, argc, argv);

  try {
    if (srv->parsed()) {
      if (!mode.empty()) common.overrides.push_back("serve.mode=" + mode);
      if (port) common.overrides.push_back("serve.port=" + std::to_string(*port));
    }
    const app::RunConfig cfg = load(common);
    const fs::path out = common.out;
    if (collect->parsed()) {
      const auto m = app::cmd_collect(cfg, out, force);
      std::cout << "collected " << m.seeds.size() << " episodes into " << out.string() << "\n";
    } else if (pretrain->parsed()) {
      app::cmd_pretrain(cfg, dataset, out);
      std::cout << "coordinator written to " << (out / app::kCoordinatorFile).string() << "\n";
    } else if (trn->parsed()) {
      const auto r = app::cmd_train(cfg, dataset, model::parse_variant(variant), out, opt_path(coordinator));
      std::cout << "bundle written to " << r.bundle.string() << "\n";
    } else if (ev->parsed()) {
      app::cmd_eval(cfg, source, opt_path(bundle), out);
    } else if (ablate->parsed()) {
      std::cout << app::cmd_ablate(cfg, dataset, out).text();
    } else if (llc_cmd->parsed()) {
      const auto e = app::cmd_train_llc(cfg, out);
      std::cout << "velocity error " << e.mean_velocity_error << " m/s, orientation penalty " << e.mean_orientation_penalty
                << "\n";
    } else if (srv->parsed()) {
      return serve(cfg, opt_path(bundle), common.out.empty() ? fs::path("runs/serve") : out);
    } else if (replay->parsed()) {
      const auto o = app::cmd_replay(cfg, log, opt_path(bundle));
      std::cout << nlohmann::json(o).dump() << "\n";
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
