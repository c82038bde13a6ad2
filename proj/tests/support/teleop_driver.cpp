#include "teleop_driver.hpp"

#include "falcon/data/expert.hpp"

#include <stdexcept>

namespace falcon::testing {

using nlohmann::json;

app::RunConfig teleop_test_config() {
  app::RunConfig cfg;
  cfg.serve.autonomous = "expert";
  cfg.serve.time_scale = 10.0;
  cfg.serve.frame_rate = 100.0;
  cfg.serve.watchdog_s = 1.0;
  cfg.serve.port = 0;
  return cfg;
}

SessionResult drive_session(const app::RunConfig& cfg, uint16_t port, eval::TeleopMode mode, world::TaskId task,
                            world::Region region, uint64_t seed, bool silent, std::chrono::seconds budget) {
  app::TeleopClient client;
  client.connect("127.0.0.1", port);
  client.send({{"type", "hello"}, {"payload", {{"protocol_version", app::kProtocolVersion}}}});
  client.send({{"type", "reset"},
               {"mode", eval::to_string(mode)},
               {"payload", {{"task", world::to_string(task)}, {"region", world::to_string(region)}, {"seed", seed}}}});

  data::ScriptedExpert expert(cfg.world, cfg.expert, seed);
  SessionResult r;
  int64_t trial = -1;
  const auto deadline = std::chrono::steady_clock::now() + budget;
  while (std::chrono::steady_clock::now() < deadline) {
    auto msg = client.receive(std::chrono::milliseconds(200));
    if (!msg) continue;
    const std::string type = msg->at("type").get<std::string>();
    const json& p = msg->at("payload");
    if (type == "error") throw std::runtime_error("server error: " + p.dump());
    if (type == "outcome") {
      if (p.at("trial").get<int64_t>() != trial) continue;
      r.outcome = p;
      r.log = p.at("log").get<std::string>();
      return r;
    }
    // The reset (seq 2) reply names the new trial.
    if (trial < 0) {
      if (msg->at("ack").is_null() || msg->at("ack").get<int64_t>() < 2) continue;
      trial = p.at("trial").get<int64_t>();
    }
    if (p.at("trial").get<int64_t>() != trial || !p.at("active").get<bool>()) continue;
    ++r.frames;
    if (silent) continue;
    const world::WorldState s = app::state_from_frame(p, task);
    json cmd;
    if (mode == eval::TeleopMode::kTeleBase) {
      const llc::BaseCommand b = expert.base(s);
      cmd = {{"base", {{"vx", b.vx}, {"vy", b.vy}, {"wz", b.wz}, {"pitch", b.pitch}, {"height", b.height}}}};
    } else {
      const world::ArmCommand a = expert.arm(s);
      cmd = {{"arm", {{"x", a.ee_target.x()}, {"y", a.ee_target.y()}, {"gripper", a.gripper_close}}}};
    }
    client.send({{"type", "command"}, {"payload", cmd}});
    ++r.commands;
  }
  throw std::runtime_error("teleop session did not finish within the budget");
}

}  // namespace falcon::testing
