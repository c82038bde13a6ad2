#pragma once

// Websocket teleoperation service. One simulation thread owns the world; the
// network thread exchanges JSON text frames with a single operator.
//
// Client -> server: {type: hello|select|command|reset, seq, mode?, payload}
//   hello   payload {protocol_version}
//   select  payload {mode}
//   command payload {base: {vx, vy, wz, pitch, height}} or {arm: {x, y, gripper}}
//   reset   payload {task, region, seed, mode?}
// Server -> client: {type: state|outcome|error, seq, ack, payload}
// Server seq strictly increases per connection; ack echoes the last client seq handled.

#include "falcon/app/config.hpp"
#include "falcon/eval/eval.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace falcon::app {

inline constexpr int kProtocolVersion = 1;

using AutonomousFactory = std::function<std::shared_ptr<eval::Source>()>;

class TeleopServer {
 public:
  // outcomes.jsonl and sessions/<n>.json are written under out_dir.
  TeleopServer(const RunConfig& cfg, AutonomousFactory autonomous, std::filesystem::path out_dir);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  // Binds and starts the network and simulation threads. Port 0 picks a free
  // port. Throws std::runtime_error when the port is busy.
  uint16_t start(uint16_t port);
  void stop();
  uint16_t port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocking client used by fixtures and the replay tests.
class TeleopClient {
 public:
  TeleopClient();
  ~TeleopClient();
  void connect(const std::string& host, uint16_t port);
  // Adds a strictly increasing seq unless the message already has one.
  void send(nlohmann::json msg);
  void send_raw(const std::string& text);
  // Next server message, or nullopt when nothing arrives within the timeout.
  std::optional<nlohmann::json> receive(std::chrono::milliseconds timeout);
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Rebuilds the fields of a world state that a state frame carries (base, cabinet,
// arm, drawer, toy, gripper), so a scripted operator can run the expert on it.
world::WorldState state_from_frame(const nlohmann::json& payload, world::TaskId task);

}  // namespace falcon::app
