#pragma once

// Scripted operator for the websocket service: runs the expert on the state
// frames it receives and sends the commands for the selected subsystem.

#include "falcon/app/teleop.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <string>

namespace falcon::testing {

struct SessionResult {
  nlohmann::json outcome;  // payload of the outcome message
  std::filesystem::path log;
  int frames = 0;
  int commands = 0;
};

// `silent` skips sending commands so the watchdog fires.
SessionResult drive_session(const app::RunConfig& cfg, uint16_t port, eval::TeleopMode mode, world::TaskId task,
                            world::Region region, uint64_t seed, bool silent = false,
                            std::chrono::seconds budget = std::chrono::seconds(60));

// Test config: expert autonomy, fast clock, short watchdog.
app::RunConfig teleop_test_config();

}  // namespace falcon::testing
