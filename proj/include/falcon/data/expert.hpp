#pragma once

// Ground-truth scripted experts for both tasks. The base and arm halves are
// separate stateless functions of the world state, so either can stand in for
// one subsystem while a learned policy drives the other.

#include "falcon/world/world.hpp"

#include <random>
#include <string>

namespace falcon::data {

enum class ExpertPhase { kNavigate, kOpen, kPick, kPlace, kClose, kDone, kFailed };
std::string to_string(ExpertPhase p);

struct ExpertConfig {
  double base_noise = 0.10;  // uniform multiplicative noise on vx, vy, wz
  double arm_noise = 0.01;   // uniform additive noise on ee targets (m)
  double arm_speed = 0.4;    // m/s cap on target motion
  double k_pos = 1.2;
  double k_yaw = 2.0;
  double max_vx = 0.35;
  double max_vy = 0.25;
  double max_wz = 0.6;
  double near_pos = 0.10;  // arm starts manipulating inside this box
  double near_yaw = 0.20;
  double lean_pitch = 0.28;
  double lean_height = 0.37;
  double crouch_height = 0.24;
  double nominal_height = 0.30;
};

ExpertPhase expert_phase(const world::WorldConfig& c, const world::WorldState& s);

// Pass rng == nullptr (or zero noise) for the noise-free command.
llc::BaseCommand expert_base(const world::WorldConfig& c, const world::WorldState& s,
                             const ExpertConfig& e, std::mt19937_64* rng);
world::ArmCommand expert_arm(const world::WorldConfig& c, const world::WorldState& s,
                             const ExpertConfig& e, std::mt19937_64* rng);

class ScriptedExpert {
 public:
  ScriptedExpert(const world::WorldConfig& c, ExpertConfig e, uint64_t seed)
      : world_(c), cfg_(e), rng_(seed ^ 0xE7E7E7ULL) {}

  llc::BaseCommand base(const world::WorldState& s) { return expert_base(world_, s, cfg_, &rng_); }
  world::ArmCommand arm(const world::WorldState& s) { return expert_arm(world_, s, cfg_, &rng_); }
  const ExpertConfig& config() const { return cfg_; }

 private:
  world::WorldConfig world_;
  ExpertConfig cfg_;
  std::mt19937_64 rng_;
};

// Task instruction text given to the coordinator.
std::string instruction_for(world::TaskId task);

}  // namespace falcon::data
