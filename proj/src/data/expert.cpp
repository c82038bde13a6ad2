#include "falcon/data/expert.hpp"

#include <algorithm>
#include <cmath>

namespace falcon::data {

using world::ToyAttachment;
using world::Vec2;

std::string to_string(ExpertPhase p) {
  switch (p) {
    case ExpertPhase::kNavigate: return "navigate";
    case ExpertPhase::kOpen: return "open";
    case ExpertPhase::kPick: return "pick";
    case ExpertPhase::kPlace: return "place";
    case ExpertPhase::kClose: return "close";
    case ExpertPhase::kDone: return "done";
    case ExpertPhase::kFailed: return "failed";
  }
  return "unknown";
}

std::string instruction_for(world::TaskId task) {
  return task == world::TaskId::kTask1
             ? "open the drawer then pick up the toy from the cabinet and place it in the drawer"
             : "place the toy in the drawer and close the drawer";
}

namespace {

constexpr double kOpenDone = 0.95;
constexpr double kClosedDone = 0.02;
constexpr double kGripTol = 0.012;
constexpr double kReleaseTol = 0.015;
constexpr double kCrouchReady = 0.255;

bool near_pose(const world::WorldConfig& c, const world::WorldState& s, const ExpertConfig& e) {
  return std::abs(s.base.x - c.manip_pose.x) <= e.near_pos &&
         std::abs(s.base.y - c.manip_pose.y) <= e.near_pos &&
         std::abs(std::remainder(s.base.yaw - c.manip_pose.yaw, 2.0 * M_PI)) <= e.near_yaw;
}

double face_y(const world::WorldConfig& c) { return c.cabinet.y - c.cabinet_depth / 2; }

Vec2 place_point(const world::WorldConfig& c) { return {c.cabinet.x, face_y(c) - 0.12}; }

Vec2 home_target() { return world::ArmCommand{}.ee_target; }

}  // namespace

ExpertPhase expert_phase(const world::WorldConfig& c, const world::WorldState& s) {
  const ExpertConfig e;
  const auto toy = s.toy.attachment;
  if (toy == ToyAttachment::kFree) return ExpertPhase::kFailed;
  if (s.task == world::TaskId::kTask1) {
    if (toy == ToyAttachment::kInDrawer) return ExpertPhase::kDone;
    if (!near_pose(c, s, e)) return ExpertPhase::kNavigate;
    if (toy == ToyAttachment::kOnCabinet) {
      return s.drawer_fraction < kOpenDone ? ExpertPhase::kOpen : ExpertPhase::kPick;
    }
    return ExpertPhase::kPlace;
  }
  if (toy == ToyAttachment::kGrasped) {
    return near_pose(c, s, e) ? ExpertPhase::kPlace : ExpertPhase::kNavigate;
  }
  if (toy == ToyAttachment::kInDrawer) {
    return s.drawer_fraction > kClosedDone ? ExpertPhase::kClose : ExpertPhase::kDone;
  }
  return ExpertPhase::kFailed;
}

llc::BaseCommand expert_base(const world::WorldConfig& c, const world::WorldState& s,
                             const ExpertConfig& e, std::mt19937_64* rng) {
  const Vec2 err = world::world_to_body(s.base, Vec2(c.manip_pose.x, c.manip_pose.y));
  const double eyaw = std::remainder(c.manip_pose.yaw - s.base.yaw, 2.0 * M_PI);
  llc::BaseCommand cmd;
  cmd.vx = std::clamp(e.k_pos * err.x(), -e.max_vx, e.max_vx);
  cmd.vy = std::clamp(e.k_pos * err.y(), -e.max_vy, e.max_vy);
  cmd.wz = std::clamp(e.k_yaw * eyaw, -e.max_wz, e.max_wz);
  cmd.height = e.nominal_height;
  cmd.pitch = 0.0;

  const ExpertPhase phase = expert_phase(c, s);
  if (phase == ExpertPhase::kPick) {
    cmd.pitch = e.lean_pitch;
    cmd.height = e.lean_height;
  } else if (phase == ExpertPhase::kClose) {
    cmd.height = e.crouch_height;
  }
  if (rng && e.base_noise > 0.0) {
    std::uniform_real_distribution<double> u(1.0 - e.base_noise, 1.0 + e.base_noise);
    cmd.vx *= u(*rng);
    cmd.vy *= u(*rng);
    cmd.wz *= u(*rng);
  }
  return cmd;
}

world::ArmCommand expert_arm(const world::WorldConfig& c, const world::WorldState& s,
                             const ExpertConfig& e, std::mt19937_64* rng) {
  const Vec2 ee = world::ee_in_world(c, s);
  const double f = s.drawer_fraction;
  const auto toy = s.toy.attachment;
  const Vec2 toy_pos(s.toy.x, s.toy.y);
  const bool hold = s.gripper_closed;

  // Goals are in world coordinates unless `goal_is_body` is set.
  Vec2 goal = home_target();
  bool goal_is_body = true;
  bool grip = toy == ToyAttachment::kGrasped;
  auto world_goal = [&](const Vec2& g) {
    goal = g;
    goal_is_body = false;
  };

  switch (expert_phase(c, s)) {
    case ExpertPhase::kNavigate:
    case ExpertPhase::kDone:
    case ExpertPhase::kFailed:
      break;
    case ExpertPhase::kOpen:
      if (s.handle_engaged) {
        world_goal(world::handle_position(c, 1.0) - Vec2(0.0, 0.02));
        grip = true;
      } else if (hold) {
        goal = s.arm_target;
        grip = false;
      } else {
        const Vec2 handle = world::handle_position(c, f);
        world_goal(handle);
        grip = (ee - handle).norm() < kGripTol;
      }
      break;
    case ExpertPhase::kPick:
      if (hold) {
        goal = s.arm_target;
        grip = false;
      } else {
        world_goal(toy_pos);
        grip = (ee - toy_pos).norm() < kGripTol;
      }
      break;
    case ExpertPhase::kPlace: {
      const Vec2 p = place_point(c);
      world_goal(p);
      grip = !((ee - p).norm() < kReleaseTol && f >= c.release_min_fraction);
      break;
    }
    case ExpertPhase::kClose: {
      grip = false;
      const Vec2 retract(c.cabinet.x, face_y(c) - c.drawer_travel - 0.06);
      const Vec2 push(c.cabinet.x, face_y(c) + 0.02);
      const bool crouched = s.base.height <= kCrouchReady;
      const bool outside = ee.y() <= world::drawer_front_y(c, f) + 0.005;
      world_goal(crouched && outside && !hold ? push : retract);
      break;
    }
  }

  const Vec2 target_body = goal_is_body ? goal : world::world_to_body(s.base, goal);
  const Vec2 delta = target_body - s.arm_target;
  const double max_step = e.arm_speed * world::kSimDt * world::kSimStepsPerAction;
  const double n = delta.norm();
  Vec2 next = n > max_step ? Vec2(s.arm_target + delta * (max_step / n)) : target_body;
  if (rng && e.arm_noise > 0.0) {
    std::uniform_real_distribution<double> u(-e.arm_noise, e.arm_noise);
    next += Vec2(u(*rng), u(*rng));
  }
  return {next, grip};
}

}  // namespace falcon::data
