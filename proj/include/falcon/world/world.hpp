#pragma once

// Desk-scale planar loco-manipulation world: a legged base with a 2-link arm,
// a cabinet whose top drawer can be pulled/pushed, and one toy.

#include "falcon/llc/llc.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace falcon::world {

using Vec2 = Eigen::Vector2d;

enum class TaskId { kTask1, kTask2 };
enum class Region { kCenter, kLeft, kRight };
enum class ToyAttachment : uint8_t { kFree, kGrasped, kInDrawer, kOnCabinet };
enum class LlcBackend { kIdeal, kAnalytic, kPpo };

TaskId parse_task(const std::string& s);
Region parse_region(const std::string& s);
LlcBackend parse_llc_backend(const std::string& s);
std::string to_string(TaskId t);
std::string to_string(Region r);
std::string to_string(ToyAttachment a);
std::string to_string(LlcBackend b);
inline constexpr std::array<Region, 3> kAllRegions = {Region::kCenter, Region::kLeft,
                                                      Region::kRight};

struct Rect {
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  Rect inflated(double m) const { return {x0 - m, x1 + m, y0 - m, y1 + m}; }
};

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  bool operator==(const Pose2&) const = default;
};

struct WorldConfig {
  // Scene geometry (meters). The cabinet front faces -y.
  Pose2 cabinet{0.0, 0.0, 0.0};
  double cabinet_width = 0.8;
  double cabinet_depth = 0.5;
  double cabinet_height = 0.5;
  double drawer_width = 0.5;
  double drawer_travel = 0.3;
  double drawer_z0 = 0.33;
  double drawer_z1 = 0.47;
  double handle_offset = 0.03;
  double handle_half_width = 0.06;
  double toy_radius = 0.03;
  double toy_lateral_range = 0.12;
  double toy_depth_on_cabinet = 0.13;  // distance behind the front face
  Rect room{-2.5, 2.5, -3.0, 1.2};

  // Base and arm.
  double base_length = 0.5;
  double base_width = 0.3;
  double collision_margin = 0.3;
  double link1 = 0.30;
  double link2 = 0.25;
  double arm_mount_x = 0.2;
  double reach_per_pitch = 0.3;   // arm-base forward shift per sin(pitch)
  double reach_per_height = 0.5;  // arm-base forward shift per meter of height
  double joint_rate = 3.0;        // rad/s per joint
  double ee_height = 0.42;

  // Contact rules.
  double capture_radius = 0.04;
  double release_min_fraction = 0.3;
  double push_max_height = 0.26;

  // Predicate thresholds.
  double drawer_open_threshold = 0.9;
  double drawer_closed_threshold = 0.05;
  Pose2 manip_pose{0.0, -0.9, 1.5707963267948966};
  double manip_tol_x = 0.06;
  double manip_tol_y = 0.06;
  double manip_tol_yaw = 0.15;

  // Initial-pose regions and heading spread around +y.
  Rect region_center{-0.3, 0.3, -2.3, -1.9};
  Rect region_left{-1.5, -0.9, -2.3, -1.7};
  Rect region_right{0.9, 1.5, -2.3, -1.7};
  double heading_spread = 0.5;

  // Base tracking layer.
  LlcBackend llc_backend = LlcBackend::kAnalytic;
  std::string llc_policy_path;
  llc::DynamicsParams dynamics{.disturbance_std = 0.05};
  bool randomize_dynamics = false;
  llc::RandomizationRanges randomization;
  llc::CommandRanges commands;
  llc::BodyLimits limits;
  int llc_substeps = 4;
  int arm_substeps = 2;

  // Rendering.
  int raster = 96;

  const Rect& region(Region r) const;
  Rect cabinet_rect() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
// Overrides fields present in `j`; unknown keys throw.
void update_from_json(WorldConfig& c, const nlohmann::json& j);

struct ArmState {
  std::array<double, 2> joints{0.3, 1.2};
  bool operator==(const ArmState&) const = default;
};

struct ToyState {
  double x = 0.0;
  double y = 0.0;
  ToyAttachment attachment = ToyAttachment::kFree;
  // Offset from the drawer front while in the drawer.
  double drawer_dx = 0.0;
  double drawer_dy = 0.0;
  bool operator==(const ToyState&) const = default;
};

struct StepDiagnostics {
  bool arm_target_clamped = false;
  bool collision = false;
  bool operator==(const StepDiagnostics&) const = default;
};

struct WorldState {
  TaskId task = TaskId::kTask1;
  double time = 0.0;
  int64_t steps = 0;
  llc::BodyState base;
  llc::BaseCommand last_cmd;
  llc::Actuation last_actuation;
  llc::DynamicsParams dynamics;
  ArmState arm;
  Vec2 arm_target{0.45, 0.0};  // base frame, last commanded
  bool gripper_closed = false;
  double drawer_fraction = 0.0;
  bool handle_engaged = false;
  ToyState toy;
  Pose2 cabinet;
  uint64_t rng_seed = 0;
  uint64_t rng_counter = 0;
  StepDiagnostics diagnostics;

  bool operator==(const WorldState&) const;
};

std::vector<uint8_t> encode_state(const WorldState& s);
WorldState decode_state(std::span<const uint8_t> bytes);

// --- kinematics ------------------------------------------------------------------

struct IkResult {
  std::array<double, 2> joints{};
  bool reachable = false;
};

Vec2 forward_kinematics(const std::array<double, 2>& q, double l1, double l2);
// Closed-form planar IK in the arm frame; elbow-down branch (q2 >= 0).
IkResult solve_ik(const Vec2& target, double l1, double l2);
// Nearest point of the reachable annulus.
Vec2 clamp_to_workspace(const Vec2& target, double l1, double l2);

// Arm-base position in the base frame, shifted by body pitch and height.
Vec2 arm_base_in_body(const WorldConfig& c, const llc::BodyState& base);
Vec2 ee_in_body(const WorldConfig& c, const WorldState& s);
Vec2 body_to_world(const llc::BodyState& base, const Vec2& p);
Vec2 world_to_body(const llc::BodyState& base, const Vec2& p);
Vec2 ee_in_world(const WorldConfig& c, const WorldState& s);

double drawer_front_y(const WorldConfig& c, double fraction);
Vec2 handle_position(const WorldConfig& c, double fraction);
// Open part of the drawer (outside the cabinet body), in world coordinates.
Rect drawer_opening(const WorldConfig& c, double fraction);

// --- observations ---------------------------------------------------------------

inline constexpr int kProprioDim = 14;

struct Raster {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;  // H*W*3, row-major
  bool operator==(const Raster&) const = default;
};

struct ObservationBundle {
  Raster wrist;
  Raster body;
  Raster head;
  std::array<double, kProprioDim> proprio{};
  std::string instruction;
};

std::array<double, kProprioDim> proprio_vector(const WorldConfig& c, const WorldState& s);

struct Predicates {
  bool at_manip_pose = false;
  bool drawer_open = false;
  bool drawer_closed = false;
  bool toy_grasped = false;
  bool toy_in_drawer = false;
};

struct ArmCommand {
  Vec2 ee_target{0.45, 0.0};  // base frame
  bool gripper_close = false;
};

class World {
 public:
  explicit World(WorldConfig config = {});
  World(WorldConfig config, std::shared_ptr<const llc::Controller> controller);

  WorldState reset_task(TaskId task, Region region, uint64_t seed) const;
  WorldState step(const WorldState& s, const llc::BaseCommand& base_cmd, const ArmCommand& arm,
                  double dt) const;
  ObservationBundle render_views(const WorldState& s) const;
  Predicates object_predicates(const WorldState& s) const;

  const WorldConfig& config() const { return config_; }
  const llc::Controller* controller() const { return controller_.get(); }

 private:
  void step_base(WorldState& s, const llc::BaseCommand& cmd, double dt) const;
  void step_arm(WorldState& s, const ArmCommand& arm, double dt) const;
  void resolve_collision(WorldState& s) const;

  WorldConfig config_;
  std::shared_ptr<const llc::Controller> controller_;
};

// Builds the tracking controller named by the config (nullptr for the ideal backend).
std::shared_ptr<const llc::Controller> make_controller(const WorldConfig& c);

inline constexpr double kSimDt = 0.02;
// High-level commands are held for this many sim steps (10 Hz).
inline constexpr int kSimStepsPerAction = 5;

}  // namespace falcon::world
