#include "falcon/world/world.hpp"

#include "falcon/common/bytes.hpp"
#include "falcon/llc/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace falcon::world {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double wrap_angle(double a) { return std::remainder(a, 2.0 * M_PI); }

std::mt19937_64 step_rng(WorldState& s) {
  return std::mt19937_64(splitmix64(s.rng_seed * 0x100000001B3ULL + s.rng_counter++));
}

}  // namespace

TaskId parse_task(const std::string& s) {
  if (s == "task1") return TaskId::kTask1;
  if (s == "task2") return TaskId::kTask2;
  throw std::invalid_argument("unknown task '" + s + "'");
}

Region parse_region(const std::string& s) {
  if (s == "center") return Region::kCenter;
  if (s == "left") return Region::kLeft;
  if (s == "right") return Region::kRight;
  throw std::invalid_argument("unknown region '" + s + "'");
}

LlcBackend parse_llc_backend(const std::string& s) {
  if (s == "ideal") return LlcBackend::kIdeal;
  if (s == "analytic") return LlcBackend::kAnalytic;
  if (s == "ppo") return LlcBackend::kPpo;
  throw std::invalid_argument("unknown llc backend '" + s + "'");
}

std::string to_string(TaskId t) { return t == TaskId::kTask1 ? "task1" : "task2"; }

std::string to_string(Region r) {
  switch (r) {
    case Region::kCenter:
      return "center";
    case Region::kLeft:
      return "left";
    case Region::kRight:
      return "right";
  }
  return "?";
}

std::string to_string(ToyAttachment a) {
  switch (a) {
    case ToyAttachment::kFree:
      return "free";
    case ToyAttachment::kGrasped:
      return "grasped";
    case ToyAttachment::kInDrawer:
      return "in_drawer";
    case ToyAttachment::kOnCabinet:
      return "on_cabinet";
  }
  return "?";
}

std::string to_string(LlcBackend b) {
  switch (b) {
    case LlcBackend::kIdeal:
      return "ideal";
    case LlcBackend::kAnalytic:
      return "analytic";
    case LlcBackend::kPpo:
      return "ppo";
  }
  return "?";
}

const Rect& WorldConfig::region(Region r) const {
  switch (r) {
    case Region::kCenter:
      return region_center;
    case Region::kLeft:
      return region_left;
    case Region::kRight:
      return region_right;
  }
  throw std::invalid_argument("unknown region");
}

Rect WorldConfig::cabinet_rect() const {
  return {cabinet.x - cabinet_width / 2, cabinet.x + cabinet_width / 2,
          cabinet.y - cabinet_depth / 2, cabinet.y + cabinet_depth / 2};
}

void WorldConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid world config: ") + what);
  };
  require(link1 > 0 && link2 > 0, "link lengths must be positive");
  require(drawer_travel > 0 && drawer_width > 0 && drawer_width <= cabinet_width, "drawer size");
  require(capture_radius > 0, "capture_radius must be positive");
  require(llc_substeps >= 1 && arm_substeps >= 1, "substeps must be >= 1");
  require(raster >= 8, "raster must be >= 8");
  require(drawer_closed_threshold < drawer_open_threshold, "drawer thresholds");
  require(limits.height.lo < limits.height.hi && limits.pitch.lo < limits.pitch.hi,
          "body limits");
  require(joint_rate > 0, "joint_rate must be positive");
  require(llc_backend != LlcBackend::kPpo || !llc_policy_path.empty(),
          "ppo backend needs llc_policy_path");
}

bool WorldState::operator==(const WorldState& o) const {
  return encode_state(*this) == encode_state(o);
}

std::vector<uint8_t> encode_state(const WorldState& s) {
  ByteWriter w;
  w.put<uint8_t>(static_cast<uint8_t>(s.task));
  w.put(s.time);
  w.put(s.steps);
  const auto& b = s.base;
  for (double v : {b.x, b.y, b.yaw, b.vx, b.vy, b.wz, b.height, b.height_rate, b.pitch,
                   b.pitch_rate}) {
    w.put(v);
  }
  for (double v : s.last_cmd.as_array()) w.put(v);
  for (double v : s.last_actuation.u) w.put(v);
  for (double v : {s.dynamics.mass_scale, s.dynamics.drag, s.dynamics.body_damping,
                   s.dynamics.disturbance_std}) {
    w.put(v);
  }
  w.put(s.arm.joints[0]);
  w.put(s.arm.joints[1]);
  w.put(s.arm_target.x());
  w.put(s.arm_target.y());
  w.put<uint8_t>(s.gripper_closed);
  w.put(s.drawer_fraction);
  w.put<uint8_t>(s.handle_engaged);
  w.put(s.toy.x);
  w.put(s.toy.y);
  w.put<uint8_t>(static_cast<uint8_t>(s.toy.attachment));
  w.put(s.toy.drawer_dx);
  w.put(s.toy.drawer_dy);
  w.put(s.cabinet.x);
  w.put(s.cabinet.y);
  w.put(s.cabinet.yaw);
  w.put(s.rng_seed);
  w.put(s.rng_counter);
  w.put<uint8_t>(s.diagnostics.arm_target_clamped);
  w.put<uint8_t>(s.diagnostics.collision);
  return std::move(w.bytes());
}

WorldState decode_state(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  WorldState s;
  const auto task = r.get<uint8_t>("task");
  if (task > 1) throw FormatError("invalid task id", 0);
  s.task = static_cast<TaskId>(task);
  s.time = r.get<double>("time");
  s.steps = r.get<int64_t>("steps");
  auto& b = s.base;
  for (double* v : {&b.x, &b.y, &b.yaw, &b.vx, &b.vy, &b.wz, &b.height, &b.height_rate, &b.pitch,
                    &b.pitch_rate}) {
    *v = r.get<double>("base");
  }
  std::array<double, 5> cmd{};
  for (auto& v : cmd) v = r.get<double>("command");
  s.last_cmd = llc::BaseCommand::from_array(cmd);
  for (auto& v : s.last_actuation.u) v = r.get<double>("actuation");
  for (double* v : {&s.dynamics.mass_scale, &s.dynamics.drag, &s.dynamics.body_damping,
                    &s.dynamics.disturbance_std}) {
    *v = r.get<double>("dynamics");
  }
  s.arm.joints[0] = r.get<double>("arm");
  s.arm.joints[1] = r.get<double>("arm");
  s.arm_target.x() = r.get<double>("arm target");
  s.arm_target.y() = r.get<double>("arm target");
  s.gripper_closed = r.get<uint8_t>("gripper") != 0;
  s.drawer_fraction = r.get<double>("drawer");
  s.handle_engaged = r.get<uint8_t>("handle") != 0;
  s.toy.x = r.get<double>("toy");
  s.toy.y = r.get<double>("toy");
  const auto att = r.get<uint8_t>("toy attachment");
  if (att > 3) throw FormatError("invalid toy attachment", r.position() - 1);
  s.toy.attachment = static_cast<ToyAttachment>(att);
  s.toy.drawer_dx = r.get<double>("toy");
  s.toy.drawer_dy = r.get<double>("toy");
  s.cabinet.x = r.get<double>("cabinet");
  s.cabinet.y = r.get<double>("cabinet");
  s.cabinet.yaw = r.get<double>("cabinet");
  s.rng_seed = r.get<uint64_t>("rng");
  s.rng_counter = r.get<uint64_t>("rng");
  s.diagnostics.arm_target_clamped = r.get<uint8_t>("diagnostics") != 0;
  s.diagnostics.collision = r.get<uint8_t>("diagnostics") != 0;
  if (r.remaining() != 0) throw FormatError("trailing bytes in world state", r.position());
  return s;
}

// --- kinematics ------------------------------------------------------------------

Vec2 forward_kinematics(const std::array<double, 2>& q, double l1, double l2) {
  return {l1 * std::cos(q[0]) + l2 * std::cos(q[0] + q[1]),
          l1 * std::sin(q[0]) + l2 * std::sin(q[0] + q[1])};
}

IkResult solve_ik(const Vec2& target, double l1, double l2) {
  IkResult r;
  const double d2 = target.squaredNorm();
  const double d = std::sqrt(d2);
  if (!std::isfinite(d) || d > l1 + l2 || d < std::abs(l1 - l2)) return r;
  const double c2 = std::clamp((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double q2 = std::acos(c2);
  const double q1 =
      std::atan2(target.y(), target.x()) - std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));
  r.joints = {wrap_angle(q1), q2};
  r.reachable = true;
  return r;
}

Vec2 clamp_to_workspace(const Vec2& target, double l1, double l2) {
  const double lo = std::abs(l1 - l2), hi = l1 + l2;
  const double d = target.norm();
  if (d >= lo && d <= hi) return target;
  if (d < 1e-12) return Vec2(std::max(lo, 1e-9), 0.0);
  return target * (std::clamp(d, lo, hi) / d);
}

Vec2 arm_base_in_body(const WorldConfig& c, const llc::BodyState& base) {
  const double shift = c.reach_per_pitch * std::sin(base.pitch) +
                       c.reach_per_height * (base.height - llc::kNominalHeight);
  return {c.arm_mount_x + shift, 0.0};
}

Vec2 ee_in_body(const WorldConfig& c, const WorldState& s) {
  return arm_base_in_body(c, s.base) + forward_kinematics(s.arm.joints, c.link1, c.link2);
}

Vec2 body_to_world(const llc::BodyState& base, const Vec2& p) {
  const double cy = std::cos(base.yaw), sy = std::sin(base.yaw);
  return {base.x + cy * p.x() - sy * p.y(), base.y + sy * p.x() + cy * p.y()};
}

Vec2 world_to_body(const llc::BodyState& base, const Vec2& p) {
  const double cy = std::cos(base.yaw), sy = std::sin(base.yaw);
  const double dx = p.x() - base.x, dy = p.y() - base.y;
  return {cy * dx + sy * dy, -sy * dx + cy * dy};
}

Vec2 ee_in_world(const WorldConfig& c, const WorldState& s) {
  return body_to_world(s.base, ee_in_body(c, s));
}

double drawer_front_y(const WorldConfig& c, double fraction) {
  return c.cabinet.y - c.cabinet_depth / 2 - c.drawer_travel * fraction;
}

Vec2 handle_position(const WorldConfig& c, double fraction) {
  return {c.cabinet.x, drawer_front_y(c, fraction) - c.handle_offset};
}

Rect drawer_opening(const WorldConfig& c, double fraction) {
  return {c.cabinet.x - c.drawer_width / 2, c.cabinet.x + c.drawer_width / 2,
          drawer_front_y(c, fraction), c.cabinet.y - c.cabinet_depth / 2};
}

std::array<double, kProprioDim> proprio_vector(const WorldConfig& c, const WorldState& s) {
  const Vec2 ee = ee_in_body(c, s);
  const auto& b = s.base;
  return {b.x,           b.y,          std::cos(b.yaw), std::sin(b.yaw), b.height,
          b.pitch,       b.vx,         b.vy,            b.wz,            s.arm.joints[0],
          s.arm.joints[1], ee.x(),     ee.y(),          s.gripper_closed ? 1.0 : 0.0};
}

// --- world ------------------------------------------------------------------------

std::shared_ptr<const llc::Controller> make_controller(const WorldConfig& c) {
  switch (c.llc_backend) {
    case LlcBackend::kIdeal:
      return nullptr;
    case LlcBackend::kAnalytic:
      return std::make_shared<llc::AnalyticController>();
    case LlcBackend::kPpo:
      return std::make_shared<llc::PpoController>(llc::load_policy(c.llc_policy_path));
  }
  return nullptr;
}

World::World(WorldConfig config) : config_(std::move(config)) {
  config_.validate();
  controller_ = make_controller(config_);
}

World::World(WorldConfig config, std::shared_ptr<const llc::Controller> controller)
    : config_(std::move(config)), controller_(std::move(controller)) {
  config_.validate();
}

WorldState World::reset_task(TaskId task, Region region, uint64_t seed) const {
  std::mt19937_64 rng(splitmix64(seed ^ 0xFA1C0ULL));
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const auto& c = config_;
  const Rect& r = c.region(region);

  WorldState s;
  s.task = task;
  s.rng_seed = seed;
  s.cabinet = c.cabinet;
  s.base.x = uniform(r.x0, r.x1);
  s.base.y = uniform(r.y0, r.y1);
  s.base.yaw = M_PI / 2 + uniform(-c.heading_spread, c.heading_spread);
  s.dynamics = c.randomize_dynamics ? c.randomization.sample(rng, c.dynamics.body_damping)
                                    : c.dynamics;

  const Vec2 home = s.arm_target - arm_base_in_body(c, s.base);
  s.arm.joints = solve_ik(home, c.link1, c.link2).joints;

  if (task == TaskId::kTask1) {
    s.drawer_fraction = 0.0;
    s.toy.attachment = ToyAttachment::kOnCabinet;
    s.toy.x = c.cabinet.x + uniform(-c.toy_lateral_range, c.toy_lateral_range);
    s.toy.y = c.cabinet.y - c.cabinet_depth / 2 + c.toy_depth_on_cabinet;
  } else {
    s.drawer_fraction = uniform(0.0, 1.0) < 0.5 ? 0.5 : 1.0;
    s.toy.attachment = ToyAttachment::kGrasped;
    s.gripper_closed = true;
    const Vec2 ee = ee_in_world(c, s);
    s.toy.x = ee.x();
    s.toy.y = ee.y();
  }
  return s;
}

void World::step_base(WorldState& s, const llc::BaseCommand& cmd, double dt) const {
  auto rng = step_rng(s);
  const auto& c = config_;
  if (!controller_) {
    // Ideal tracking: commanded velocities are executed directly, plus noise.
    std::normal_distribution<double> n(0.0, 1.0);
    const double sd = s.dynamics.disturbance_std * 0.1;
    auto& b = s.base;
    b.vx = cmd.vx + (sd > 0 ? sd * n(rng) : 0.0);
    b.vy = cmd.vy + (sd > 0 ? sd * n(rng) : 0.0);
    b.wz = cmd.wz + (sd > 0 ? sd * n(rng) : 0.0);
    const double cy = std::cos(b.yaw), sy = std::sin(b.yaw);
    b.x += (cy * b.vx - sy * b.vy) * dt;
    b.y += (sy * b.vx + cy * b.vy) * dt;
    b.yaw = wrap_angle(b.yaw + b.wz * dt);
    b.height_rate = (c.limits.height.clamp(cmd.height) - b.height) / dt;
    b.pitch_rate = (c.limits.pitch.clamp(cmd.pitch) - b.pitch) / dt;
    b.height = c.limits.height.clamp(cmd.height);
    b.pitch = c.limits.pitch.clamp(cmd.pitch);
  } else {
    const llc::Actuation u = controller_->actuate(llc::make_llc_state(s.base, cmd));
    const llc::DisturbanceDraw d = llc::sample_disturbance(s.dynamics, rng);
    s.base = llc::integrate_control_period(s.base, s.last_actuation, u, s.dynamics, d, dt,
                                           c.llc_substeps, c.limits);
    s.last_actuation = u;
  }
  s.last_cmd = cmd;
}

void World::resolve_collision(WorldState& s) const {
  const auto& c = config_;
  bool hit = false;
  const Rect cab = c.cabinet_rect().inflated(c.collision_margin);
  const Rect opening = drawer_opening(c, s.drawer_fraction);
  const Rect drawer =
      Rect{opening.x0, opening.x1, opening.y0, opening.y1}.inflated(c.collision_margin);
  for (int pass = 0; pass < 2; ++pass) {
    for (const Rect& r : {cab, drawer}) {
      auto& b = s.base;
      if (!r.contains(b.x, b.y)) continue;
      hit = true;
      const double pen[4] = {b.x - r.x0, r.x1 - b.x, b.y - r.y0, r.y1 - b.y};
      const int k = static_cast<int>(std::min_element(pen, pen + 4) - pen);
      constexpr double kEps = 1e-9;
      if (k == 0) b.x = r.x0 - kEps;
      if (k == 1) b.x = r.x1 + kEps;
      if (k == 2) b.y = r.y0 - kEps;
      if (k == 3) b.y = r.y1 + kEps;
    }
  }
  const Rect room = c.room.inflated(-c.base_length / 2);
  auto& b = s.base;
  if (!room.contains(b.x, b.y)) {
    hit = true;
    b.x = std::clamp(b.x, room.x0, room.x1);
    b.y = std::clamp(b.y, room.y0, room.y1);
  }
  s.diagnostics.collision = hit;
}

void World::step_arm(WorldState& s, const ArmCommand& arm, double dt) const {
  const auto& c = config_;

  // Gripper transitions use the end-effector position at the start of the step.
  if (arm.gripper_close && !s.gripper_closed) {
    const Vec2 ee = ee_in_world(c, s);
    const bool toy_reachable =
        s.toy.attachment != ToyAttachment::kInDrawer ||
        s.drawer_fraction >= c.release_min_fraction;
    if (toy_reachable && (ee - Vec2(s.toy.x, s.toy.y)).norm() <= c.capture_radius) {
      s.toy.attachment = ToyAttachment::kGrasped;
    } else if ((ee - handle_position(c, s.drawer_fraction)).norm() <= c.capture_radius) {
      s.handle_engaged = true;
    }
  } else if (!arm.gripper_close && s.gripper_closed) {
    s.handle_engaged = false;
    if (s.toy.attachment == ToyAttachment::kGrasped) {
      const Vec2 ee = ee_in_world(c, s);
      const Rect opening = drawer_opening(c, s.drawer_fraction);
      if (s.drawer_fraction >= c.release_min_fraction && opening.contains(ee.x(), ee.y())) {
        s.toy.attachment = ToyAttachment::kInDrawer;
        s.toy.drawer_dx = ee.x() - c.cabinet.x;
        s.toy.drawer_dy = ee.y() - drawer_front_y(c, s.drawer_fraction);
      } else if (c.cabinet_rect().contains(ee.x(), ee.y())) {
        s.toy.attachment = ToyAttachment::kOnCabinet;
      } else {
        s.toy.attachment = ToyAttachment::kFree;
      }
      s.toy.x = ee.x();
      s.toy.y = ee.y();
    }
  }
  s.gripper_closed = arm.gripper_close;

  const Vec2 prev_target = s.arm_target;
  const double h = dt / c.arm_substeps;
  const double max_step = c.joint_rate * h;
  bool clamped = false;
  const double x_lo = c.cabinet.x - c.drawer_width / 2, x_hi = c.cabinet.x + c.drawer_width / 2;
  const double face = c.cabinet.y - c.cabinet_depth / 2;

  for (int k = 0; k < c.arm_substeps; ++k) {
    const double w = static_cast<double>(k + 1) / c.arm_substeps;
    const Vec2 target_body = prev_target + w * (arm.ee_target - prev_target);
    Vec2 local = target_body - arm_base_in_body(c, s.base);
    if (!solve_ik(local, c.link1, c.link2).reachable) {
      clamped = true;
      local = clamp_to_workspace(local, c.link1, c.link2);
    }
    const IkResult ik = solve_ik(local, c.link1, c.link2);
    const Vec2 ee_before = ee_in_world(c, s);
    if (ik.reachable) {
      for (int j = 0; j < 2; ++j) {
        const double err = ik.joints[j] - s.arm.joints[j];
        const double delta = j == 0 ? wrap_angle(err) : err;
        s.arm.joints[j] += std::clamp(delta, -max_step, max_step);
      }
      s.arm.joints[0] = wrap_angle(s.arm.joints[0]);
    }
    const Vec2 ee = ee_in_world(c, s);

    if (s.handle_engaged) {
      s.drawer_fraction =
          std::clamp((face - c.handle_offset - ee.y()) / c.drawer_travel, 0.0, 1.0);
      if ((ee - handle_position(c, s.drawer_fraction)).norm() > 2.0 * c.capture_radius) {
        s.handle_engaged = false;
      }
    } else if (!s.gripper_closed && s.toy.attachment != ToyAttachment::kGrasped &&
               s.base.height <= c.push_max_height && ee.x() >= x_lo && ee.x() <= x_hi) {
      const double front = drawer_front_y(c, s.drawer_fraction);
      if (ee_before.y() <= front && ee.y() > front) {
        s.drawer_fraction = std::clamp((face - ee.y()) / c.drawer_travel, 0.0, 1.0);
      }
    }

    if (s.toy.attachment == ToyAttachment::kGrasped) {
      s.toy.x = ee.x();
      s.toy.y = ee.y();
    } else if (s.toy.attachment == ToyAttachment::kInDrawer) {
      s.toy.x = c.cabinet.x + s.toy.drawer_dx;
      s.toy.y = drawer_front_y(c, s.drawer_fraction) + s.toy.drawer_dy;
    }
  }
  s.arm_target = arm.ee_target;
  s.diagnostics.arm_target_clamped = clamped;
}

WorldState World::step(const WorldState& in, const llc::BaseCommand& base_cmd,
                       const ArmCommand& arm, double dt) const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("step: dt must be > 0");
  if (!base_cmd.finite()) throw std::invalid_argument("step: base command is not finite");
  if (!arm.ee_target.allFinite()) throw std::invalid_argument("step: arm target is not finite");
  WorldState s = in;
  step_base(s, config_.commands.clamp(base_cmd), dt);
  resolve_collision(s);
  step_arm(s, arm, dt);
  s.time += dt;
  s.steps += 1;
  return s;
}

Predicates World::object_predicates(const WorldState& s) const {
  const auto& c = config_;
  Predicates p;
  p.at_manip_pose = std::abs(s.base.x - c.manip_pose.x) <= c.manip_tol_x &&
                    std::abs(s.base.y - c.manip_pose.y) <= c.manip_tol_y &&
                    std::abs(wrap_angle(s.base.yaw - c.manip_pose.yaw)) <= c.manip_tol_yaw;
  p.drawer_open = s.drawer_fraction >= c.drawer_open_threshold;
  p.drawer_closed = s.drawer_fraction <= c.drawer_closed_threshold;
  p.toy_grasped = s.toy.attachment == ToyAttachment::kGrasped;
  p.toy_in_drawer = s.toy.attachment == ToyAttachment::kInDrawer;
  return p;
}

}  // namespace falcon::world
