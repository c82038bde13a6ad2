#include "falcon/world/world.hpp"

#include <stdexcept>

namespace falcon::world {

namespace {

using nlohmann::json;

json rect_json(const Rect& r) { return json::array({r.x0, r.x1, r.y0, r.y1}); }
Rect rect_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("rect must be [x0, x1, y0, y1]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}
json pose_json(const Pose2& p) { return json::array({p.x, p.y, p.yaw}); }
Pose2 pose_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("pose must be [x, y, yaw]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
json range_json(const llc::Range& r) { return json::array({r.lo, r.hi}); }
llc::Range range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("range must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

// Field table shared by serialization and override so the two never drift.
template <typename Visitor>
void visit_fields(WorldConfig& c, Visitor&& v) {
  v("cabinet", c.cabinet);
  v("cabinet_width", c.cabinet_width);
  v("cabinet_depth", c.cabinet_depth);
  v("cabinet_height", c.cabinet_height);
  v("drawer_width", c.drawer_width);
  v("drawer_travel", c.drawer_travel);
  v("drawer_z0", c.drawer_z0);
  v("drawer_z1", c.drawer_z1);
  v("handle_offset", c.handle_offset);
  v("handle_half_width", c.handle_half_width);
  v("toy_radius", c.toy_radius);
  v("toy_lateral_range", c.toy_lateral_range);
  v("toy_depth_on_cabinet", c.toy_depth_on_cabinet);
  v("room", c.room);
  v("base_length", c.base_length);
  v("base_width", c.base_width);
  v("collision_margin", c.collision_margin);
  v("link1", c.link1);
  v("link2", c.link2);
  v("arm_mount_x", c.arm_mount_x);
  v("reach_per_pitch", c.reach_per_pitch);
  v("reach_per_height", c.reach_per_height);
  v("joint_rate", c.joint_rate);
  v("ee_height", c.ee_height);
  v("capture_radius", c.capture_radius);
  v("release_min_fraction", c.release_min_fraction);
  v("push_max_height", c.push_max_height);
  v("drawer_open_threshold", c.drawer_open_threshold);
  v("drawer_closed_threshold", c.drawer_closed_threshold);
  v("manip_pose", c.manip_pose);
  v("manip_tol_x", c.manip_tol_x);
  v("manip_tol_y", c.manip_tol_y);
  v("manip_tol_yaw", c.manip_tol_yaw);
  v("region_center", c.region_center);
  v("region_left", c.region_left);
  v("region_right", c.region_right);
  v("heading_spread", c.heading_spread);
  v("llc_backend", c.llc_backend);
  v("llc_policy_path", c.llc_policy_path);
  v("mass_scale", c.dynamics.mass_scale);
  v("drag", c.dynamics.drag);
  v("body_damping", c.dynamics.body_damping);
  v("disturbance_std", c.dynamics.disturbance_std);
  v("randomize_dynamics", c.randomize_dynamics);
  v("randomize_mass_scale", c.randomization.mass_scale);
  v("randomize_drag", c.randomization.drag);
  v("randomize_disturbance_std", c.randomization.disturbance_std);
  v("cmd_vx", c.commands.vx);
  v("cmd_vy", c.commands.vy);
  v("cmd_wz", c.commands.wz);
  v("cmd_pitch", c.commands.pitch);
  v("cmd_height", c.commands.height);
  v("limit_height", c.limits.height);
  v("limit_pitch", c.limits.pitch);
  v("llc_substeps", c.llc_substeps);
  v("arm_substeps", c.arm_substeps);
  v("raster", c.raster);
}

struct Writer {
  json& out;
  void operator()(const char* k, const Rect& r) { out[k] = rect_json(r); }
  void operator()(const char* k, const Pose2& p) { out[k] = pose_json(p); }
  void operator()(const char* k, const llc::Range& r) { out[k] = range_json(r); }
  void operator()(const char* k, const LlcBackend& b) { out[k] = to_string(b); }
  template <typename T>
  void operator()(const char* k, const T& v) {
    out[k] = v;
  }
};

struct Reader {
  const json& in;
  int matched = 0;
  template <typename T>
  void operator()(const char* k, T& v) {
    auto it = in.find(k);
    if (it == in.end()) return;
    ++matched;
    if constexpr (std::is_same_v<T, Rect>) {
      v = rect_from(*it);
    } else if constexpr (std::is_same_v<T, Pose2>) {
      v = pose_from(*it);
    } else if constexpr (std::is_same_v<T, llc::Range>) {
      v = range_from(*it);
    } else if constexpr (std::is_same_v<T, LlcBackend>) {
      v = parse_llc_backend(it->template get<std::string>());
    } else {
      v = it->template get<T>();
    }
  }
};

}  // namespace

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = json::object();
  WorldConfig copy = c;
  visit_fields(copy, Writer{j});
}

void update_from_json(WorldConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("world config must be an object");
  json known;
  to_json(known, c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown world config key '" + key + "'");
  }
  Reader r{j};
  visit_fields(c, r);
}

}  // namespace falcon::world
