#include "falcon/world/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace falcon::world {

namespace {

struct Rgb {
  uint8_t r, g, b;
};

constexpr Rgb kFloorA{92, 92, 92};
constexpr Rgb kFloorB{112, 112, 112};
constexpr Rgb kWall{70, 70, 130};
constexpr Rgb kSky{200, 200, 220};
constexpr Rgb kCabinetSide{140, 90, 40};
constexpr Rgb kCabinetTop{165, 115, 60};
constexpr Rgb kDrawerFront{185, 120, 50};
constexpr Rgb kDrawerInside{215, 170, 100};
constexpr Rgb kScenery{120, 78, 35};
constexpr Rgb kHandle{235, 235, 235};
constexpr Rgb kToySide{215, 30, 30};
constexpr Rgb kToyTop{245, 70, 70};
constexpr Rgb kBase{40, 150, 220};
constexpr Rgb kBaseFront{120, 210, 250};
constexpr Rgb kArm{245, 200, 0};
constexpr Rgb kGripperOpen{0, 220, 0};
constexpr Rgb kGripperClosed{0, 110, 0};

Rgb shade(Rgb c, double f) {
  auto s = [f](uint8_t v) {
    return static_cast<uint8_t>(std::clamp(std::lround(v * f), 0L, 255L));
  };
  return {s(c.r), s(c.g), s(c.b)};
}

Rgb floor_color(double x, double y) {
  const long ix = static_cast<long>(std::floor(x / 0.25));
  const long iy = static_cast<long>(std::floor(y / 0.25));
  return ((ix + iy) & 1) ? kFloorA : kFloorB;
}

double dist_to_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

// Scene quantities shared by the top-down views, resolved once per frame.
struct Scene {
  const WorldConfig& c;
  const WorldState& s;
  Rect cabinet;
  Rect opening;
  bool drawer_out;
  double front_y;
  Vec2 handle;
  Vec2 toy;
  Vec2 arm_base_w, elbow_w, ee_w;

  Scene(const WorldConfig& cfg, const WorldState& st)
      : c(cfg),
        s(st),
        cabinet(cfg.cabinet_rect()),
        opening(drawer_opening(cfg, st.drawer_fraction)),
        drawer_out(st.drawer_fraction > 1e-6),
        front_y(drawer_front_y(cfg, st.drawer_fraction)),
        handle(handle_position(cfg, st.drawer_fraction)),
        toy(st.toy.x, st.toy.y) {
    const Vec2 base_b = arm_base_in_body(cfg, st.base);
    const Vec2 elbow_b =
        base_b + Vec2(cfg.link1 * std::cos(st.arm.joints[0]), cfg.link1 * std::sin(st.arm.joints[0]));
    arm_base_w = body_to_world(st.base, base_b);
    elbow_w = body_to_world(st.base, elbow_b);
    ee_w = ee_in_world(cfg, st);
  }

  bool toy_visible_in_drawer() const {
    return s.toy.attachment == ToyAttachment::kInDrawer &&
           opening.inflated(-1e-9).contains(toy.x(), toy.y()) && drawer_out;
  }

  Rgb top_down(const Vec2& p) const {
    const double tr = c.toy_radius;
    const auto att = s.toy.attachment;
    if (att == ToyAttachment::kGrasped && (p - toy).norm() <= tr) return kToyTop;
    if ((p - ee_w).norm() <= 0.025) return s.gripper_closed ? kGripperClosed : kGripperOpen;
    if (dist_to_segment(p, arm_base_w, elbow_w) <= 0.012 ||
        dist_to_segment(p, elbow_w, ee_w) <= 0.012) {
      return kArm;
    }
    if ((att == ToyAttachment::kOnCabinet || att == ToyAttachment::kFree) &&
        (p - toy).norm() <= tr) {
      return kToyTop;
    }
    const Vec2 pb = world_to_body(s.base, p);
    if (std::abs(pb.x()) <= c.base_length / 2 && std::abs(pb.y()) <= c.base_width / 2) {
      return pb.x() > c.base_length / 2 - 0.1 ? kBaseFront : kBase;
    }
    if (toy_visible_in_drawer() && (p - toy).norm() <= tr) return kToyTop;
    if (cabinet.contains(p.x(), p.y())) return kCabinetTop;
    if (std::abs(p.x() - handle.x()) <= c.handle_half_width && std::abs(p.y() - handle.y()) <= 0.015) {
      return kHandle;
    }
    if (drawer_out && opening.contains(p.x(), p.y())) {
      return p.y() < front_y + 0.02 ? kDrawerFront : kDrawerInside;
    }
    if (!c.room.contains(p.x(), p.y())) return kWall;
    return floor_color(p.x(), p.y());
  }
};

Raster make_raster(int n) {
  Raster r;
  r.height = n;
  r.width = n;
  r.rgb.assign(static_cast<size_t>(n) * n * 3, 0);
  return r;
}

void put(Raster& r, int row, int col, Rgb c) {
  const size_t i = (static_cast<size_t>(row) * r.width + col) * 3;
  r.rgb[i] = c.r;
  r.rgb[i + 1] = c.g;
  r.rgb[i + 2] = c.b;
}

// Orthographic top-down view aligned with the body: image up = body forward.
Raster render_top_down(const Scene& sc, const Vec2& center_body, double extent, int n) {
  Raster r = make_raster(n);
  for (int row = 0; row < n; ++row) {
    const double fwd = center_body.x() + (0.5 - (row + 0.5) / n) * extent;
    for (int col = 0; col < n; ++col) {
      const double left = center_body.y() + (0.5 - (col + 0.5) / n) * extent;
      put(r, row, col, sc.top_down(body_to_world(sc.s.base, Vec2(fwd, left))));
    }
  }
  return r;
}

// --- head view: per-column 2.5D ray cast ---------------------------------------

struct Span {
  double d_in;
  double d_out;
  double z0;
  double z1;
  Rgb side;
  Rgb top;
  int kind;  // 0 generic, 1 cabinet body (front-face panels)
};

std::optional<std::pair<double, double>> ray_box(const Vec2& o, const Vec2& d, const Rect& r) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  const double lo[2] = {r.x0, r.y0}, hi[2] = {r.x1, r.y1};
  for (int a = 0; a < 2; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 < std::max(t0, 0.0)) return std::nullopt;
  return std::make_pair(t0, t1);
}

std::optional<std::pair<double, double>> ray_circle(const Vec2& o, const Vec2& d, const Vec2& c,
                                                    double radius) {
  const Vec2 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - radius * radius);
  if (disc < 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double t0 = -b - sq, t1 = -b + sq;
  if (t1 < 0) return std::nullopt;
  return std::make_pair(t0, t1);
}

Raster render_head(const Scene& sc, int n) {
  const auto& c = sc.c;
  const auto& s = sc.s;
  Raster r = make_raster(n);
  const double focal = (n / 2.0) / std::tan(0.25 * M_PI);
  const double cam_z = s.base.height + 0.2;
  const double tilt = 0.2 + s.base.pitch;
  const Vec2 cam = body_to_world(s.base, Vec2(0.0, 0.0));
  const double drawer_x0 = c.cabinet.x - c.drawer_width / 2, drawer_x1 = c.cabinet.x + c.drawer_width / 2;

  std::vector<Span> spans;
  for (int col = 0; col < n; ++col) {
    const double phi = std::atan(((n / 2.0) - (col + 0.5)) / focal);
    const double yaw = s.base.yaw + phi;
    const Vec2 dir(std::cos(yaw), std::sin(yaw));
    const double cos_phi = std::cos(phi);

    spans.clear();
    auto add_box = [&](const Rect& rect, double z0, double z1, Rgb side, Rgb top, int kind) {
      if (auto hit = ray_box(cam, dir, rect)) {
        spans.push_back({hit->first, hit->second, z0, z1, side, top, kind});
      }
    };
    add_box(sc.cabinet, 0.0, c.cabinet_height, kCabinetSide, kCabinetTop, 1);
    if (sc.drawer_out) {
      add_box(sc.opening, c.drawer_z0, c.drawer_z1, kDrawerFront, kDrawerInside, 0);
    }
    add_box(Rect{sc.handle.x() - c.handle_half_width, sc.handle.x() + c.handle_half_width,
                 sc.handle.y() - 0.015, sc.handle.y() + 0.015},
            0.39, 0.41, kHandle, kHandle, 0);
    {
      double z0 = -1.0;
      switch (s.toy.attachment) {
        case ToyAttachment::kFree:
          z0 = 0.0;
          break;
        case ToyAttachment::kOnCabinet:
          z0 = c.cabinet_height;
          break;
        case ToyAttachment::kGrasped:
          z0 = c.ee_height - c.toy_radius;
          break;
        case ToyAttachment::kInDrawer:
          if (sc.toy_visible_in_drawer()) z0 = c.drawer_z0 + 0.01;
          break;
      }
      if (z0 >= 0.0) {
        if (auto hit = ray_circle(cam, dir, sc.toy, c.toy_radius)) {
          spans.push_back({hit->first, hit->second, z0, z0 + 2 * c.toy_radius, kToySide, kToyTop, 0});
        }
      }
    }
    std::sort(spans.begin(), spans.end(),
              [](const Span& a, const Span& b) { return a.d_in < b.d_in; });
    const auto wall = ray_box(cam, dir, c.room);
    const double d_wall = wall ? wall->second : 50.0;

    for (int row = 0; row < n; ++row) {
      // Horizontal distance along the ray; slope is per unit of that distance.
      const double psi = std::atan(((n / 2.0) - (row + 0.5)) / focal * cos_phi) - tilt;
      const double slope = std::tan(psi);
      const double d_floor = slope < 0 ? cam_z / -slope : std::numeric_limits<double>::infinity();
      std::optional<Rgb> color;
      double d_hit = 0.0;
      for (const Span& sp : spans) {
        if (sp.d_in < 0.0 || sp.d_in > d_floor || sp.d_in > d_wall) continue;
        const double z_in = cam_z + sp.d_in * slope;
        const double z_out = cam_z + sp.d_out * slope;
        if (z_in >= sp.z0 && z_in <= sp.z1) {
          Rgb side = sp.side;
          if (sp.kind == 1) {
            const Vec2 p = cam + sp.d_in * dir;
            const bool on_front = std::abs(p.y() - sc.cabinet.y0) < 1e-6;
            if (on_front && p.x() >= drawer_x0 && p.x() <= drawer_x1) {
              if (z_in >= c.drawer_z0 && z_in <= c.drawer_z1) {
                side = sc.drawer_out ? kScenery : kDrawerFront;
              } else if ((z_in >= 0.18 && z_in <= 0.31) || (z_in >= 0.03 && z_in <= 0.16)) {
                side = kScenery;
              }
            }
          }
          color = side;
          d_hit = sp.d_in;
          break;
        }
        if (z_in > sp.z1 && z_out <= sp.z1) {
          color = sp.top;
          d_hit = (sp.z1 - cam_z) / slope;
          break;
        }
      }
      if (!color) {
        if (d_floor < d_wall) {
          const Vec2 p = cam + d_floor * dir;
          color = floor_color(p.x(), p.y());
          d_hit = d_floor;
        } else {
          const double z = cam_z + d_wall * slope;
          color = (z >= 0.0 && z <= 1.0) ? kWall : kSky;
          d_hit = d_wall;
        }
      }
      put(r, row, col, shade(*color, 1.0 / (1.0 + 0.12 * d_hit)));
    }
  }
  return r;
}

}  // namespace

ObservationBundle World::render_views(const WorldState& s) const {
  const Scene sc(config_, s);
  const int n = config_.raster;
  ObservationBundle b;
  b.body = render_top_down(sc, Vec2(1.0, 0.0), 3.2, n);
  b.wrist = render_top_down(sc, ee_in_body(config_, s), 0.6, n);
  b.head = render_head(sc, n);
  b.proprio = proprio_vector(config_, s);
  return b;
}

}  // namespace falcon::world
