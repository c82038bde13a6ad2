#include "falcon/llc/llc.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace falcon::llc {

bool BaseCommand::finite() const {
  return std::isfinite(vx) && std::isfinite(vy) && std::isfinite(wz) && std::isfinite(pitch) &&
         std::isfinite(height);
}

BaseCommand CommandRanges::clamp(const BaseCommand& c) const {
  return {vx.clamp(c.vx), vy.clamp(c.vy), wz.clamp(c.wz), pitch.clamp(c.pitch),
          height.clamp(c.height)};
}

BaseCommand CommandRanges::sample(std::mt19937_64& rng) const {
  auto draw = [&rng](const Range& r) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
  };
  BaseCommand c;
  c.vx = draw(vx);
  c.vy = draw(vy);
  c.wz = draw(wz);
  c.pitch = draw(pitch);
  c.height = draw(height);
  return c;
}

DynamicsParams RandomizationRanges::sample(std::mt19937_64& rng, double body_damping) const {
  auto draw = [&rng](const Range& r) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
  };
  DynamicsParams p;
  p.mass_scale = draw(mass_scale);
  p.drag = draw(drag);
  p.disturbance_std = draw(disturbance_std);
  p.body_damping = body_damping;
  return p;
}

bool RandomizationRanges::contains(const DynamicsParams& p) const {
  return mass_scale.contains(p.mass_scale) && drag.contains(p.drag) &&
         disturbance_std.contains(p.disturbance_std);
}

std::array<double, kLlcStateDim> LlcState::flat() const {
  return {q[0],     q[1],     q_dot[0], q_dot[1], q_dot[2], q_dot[3],
          g.x(),    g.y(),    g.z(),    omega.x(), omega.y(), omega.z(),
          cmd.vx,   cmd.vy,   cmd.wz,   cmd.pitch, cmd.height - kNominalHeight};
}

LlcState make_llc_state(const BodyState& body, const BaseCommand& cmd) {
  LlcState s;
  s.q = {body.height - kNominalHeight, body.pitch};
  s.q_dot = {body.vx, body.vy, body.height_rate, body.pitch_rate};
  s.g = desired_gravity(body.pitch, 0.0);
  s.omega = Vec3(0.0, body.pitch_rate, body.wz);
  s.cmd = cmd;
  return s;
}

Vec3 desired_gravity(double pitch_cmd, double roll_cmd) {
  // q_des from (roll, pitch, yaw = 0), ZYX order.
  const Eigen::Quaterniond q = Eigen::AngleAxisd(0.0, Vec3::UnitZ()) *
                               Eigen::AngleAxisd(pitch_cmd, Vec3::UnitY()) *
                               Eigen::AngleAxisd(roll_cmd, Vec3::UnitX());
  const Vec3 g0(0.0, 0.0, -1.0);
  return q.toRotationMatrix().transpose() * g0;
}

double orientation_penalty(const Vec3& g, double pitch_cmd, double roll_cmd) {
  const Vec3 gd = desired_gravity(pitch_cmd, roll_cmd);
  const double dx = g.x() - gd.x();
  const double dy = g.y() - gd.y();
  return dx * dx + dy * dy;
}

BodyState reduced_dynamics_step(const BodyState& s, const Actuation& u, const DynamicsParams& p,
                                const DisturbanceDraw& d, double dt, const BodyLimits& limits) {
  BodyState n = s;
  const double inv_m = 1.0 / p.mass_scale;
  // Semi-implicit Euler: rates first, then positions with the new rates.
  n.vx += (u.u[0] * inv_m - p.drag * s.vx + d.accel[0]) * dt;
  n.vy += (u.u[1] * inv_m - p.drag * s.vy + d.accel[1]) * dt;
  n.wz += (u.u[2] * inv_m - p.drag * s.wz + d.accel[2]) * dt;
  n.height_rate += (u.u[3] * inv_m - p.body_damping * s.height_rate + d.accel[3]) * dt;
  n.pitch_rate += (u.u[4] * inv_m - p.body_damping * s.pitch_rate + d.accel[4]) * dt;

  const double c = std::cos(s.yaw), sn = std::sin(s.yaw);
  n.x += (c * n.vx - sn * n.vy) * dt;
  n.y += (sn * n.vx + c * n.vy) * dt;
  n.yaw = std::remainder(s.yaw + n.wz * dt, 2.0 * M_PI);

  n.height += n.height_rate * dt;
  if (n.height < limits.height.lo || n.height > limits.height.hi) {
    n.height = limits.height.clamp(n.height);
    n.height_rate = 0.0;
  }
  n.pitch += n.pitch_rate * dt;
  if (n.pitch < limits.pitch.lo || n.pitch > limits.pitch.hi) {
    n.pitch = limits.pitch.clamp(n.pitch);
    n.pitch_rate = 0.0;
  }
  return n;
}

DisturbanceDraw sample_disturbance(const DynamicsParams& params, std::mt19937_64& rng) {
  DisturbanceDraw d;
  if (params.disturbance_std <= 0.0) return d;
  std::normal_distribution<double> n(0.0, params.disturbance_std);
  for (auto& a : d.accel) a = n(rng);
  // Body DOFs see a tenth of the planar disturbance magnitude in m/s^2 terms.
  d.accel[3] *= 0.1;
  d.accel[4] *= 0.1;
  return d;
}

BodyState integrate_control_period(const BodyState& s, const Actuation& previous,
                                   const Actuation& current, const DynamicsParams& params,
                                   const DisturbanceDraw& disturbance, double dt, int substeps,
                                   const BodyLimits& limits) {
  BodyState out = s;
  const double h = dt / substeps;
  for (int k = 0; k < substeps; ++k) {
    const double w = static_cast<double>(k + 1) / substeps;
    Actuation u;
    for (int i = 0; i < kActuationDim; ++i) {
      u.u[i] = previous.u[i] + w * (current.u[i] - previous.u[i]);
    }
    out = reduced_dynamics_step(out, u, params, disturbance, h, limits);
  }
  return out;
}

RewardBreakdown compute_reward(const BodyState& s, const BaseCommand& cmd, const Actuation& u,
                               const Actuation& u_prev, const BodyState& next,
                               const RewardWeights& w) {
  (void)s;
  RewardBreakdown r;
  const double ev = (next.vx - cmd.vx) * (next.vx - cmd.vx) +
                    (next.vy - cmd.vy) * (next.vy - cmd.vy) +
                    (next.wz - cmd.wz) * (next.wz - cmd.wz);
  const double eh = (next.height - cmd.height) * (next.height - cmd.height);
  const double ori = orientation_penalty(desired_gravity(next.pitch, 0.0), cmd.pitch, 0.0);
  double rate = 0.0;
  for (int i = 0; i < kActuationDim; ++i) {
    const double du = (u.u[i] - u_prev.u[i]) / kActuationScale[i];
    rate += du * du;
  }
  r.terms["velocity"] = w.velocity * std::exp(-ev / w.sigma_velocity);
  r.terms["height"] = w.height * std::exp(-eh / w.sigma_height);
  r.terms["orientation"] = -w.orientation * ori;
  r.terms["action_rate"] = -w.action_rate * rate;
  r.total = r.terms["velocity"] + r.terms["height"] + r.terms["orientation"] +
            r.terms["action_rate"];
  return r;
}

Actuation ActuationLimits::clamp(const Actuation& a) const {
  Actuation out;
  for (int i = 0; i < kActuationDim; ++i) out.u[i] = std::clamp(a.u[i], -max[i], max[i]);
  return out;
}

Actuation AnalyticController::actuate(const LlcState& s) const {
  const auto& g = gains_;
  const double vx = s.q_dot[0], vy = s.q_dot[1];
  const double wz = s.omega.z();
  const double h = s.q[0] + kNominalHeight, hr = s.q_dot[2];
  const double pitch = s.q[1], pr = s.q_dot[3];
  Actuation a;
  a.u[0] = g.nominal_mass * (g.nominal_drag * s.cmd.vx + g.velocity * (s.cmd.vx - vx));
  a.u[1] = g.nominal_mass * (g.nominal_drag * s.cmd.vy + g.velocity * (s.cmd.vy - vy));
  a.u[2] = g.nominal_mass * (g.nominal_drag * s.cmd.wz + g.velocity * (s.cmd.wz - wz));
  a.u[3] = g.nominal_mass * (g.height_p * (s.cmd.height - h) - (g.height_d - g.nominal_damping) * hr);
  a.u[4] = g.nominal_mass * (g.pitch_p * (s.cmd.pitch - pitch) - (g.pitch_d - g.nominal_damping) * pr);
  return limits_.clamp(a);
}

}  // namespace falcon::llc
