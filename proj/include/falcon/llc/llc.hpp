#pragma once

// Low-level base controller: reduced command-tracking model of the legged
// base, its orientation/height/velocity reward, and two interchangeable
// tracking backends (analytic PD and a PPO-trained Gaussian policy).

#include <Eigen/Dense>

#include <array>
#include <map>
#include <memory>
#include <random>
#include <string>

namespace falcon::llc {

using Vec3 = Eigen::Vector3d;

inline constexpr int kActuationDim = 5;
inline constexpr int kLlcStateDim = 17;

// a_quad = [v_cmd (vx, vy, wz), theta_cmd, h_cmd]
struct BaseCommand {
  double vx = 0.0;
  double vy = 0.0;
  double wz = 0.0;
  double pitch = 0.0;
  double height = 0.30;

  std::array<double, 5> as_array() const { return {vx, vy, wz, pitch, height}; }
  static BaseCommand from_array(const std::array<double, 5>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }
  bool finite() const;
  bool operator==(const BaseCommand&) const = default;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double clamp(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct CommandRanges {
  Range vx{-0.4, 0.4};
  Range vy{-0.3, 0.3};
  Range wz{-0.8, 0.8};
  Range pitch{-0.3, 0.3};
  Range height{0.22, 0.38};

  BaseCommand clamp(const BaseCommand& c) const;
  BaseCommand sample(std::mt19937_64& rng) const;
};

// Planar floating-base state plus the two body DOFs (height, pitch).
// Linear velocities are expressed in the body frame.
struct BodyState {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double wz = 0.0;
  double height = 0.30;
  double height_rate = 0.0;
  double pitch = 0.0;
  double pitch_rate = 0.0;

  bool operator==(const BodyState&) const = default;
};

struct Actuation {
  // Commanded accelerations for (vx, vy, wz, height, pitch).
  std::array<double, kActuationDim> u{};
  bool operator==(const Actuation&) const = default;
};

struct DynamicsParams {
  double mass_scale = 1.0;
  double drag = 1.0;          // 1/s on planar velocities
  double body_damping = 4.0;  // 1/s on height/pitch rates
  double disturbance_std = 0.0;
  bool operator==(const DynamicsParams&) const = default;
};

struct DisturbanceDraw {
  std::array<double, kActuationDim> accel{};
};

struct BodyLimits {
  Range height{0.22, 0.38};
  Range pitch{-0.3, 0.3};
};

// Domain randomization ranges (desk-scale analog of terrain/friction/payload).
struct RandomizationRanges {
  Range mass_scale{0.8, 1.25};
  Range drag{0.6, 1.5};
  Range disturbance_std{0.0, 0.3};

  DynamicsParams sample(std::mt19937_64& rng, double body_damping) const;
  bool contains(const DynamicsParams& p) const;
};

// s_LLC = [q (height offset, pitch), q_dot (vx, vy, height_rate, pitch_rate),
//          g (base-frame gravity), omega (roll, pitch, yaw rates), a_quad]
struct LlcState {
  std::array<double, 2> q{};
  std::array<double, 4> q_dot{};
  Vec3 g = Vec3(0, 0, -1);
  Vec3 omega = Vec3::Zero();
  BaseCommand cmd;

  std::array<double, kLlcStateDim> flat() const;
};

inline constexpr double kNominalHeight = 0.30;

LlcState make_llc_state(const BodyState& body, const BaseCommand& cmd);

// Unit gravity expressed in a base frame with the given roll/pitch.
Vec3 desired_gravity(double pitch_cmd, double roll_cmd);
// ||g_xy - g_des_xy||^2
double orientation_penalty(const Vec3& g, double pitch_cmd, double roll_cmd);

BodyState reduced_dynamics_step(const BodyState& s, const Actuation& u, const DynamicsParams& params,
                                const DisturbanceDraw& disturbance, double dt,
                                const BodyLimits& limits);

DisturbanceDraw sample_disturbance(const DynamicsParams& params, std::mt19937_64& rng);

// One 50 Hz control period: the actuation is linearly interpolated from
// `previous` to `current` over `substeps` inner integration steps, with one
// disturbance draw held across the period.
BodyState integrate_control_period(const BodyState& s, const Actuation& previous,
                                   const Actuation& current, const DynamicsParams& params,
                                   const DisturbanceDraw& disturbance, double dt, int substeps,
                                   const BodyLimits& limits);

// Per-channel actuation scale; the action-rate term is measured in these units.
inline constexpr std::array<double, kActuationDim> kActuationScale = {2.0, 2.0, 4.0, 10.0, 10.0};

struct RewardWeights {
  double velocity = 1.0;
  double height = 0.5;
  double orientation = 0.5;
  double action_rate = 0.01;
  double sigma_velocity = 0.05;  // (m/s)^2
  double sigma_height = 0.002;   // m^2
};

struct RewardBreakdown {
  double total = 0.0;
  std::map<std::string, double> terms;
};

RewardBreakdown compute_reward(const BodyState& s, const BaseCommand& cmd, const Actuation& u,
                               const Actuation& u_prev, const BodyState& next,
                               const RewardWeights& w);

struct MdpSpec {
  int state_dim = kLlcStateDim;
  int action_dim = kActuationDim;
  RewardWeights weights;
  double gamma = 0.99;
  bool valid() const { return gamma > 0.0 && gamma < 1.0; }
};

// Shared interface for every tracking backend.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual Actuation actuate(const LlcState& state) const = 0;
  virtual std::string name() const = 0;
};

struct AnalyticGains {
  double velocity = 6.0;        // 1/s
  double height_p = 80.0;       // 1/s^2
  double height_d = 14.0;       // 1/s
  double pitch_p = 80.0;
  double pitch_d = 14.0;
  double nominal_drag = 1.0;
  double nominal_mass = 1.0;
  double nominal_damping = 4.0;
};

struct ActuationLimits {
  std::array<double, kActuationDim> max{4.0, 4.0, 8.0, 20.0, 20.0};
  Actuation clamp(const Actuation& a) const;
};

// PD tracking of v_cmd, h_cmd and theta_cmd with nominal-model feedforward.
class AnalyticController final : public Controller {
 public:
  explicit AnalyticController(AnalyticGains gains = {}, ActuationLimits limits = {})
      : gains_(gains), limits_(limits) {}
  Actuation actuate(const LlcState& state) const override;
  std::string name() const override { return "analytic"; }
  const AnalyticGains& gains() const { return gains_; }

 private:
  AnalyticGains gains_;
  ActuationLimits limits_;
};

}  // namespace falcon::llc
