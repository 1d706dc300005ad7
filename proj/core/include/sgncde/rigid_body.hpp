#pragma once

#include "sgncde/sg_filter.hpp"
#include "sgncde/so3.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace sgncde::sim {

using so3::Mat3;
using so3::Rotation;
using so3::Vec3;
using sg::RotationTrajectory;

/// Symmetric positive-definite inertia tensor satisfying the triangle inequality.
class InertiaTensor {
 public:
  InertiaTensor() : j_(Mat3::Identity()) {}
  /// Throws InvalidInputError when J is not a physically realizable inertia tensor.
  static InertiaTensor from_matrix(const Mat3& j);

  const Mat3& matrix() const { return j_; }
  /// Eigenvalues in ascending order.
  Vec3 principal_moments() const;

 private:
  Mat3 j_;
};

enum class TorqueVariant { free, linear_control, config_dependent, damped };

std::string_view to_string(TorqueVariant v);
/// Throws ConfigError naming the valid variants.
TorqueVariant parse_variant(std::string_view name);

struct TorqueModel {
  TorqueVariant variant = TorqueVariant::free;
  Mat3 gain = 0.3 * Mat3::Identity();  // linear_control: tau = -K omega
  Vec3 dipole = Vec3::UnitX();         // config_dependent: body-frame dipole m
  Vec3 field = Vec3::UnitZ();          // config_dependent: world-frame field B
  double damping = 0.2;                // damped: tau = -c omega
};

struct SimState {
  Rotation rotation;
  Vec3 omega = Vec3::Zero();  // body frame, rad/s
  double t = 0.0;
};

Vec3 torque(const TorqueModel& model, const SimState& state);

/// Body-frame angular acceleration from Euler's equation.
Vec3 angular_acceleration(const Mat3& j, const Mat3& j_inv, const TorqueModel& model, const SimState& state);

/// One RK4 step with Lie-group rotation updates, followed by projection onto SO(3).
SimState step(const SimState& state, const InertiaTensor& j, const TorqueModel& model, double dt);

/// Principal moments log-uniform in [0.5, 3] kg m^2 with rejection on the triangle inequality,
/// conjugated by a uniform random rotation. `rejections` (optional) counts rejected draws.
InertiaTensor sample_inertia(std::mt19937_64& rng, long* rejections = nullptr);

/// Uniform rotation, omega ~ N(0, sigma^2 I) rejected while ||omega|| < omega_min.
SimState sample_initial_conditions(std::mt19937_64& rng, double omega_min, double omega_sigma = 2.0,
                                   long* rejections = nullptr);

struct ScenarioConfig {
  TorqueVariant variant = TorqueVariant::free;
  double duration_s = 3.0;
  double dt = 1e-3;
  double sample_hz = 40.0;
  double noise_sigma = 0.0;
  double drop_prob = 0.0;
  double jitter = 0.0;
  std::uint64_t seed = 0;
  double omega_min = 0.5;
  double omega_sigma = 2.0;
  TorqueModel torque;  // parameters; `variant` above selects the law

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
};

struct SimulationResult {
  RotationTrajectory truth;     // clean, at sample_hz
  std::vector<SimState> states; // ground-truth state at each emitted sample
  RotationTrajectory observed;  // after corrupt() and subsample_irregular()
  InertiaTensor inertia;
};

/// Deterministic in config.seed.
SimulationResult simulate(const ScenarioConfig& config);

/// x_k <- exp(eps_k) x_k, eps_k ~ N(0, sigma^2 I).
RotationTrajectory corrupt(const RotationTrajectory& traj, double sigma, std::mt19937_64& rng);

/// Drops each sample with probability drop_prob; jitters kept timestamps by at most
/// min(jitter, 0.49 * smallest spacing) so ordering is preserved.
RotationTrajectory subsample_irregular(const RotationTrajectory& traj, double drop_prob, double jitter,
                                       std::mt19937_64& rng);

/// Parses `key = value` lines ('#' comments). Unknown keys are a ConfigError.
ScenarioConfig parse_scenario_config(std::string_view text);
ScenarioConfig load_scenario_config(const std::string& path);
/// Applies one key/value pair to a config (shared by the file parser and the CLI).
void apply_scenario_setting(ScenarioConfig& config, std::string_view key, std::string_view value);

}  // namespace sgncde::sim
