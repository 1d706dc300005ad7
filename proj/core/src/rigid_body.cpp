#include "sgncde/rigid_body.hpp"

#include "sgncde/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sgncde::sim {

namespace {

constexpr double kMomentMin = 0.5;
constexpr double kMomentMax = 3.0;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(std::string_view key, std::string_view value) {
  const std::string v(value);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) {
    throw ConfigError("config: '" + std::string(key) + "' expects a finite number, got '" + v + "'");
  }
  return out;
}

Vec3 parse_vec3(std::string_view key, std::string_view value) {
  std::string v(value);
  std::replace(v.begin(), v.end(), ',', ' ');
  std::istringstream is(v);
  Vec3 out;
  std::string tok;
  int i = 0;
  while (is >> tok) {
    if (i == 3) break;
    out(i++) = parse_double(key, tok);
  }
  if (i != 3 || (is >> tok)) {
    throw ConfigError("config: '" + std::string(key) + "' expects three comma-separated numbers");
  }
  return out;
}

}  // namespace

InertiaTensor InertiaTensor::from_matrix(const Mat3& j) {
  if (!j.allFinite() || (j - j.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw InvalidInputError("inertia tensor must be finite and symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(j, Eigen::EigenvaluesOnly);
  const Vec3 l = eig.eigenvalues();
  if (!(l(0) > 0.0)) throw InvalidInputError("inertia tensor must be positive definite");
  // Sorted ascending, so the binding inequality is l0 + l1 >= l2.
  if (l(0) + l(1) < l(2) * (1.0 - 1e-12)) {
    throw InvalidInputError("inertia tensor violates the triangle inequality");
  }
  InertiaTensor out;
  out.j_ = j;
  return out;
}

Vec3 InertiaTensor::principal_moments() const {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(j_, Eigen::EigenvaluesOnly);
  return eig.eigenvalues();
}

std::string_view to_string(TorqueVariant v) {
  switch (v) {
    case TorqueVariant::free: return "free";
    case TorqueVariant::linear_control: return "linear_control";
    case TorqueVariant::config_dependent: return "config_dependent";
    case TorqueVariant::damped: return "damped";
  }
  return "unknown";
}

TorqueVariant parse_variant(std::string_view name) {
  for (auto v : {TorqueVariant::free, TorqueVariant::linear_control, TorqueVariant::config_dependent,
                 TorqueVariant::damped}) {
    if (name == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (valid: free, linear_control, config_dependent, damped)");
}

Vec3 torque(const TorqueModel& model, const SimState& state) {
  switch (model.variant) {
    case TorqueVariant::free: return Vec3::Zero();
    case TorqueVariant::linear_control: return -(model.gain * state.omega);
    case TorqueVariant::config_dependent:
      return model.dipole.cross(state.rotation.matrix().transpose() * model.field);
    case TorqueVariant::damped: return -model.damping * state.omega;
  }
  return Vec3::Zero();
}

Vec3 angular_acceleration(const Mat3& j, const Mat3& j_inv, const TorqueModel& model, const SimState& state) {
  return j_inv * (torque(model, state) - state.omega.cross(j * state.omega));
}

SimState step(const SimState& s, const InertiaTensor& inertia, const TorqueModel& model, double dt) {
  if (!(dt > 0.0)) throw InvalidInputError("step: dt must be positive");
  const Mat3& j = inertia.matrix();
  const Mat3 j_inv = j.inverse();
  const Rotation& r0 = s.rotation;

  const Vec3 w1 = s.omega;
  const Vec3 a1 = angular_acceleration(j, j_inv, model, s);

  SimState s2{r0 * so3::exp_so3(0.5 * dt * w1), s.omega + 0.5 * dt * a1, s.t + 0.5 * dt};
  const Vec3 w2 = s2.omega;
  const Vec3 a2 = angular_acceleration(j, j_inv, model, s2);

  SimState s3{r0 * so3::exp_so3(0.5 * dt * w2), s.omega + 0.5 * dt * a2, s.t + 0.5 * dt};
  const Vec3 w3 = s3.omega;
  const Vec3 a3 = angular_acceleration(j, j_inv, model, s3);

  SimState s4{r0 * so3::exp_so3(dt * w3), s.omega + dt * a3, s.t + dt};
  const Vec3 w4 = s4.omega;
  const Vec3 a4 = angular_acceleration(j, j_inv, model, s4);

  SimState out;
  out.omega = s.omega + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
  out.rotation = so3::project_to_so3((r0 * so3::exp_so3((dt / 6.0) * (w1 + 2.0 * w2 + 2.0 * w3 + w4))).matrix());
  out.t = s.t + dt;
  return out;
}

InertiaTensor sample_inertia(std::mt19937_64& rng, long* rejections) {
  std::uniform_real_distribution<double> uni(std::log(kMomentMin), std::log(kMomentMax));
  Vec3 l;
  for (;;) {
    for (int i = 0; i < 3; ++i) l(i) = std::exp(uni(rng));
    Vec3 sorted = l;
    std::sort(sorted.data(), sorted.data() + 3);
    if (sorted(0) + sorted(1) >= sorted(2)) break;
    if (rejections != nullptr) ++*rejections;
  }
  const Mat3 q = so3::sample_uniform_rotation(rng).matrix();
  Mat3 j = q * l.asDiagonal() * q.transpose();
  j = 0.5 * (j + j.transpose());
  return InertiaTensor::from_matrix(j);
}

SimState sample_initial_conditions(std::mt19937_64& rng, double omega_min, double omega_sigma, long* rejections) {
  if (!(omega_min > 0.0)) throw InvalidInputError("omega_min must be positive");
  SimState s;
  s.rotation = so3::sample_uniform_rotation(rng);
  std::normal_distribution<double> normal(0.0, omega_sigma);
  for (;;) {
    s.omega = Vec3(normal(rng), normal(rng), normal(rng));
    if (s.omega.norm() >= omega_min) break;
    if (rejections != nullptr) ++*rejections;
  }
  return s;
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("scenario config: " + msg); };
  if (!(duration_s > 0.0)) fail("duration_s must be positive");
  if (!(dt > 0.0)) fail("dt must be positive");
  if (!(sample_hz > 0.0)) fail("sample_hz must be positive");
  if (1.0 / sample_hz < dt * (1.0 - 1e-9)) fail("sample period must not be shorter than dt");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) fail("drop_prob must be in [0, 1)");
  if (!(jitter >= 0.0)) fail("jitter must be >= 0");
  if (!(omega_min > 0.0)) fail("omega_min must be positive");
  if (!(omega_sigma > 0.0)) fail("omega_sigma must be positive");
  if (!(torque.damping >= 0.0)) fail("damping must be >= 0");
}

SimulationResult simulate(const ScenarioConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  SimulationResult out;
  out.inertia = sample_inertia(rng);
  SimState state = sample_initial_conditions(rng, config.omega_min, config.omega_sigma);

  TorqueModel torque_model = config.torque;
  torque_model.variant = config.variant;

  const double period = 1.0 / config.sample_hz;
  const auto samples = static_cast<long>(std::floor(config.duration_s * config.sample_hz + 1e-9)) + 1;
  // Integer substeps per sample so emitted times land exactly on the sample grid.
  const long substeps = std::max(1L, std::lround(period / config.dt));
  const double h = period / static_cast<double>(substeps);

  std::vector<double> times;
  std::vector<Rotation> rots;
  times.reserve(static_cast<std::size_t>(samples));
  rots.reserve(static_cast<std::size_t>(samples));
  for (long k = 0; k < samples; ++k) {
    if (k > 0) {
      for (long s = 0; s < substeps; ++s) state = step(state, out.inertia, torque_model, h);
    }
    state.t = static_cast<double>(k) * period;
    times.push_back(state.t);
    rots.push_back(state.rotation);
    out.states.push_back(state);
  }
  out.truth = RotationTrajectory(std::move(times), std::move(rots));

  std::mt19937_64 noise_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  out.observed = corrupt(out.truth, config.noise_sigma, noise_rng);
  out.observed = subsample_irregular(out.observed, config.drop_prob, config.jitter, noise_rng);
  return out;
}

RotationTrajectory corrupt(const RotationTrajectory& traj, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw InvalidInputError("corrupt: sigma must be >= 0");
  if (sigma == 0.0) return traj;
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<Rotation> rots;
  rots.reserve(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Vec3 eps(normal(rng), normal(rng), normal(rng));
    rots.push_back(so3::exp_so3(eps) * traj.rotation(k));
  }
  return RotationTrajectory(traj.times(), std::move(rots));
}

RotationTrajectory subsample_irregular(const RotationTrajectory& traj, double drop_prob, double jitter,
                                       std::mt19937_64& rng) {
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw InvalidInputError("drop_prob must be in [0, 1)");
  if (!(jitter >= 0.0)) throw InvalidInputError("jitter must be >= 0");
  if (drop_prob == 0.0 && jitter == 0.0) return traj;

  double min_gap = INFINITY;
  for (std::size_t k = 1; k < traj.size(); ++k) min_gap = std::min(min_gap, traj.time(k) - traj.time(k - 1));
  const double bound = std::min(jitter, 0.49 * min_gap);

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> times;
  std::vector<Rotation> rots;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double u = uni(rng);
    const double j = uni(rng);
    if (u < drop_prob) continue;
    times.push_back(traj.time(k) + (bound > 0.0 ? (2.0 * j - 1.0) * bound : 0.0));
    rots.push_back(traj.rotation(k));
  }
  return RotationTrajectory(std::move(times), std::move(rots));
}

void apply_scenario_setting(ScenarioConfig& c, std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  if (key == "variant") {
    c.variant = parse_variant(v);
    c.torque.variant = c.variant;
  } else if (key == "duration_s") {
    c.duration_s = parse_double(key, v);
  } else if (key == "dt") {
    c.dt = parse_double(key, v);
  } else if (key == "sample_hz") {
    c.sample_hz = parse_double(key, v);
  } else if (key == "noise_sigma") {
    c.noise_sigma = parse_double(key, v);
  } else if (key == "drop_prob") {
    c.drop_prob = parse_double(key, v);
  } else if (key == "jitter") {
    c.jitter = parse_double(key, v);
  } else if (key == "seed") {
    std::uint64_t s = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config: 'seed' expects a non-negative integer, got '" + v + "'");
    }
    c.seed = s;
  } else if (key == "omega_min") {
    c.omega_min = parse_double(key, v);
  } else if (key == "omega_sigma") {
    c.omega_sigma = parse_double(key, v);
  } else if (key == "damping") {
    c.torque.damping = parse_double(key, v);
  } else if (key == "gain") {
    c.torque.gain = parse_double(key, v) * Mat3::Identity();
  } else if (key == "dipole") {
    c.torque.dipole = parse_vec3(key, v);
  } else if (key == "field") {
    c.torque.field = parse_vec3(key, v);
  } else {
    throw ConfigError("config: unknown key '" + std::string(key) + "'");
  }
}

ScenarioConfig parse_scenario_config(std::string_view text) {
  ScenarioConfig c;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    apply_scenario_setting(c, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  c.validate();
  return c;
}

ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_config(ss.str());
}

}  // namespace sgncde::sim
