#pragma once

#include "sgncde/so3.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace sgncde::sg {

using so3::Mat3;
using so3::Rotation;
using so3::Vec3;
using so3::Vec9;
using Vec10 = Eigen::Matrix<double, 10, 1>;

/// Time-stamped rotations with strictly increasing timestamps.
class RotationTrajectory {
 public:
  RotationTrajectory() = default;
  /// Throws InvalidInputError on size mismatch or non-increasing times.
  RotationTrajectory(std::vector<double> times, std::vector<Rotation> rotations);

  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }
  double time(std::size_t k) const { return times_[k]; }
  const Rotation& rotation(std::size_t k) const { return rotations_[k]; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<Rotation>& rotations() const { return rotations_; }

  /// Samples [first, first + count).
  RotationTrajectory slice(std::size_t first, std::size_t count) const;

 private:
  std::vector<double> times_;
  std::vector<Rotation> rotations_;
};

/// Second-order Lie-algebra polynomial around an anchor sample.
struct Coefficients {
  Vec3 rho0 = Vec3::Zero();
  Vec3 rho1 = Vec3::Zero();
  Vec3 rho2 = Vec3::Zero();
  double anchor_time = 0.0;
  Rotation anchor_rotation;

  Vec9 stacked() const;
  void set_stacked(const Vec9& rho);
};

/// Least-squares system of one (possibly clipped) window.
struct WindowSystem {
  Eigen::MatrixXd a_hat;     // rows x (p + 1)
  Eigen::MatrixXd a;         // 3 rows x 3 (p + 1), equals a_hat (x) I3
  Eigen::VectorXd b;         // stacked vee(Log(x_{k+m} x_k^-1))
  std::vector<int> offsets;  // m for each row of a_hat
  int anchor = 0;
  int half_window = 0;
  double anchor_time = 0.0;
  Rotation anchor_rotation;
};

/// One learnable scalar per window offset m in [-n, n]; effective weight softplus(raw).
class Weights {
 public:
  Weights() = default;
  explicit Weights(Eigen::VectorXd raw);
  /// All effective weights equal to one.
  static Weights uniform(int half_window);

  int half_window() const { return static_cast<int>(raw_.size() - 1) / 2; }
  const Eigen::VectorXd& raw() const { return raw_; }
  Eigen::VectorXd& raw() { return raw_; }
  /// Effective weight for offset m.
  double effective(int offset) const;
  Eigen::VectorXd effective() const;

 private:
  Eigen::VectorXd raw_;
};

double softplus(double x);
double softplus_inverse(double y);

struct PolynomialValue {
  Vec3 value;
  Vec3 derivative;
};

/// Builds the system around anchor k from samples max(0, k-n) .. min(N, k+n).
/// Throws WindowError if a relative rotation in the window is near-antipodal.
WindowSystem build_window_system(const RotationTrajectory& traj, int k, int n, int order = 2);

/// rho = (A^T W A)^-1 A^T W b via Cholesky. Throws SingularWindowError when cond > 1e12.
Coefficients solve_coefficients(const WindowSystem& sys, const Weights* weights = nullptr);

/// Gradient of <upstream, rho> with respect to the raw weight parameters (length 2n+1).
Eigen::VectorXd solve_coefficients_grad(const WindowSystem& sys, const Weights& weights,
                                        const Vec9& upstream);

PolynomialValue eval_polynomial(const Coefficients& c, double t);

/// Piecewise SG path: nearest anchor, ties toward the lower index, final anchor beyond t_N.
class ControlPath {
 public:
  ControlPath() = default;
  explicit ControlPath(std::vector<Coefficients> coefficients);

  double t_begin() const { return coefficients_.front().anchor_time; }
  double t_end() const { return coefficients_.back().anchor_time; }
  std::size_t anchor_count() const { return coefficients_.size(); }
  const std::vector<Coefficients>& coefficients() const { return coefficients_; }

  /// Throws OutOfSupportError for t < t_0.
  std::size_t anchor_for(double t) const;

  Rotation value(double t) const;
  Rotation value(double t, std::size_t anchor) const;
  /// (1, row-major flatten of dphi/dt).
  Vec10 derivative_9d(double t) const;
  Vec10 derivative_9d(double t, std::size_t anchor) const;

  /// Interior points where the active anchor changes (midpoints between samples).
  std::vector<double> switch_points() const;

 private:
  std::vector<Coefficients> coefficients_;
};

/// Path plus the per-anchor systems it was solved from (needed for weight gradients).
struct FittedPath {
  ControlPath path;
  std::vector<WindowSystem> systems;
};

/// One polynomial per sample. Errors carry the failing anchor index.
ControlPath fit_path(const RotationTrajectory& traj, int n, const Weights* weights = nullptr);
FittedPath fit_path_with_systems(const RotationTrajectory& traj, int n, const Weights* weights = nullptr);

/// Jacobians of the 9D path value and 9D path derivative with respect to the stacked rho
/// of the anchor, at time t. Exact (forward-mode AD).
struct ControlJacobian {
  Eigen::Matrix<double, 9, 9> value;
  Eigen::Matrix<double, 9, 9> derivative;
};
ControlJacobian control_jacobian(const Coefficients& c, double t);

}  // namespace sgncde::sg
