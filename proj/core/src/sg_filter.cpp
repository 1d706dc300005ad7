#include "sgncde/sg_filter.hpp"

#include "sgncde/errors.hpp"
#include "sgncde/so3_generic.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sgncde::sg {

namespace {

constexpr double kMaxCondition = 1e12;

double factorial(int j) {
  double f = 1.0;
  for (int i = 2; i <= j; ++i) f *= i;
  return f;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Effective weight per row of a_hat (1 for every row when weights is null).
Eigen::VectorXd row_weights(const WindowSystem& sys, const Weights* weights) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(sys.offsets.size()));
  if (weights != nullptr) {
    if (weights->half_window() < sys.half_window) {
      throw InvalidInputError("weights cover fewer offsets than the window");
    }
    for (std::size_t r = 0; r < sys.offsets.size(); ++r) {
      w(static_cast<Eigen::Index>(r)) = weights->effective(sys.offsets[r]);
    }
  }
  return w;
}

struct NormalSolve {
  Eigen::MatrixXd normal;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd rho;
};

NormalSolve solve_normal(const WindowSystem& sys, const Eigen::VectorXd& w) {
  const Eigen::Index rows = sys.a.rows();
  Eigen::VectorXd w3(rows);
  for (Eigen::Index r = 0; r < w.size(); ++r) w3.segment<3>(3 * r).setConstant(w(r));
  NormalSolve out;
  out.normal = sys.a.transpose() * w3.asDiagonal() * sys.a;
  const Eigen::VectorXd rhs = sys.a.transpose() * w3.asDiagonal() * sys.b;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxCondition) {
    std::ostringstream os;
    os << "SG window at anchor " << sys.anchor << " is singular (condition "
       << (lo > 0.0 ? hi / lo : INFINITY) << ")";
    throw SingularWindowError(os.str(), sys.anchor);
  }
  out.llt.compute(out.normal);
  if (out.llt.info() != Eigen::Success) {
    throw SingularWindowError("SG normal matrix is not positive definite", sys.anchor);
  }
  out.rho = out.llt.solve(rhs);
  return out;
}

using Dual = Eigen::AutoDiffScalar<Eigen::Matrix<double, 9, 1>>;

}  // namespace

RotationTrajectory::RotationTrajectory(std::vector<double> times, std::vector<Rotation> rotations)
    : times_(std::move(times)), rotations_(std::move(rotations)) {
  if (times_.size() != rotations_.size()) {
    throw InvalidInputError("trajectory: times and rotations differ in length");
  }
  for (std::size_t k = 0; k < times_.size(); ++k) {
    if (!std::isfinite(times_[k])) {
      throw InvalidInputError("trajectory: non-finite timestamp");
    }
    if (k > 0 && !(times_[k] > times_[k - 1])) {
      std::ostringstream os;
      os << "trajectory: timestamps not strictly increasing at index " << k;
      throw InvalidInputError(os.str());
    }
  }
}

RotationTrajectory RotationTrajectory::slice(std::size_t first, std::size_t count) const {
  if (first + count > size()) {
    throw InvalidInputError("trajectory slice out of range");
  }
  const auto b = static_cast<std::ptrdiff_t>(first);
  const auto e = static_cast<std::ptrdiff_t>(first + count);
  return RotationTrajectory(std::vector<double>(times_.begin() + b, times_.begin() + e),
                            std::vector<Rotation>(rotations_.begin() + b, rotations_.begin() + e));
}

Vec9 Coefficients::stacked() const {
  Vec9 out;
  out << rho0, rho1, rho2;
  return out;
}

void Coefficients::set_stacked(const Vec9& rho) {
  rho0 = rho.segment<3>(0);
  rho1 = rho.segment<3>(3);
  rho2 = rho.segment<3>(6);
}

double softplus(double x) {
  // log(1 + e^x) without overflow.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw InvalidInputError("softplus_inverse: argument must be positive");
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

Weights::Weights(Eigen::VectorXd raw) : raw_(std::move(raw)) {
  if (raw_.size() < 3 || raw_.size() % 2 == 0) {
    throw InvalidInputError("SG weights need an odd length 2n+1 with n >= 1");
  }
}

Weights Weights::uniform(int half_window) {
  if (half_window < 1) throw InvalidInputError("SG half window must be >= 1");
  return Weights(Eigen::VectorXd::Constant(2 * half_window + 1, softplus_inverse(1.0)));
}

double Weights::effective(int offset) const {
  const int n = half_window();
  if (offset < -n || offset > n) throw InvalidInputError("SG weight offset out of range");
  return softplus(raw_(offset + n));
}

Eigen::VectorXd Weights::effective() const { return raw_.unaryExpr([](double x) { return softplus(x); }); }

WindowSystem build_window_system(const RotationTrajectory& traj, int k, int n, int order) {
  const int count = static_cast<int>(traj.size());
  if (n < 1) throw InvalidInputError("SG half window must be >= 1");
  if (order < 1) throw InvalidInputError("SG polynomial order must be >= 1");
  if (k < 0 || k >= count) throw InvalidInputError("SG anchor index out of range");

  const int first = std::max(0, k - n);
  const int last = std::min(count - 1, k + n);
  const int rows = last - first + 1;

  WindowSystem sys;
  sys.anchor = k;
  sys.half_window = n;
  sys.anchor_time = traj.time(static_cast<std::size_t>(k));
  sys.anchor_rotation = traj.rotation(static_cast<std::size_t>(k));
  sys.a_hat.resize(rows, order + 1);
  sys.a = Eigen::MatrixXd::Zero(3 * rows, 3 * (order + 1));
  sys.b.resize(3 * rows);
  sys.offsets.reserve(static_cast<std::size_t>(rows));

  const Rotation anchor_inv = sys.anchor_rotation.inverse();
  for (int r = 0; r < rows; ++r) {
    const int idx = first + r;
    const double tau = traj.time(static_cast<std::size_t>(idx)) - sys.anchor_time;
    for (int j = 0; j <= order; ++j) {
      sys.a_hat(r, j) = std::pow(tau, j) / factorial(j);
      for (int i = 0; i < 3; ++i) sys.a(3 * r + i, 3 * j + i) = sys.a_hat(r, j);
    }
    try {
      sys.b.segment<3>(3 * r) = so3::log_so3(traj.rotation(static_cast<std::size_t>(idx)) * anchor_inv);
    } catch (const NearAntipodalError& e) {
      std::ostringstream os;
      os << "SG window at anchor " << k << ": sample " << idx << " is near-antipodal to the anchor ("
         << e.what() << ")";
      throw WindowError(os.str(), k);
    }
    sys.offsets.push_back(idx - k);
  }
  return sys;
}

Coefficients solve_coefficients(const WindowSystem& sys, const Weights* weights) {
  if (sys.a.cols() != 9) {
    throw InvalidInputError("solve_coefficients expects a second-order system");
  }
  const NormalSolve s = solve_normal(sys, row_weights(sys, weights));
  Coefficients c;
  c.set_stacked(s.rho);
  c.anchor_time = sys.anchor_time;
  c.anchor_rotation = sys.anchor_rotation;
  return c;
}

Eigen::VectorXd solve_coefficients_grad(const WindowSystem& sys, const Weights& weights,
                                        const Vec9& upstream) {
  const int n = weights.half_window();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(2 * n + 1);
  const NormalSolve s = solve_normal(sys, row_weights(sys, &weights));
  if (upstream.isZero(0.0)) return grad;
  // d<g, rho>/dw_r = (M^-1 g)^T A_r^T (b_r - A_r rho)
  const Eigen::VectorXd lambda = s.llt.solve(upstream);
  const Eigen::VectorXd residual = sys.b - sys.a * s.rho;
  for (std::size_t r = 0; r < sys.offsets.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(3 * r);
    const double dw = (sys.a.middleRows(row, 3) * lambda).dot(residual.segment<3>(row));
    const int m = sys.offsets[r];
    grad(m + n) += dw * sigmoid(weights.raw()(m + n));
  }
  return grad;
}

PolynomialValue eval_polynomial(const Coefficients& c, double t) {
  const double tau = t - c.anchor_time;
  return {c.rho0 + c.rho1 * tau + 0.5 * c.rho2 * tau * tau, c.rho1 + c.rho2 * tau};
}

ControlPath::ControlPath(std::vector<Coefficients> coefficients) : coefficients_(std::move(coefficients)) {
  if (coefficients_.empty()) throw InvalidInputError("control path needs at least one anchor");
}

std::size_t ControlPath::anchor_for(double t) const {
  if (t < t_begin()) {
    std::ostringstream os;
    os << "control path queried at t = " << t << " before its support start " << t_begin();
    throw OutOfSupportError(os.str());
  }
  if (t >= t_end()) return coefficients_.size() - 1;
  auto it = std::upper_bound(coefficients_.begin(), coefficients_.end(), t,
                             [](double v, const Coefficients& c) { return v < c.anchor_time; });
  const auto hi = static_cast<std::size_t>(it - coefficients_.begin());
  const std::size_t lo = hi - 1;
  const double d_lo = t - coefficients_[lo].anchor_time;
  const double d_hi = coefficients_[hi].anchor_time - t;
  return d_lo <= d_hi ? lo : hi;
}

Rotation ControlPath::value(double t) const { return value(t, anchor_for(t)); }

Rotation ControlPath::value(double t, std::size_t anchor) const {
  const Coefficients& c = coefficients_.at(anchor);
  return so3::exp_so3(eval_polynomial(c, t).value) * c.anchor_rotation;
}

Vec10 ControlPath::derivative_9d(double t) const { return derivative_9d(t, anchor_for(t)); }

Vec10 ControlPath::derivative_9d(double t, std::size_t anchor) const {
  const Coefficients& c = coefficients_.at(anchor);
  const PolynomialValue p = eval_polynomial(c, t);
  const Rotation phi = so3::exp_so3(p.value) * c.anchor_rotation;
  const Vec3 omega = so3::left_jacobian(p.value) * p.derivative;
  const Mat3 dphi = so3::hat(omega) * phi.matrix();
  Vec10 out;
  out(0) = 1.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out(1 + 3 * i + j) = dphi(i, j);
  }
  return out;
}

std::vector<double> ControlPath::switch_points() const {
  std::vector<double> pts;
  for (std::size_t k = 0; k + 1 < coefficients_.size(); ++k) {
    pts.push_back(0.5 * (coefficients_[k].anchor_time + coefficients_[k + 1].anchor_time));
  }
  return pts;
}

FittedPath fit_path_with_systems(const RotationTrajectory& traj, int n, const Weights* weights) {
  if (n < 1) throw InvalidInputError("SG half window must be >= 1");
  if (traj.size() < 3) throw InvalidInputError("SG filtering needs at least 3 samples");
  FittedPath out;
  std::vector<Coefficients> coeffs;
  coeffs.reserve(traj.size());
  out.systems.reserve(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out.systems.push_back(build_window_system(traj, static_cast<int>(k), n));
    coeffs.push_back(solve_coefficients(out.systems.back(), weights));
  }
  out.path = ControlPath(std::move(coeffs));
  return out;
}

ControlPath fit_path(const RotationTrajectory& traj, int n, const Weights* weights) {
  return fit_path_with_systems(traj, n, weights).path;
}

ControlJacobian control_jacobian(const Coefficients& c, double t) {
  namespace g = so3::generic;
  const double tau = t - c.anchor_time;
  const Vec9 rho = c.stacked();
  Eigen::Matrix<Dual, 9, 1> r;
  for (int i = 0; i < 9; ++i) r(i) = Dual(rho(i), 9, i);

  const g::V3<Dual> p = r.segment<3>(0) + r.segment<3>(3) * Dual(tau) + r.segment<3>(6) * Dual(0.5 * tau * tau);
  const g::V3<Dual> pdot = r.segment<3>(3) + r.segment<3>(6) * Dual(tau);
  const g::M3<Dual> anchor = c.anchor_rotation.matrix().cast<Dual>();
  const g::M3<Dual> phi = g::exp<Dual>(p) * anchor;
  const g::V3<Dual> omega = g::left_jacobian<Dual>(p) * pdot;
  const g::M3<Dual> dphi = g::hat<Dual>(omega) * phi;

  ControlJacobian out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.value.row(3 * i + j) = phi(i, j).derivatives().transpose();
      out.derivative.row(3 * i + j) = dphi(i, j).derivatives().transpose();
    }
  }
  return out;
}

}  // namespace sgncde::sg
