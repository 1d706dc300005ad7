#pragma once

// Scalar-generic versions of the few SO(3) maps that the SG control path needs
// to differentiate with forward-mode AD (Eigen::AutoDiffScalar). The double
// versions in so3.hpp are the ones used everywhere else.

#include <Eigen/Core>

#include <cmath>

namespace sgncde::so3::generic {

template <typename S>
using V3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using M3 = Eigen::Matrix<S, 3, 3>;

template <typename S>
M3<S> hat(const V3<S>& v) {
  M3<S> m;
  m << S(0), -v(2), v(1),
       v(2), S(0), -v(0),
       -v(1), v(0), S(0);
  return m;
}

// Coefficients a = sin t / t, b = (1 - cos t) / t^2, c = (t - sin t) / t^3.
template <typename S>
void rodrigues_coefficients(const S& theta_sq, S& a, S& b, S& c) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  // Threshold on theta^2 so no sqrt is taken at the origin.
  if (theta_sq < S(1e-8)) {
    a = S(1) - theta_sq / S(6);
    b = S(0.5) - theta_sq / S(24);
    c = S(1.0 / 6.0) - theta_sq / S(120);
    return;
  }
  const S theta = sqrt(theta_sq);
  const S s = sin(theta);
  const S co = cos(theta);
  a = s / theta;
  b = (S(1) - co) / theta_sq;
  c = (theta - s) / (theta_sq * theta);
}

template <typename S>
M3<S> exp(const V3<S>& v) {
  S a, b, c;
  rodrigues_coefficients<S>(v.squaredNorm(), a, b, c);
  const M3<S> k = hat<S>(v);
  return M3<S>::Identity() + a * k + b * (k * k);
}

template <typename S>
M3<S> left_jacobian(const V3<S>& v) {
  S a, b, c;
  rodrigues_coefficients<S>(v.squaredNorm(), a, b, c);
  const M3<S> k = hat<S>(v);
  return M3<S>::Identity() + b * k + c * (k * k);
}

}  // namespace sgncde::so3::generic
