#include "sgncde/so3.hpp"

#include "sgncde/errors.hpp"
#include "sgncde/so3_generic.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace sgncde::so3 {

double orthogonality_residual(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).norm();
}

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  if (!m.allFinite()) {
    throw InvalidInputError("rotation matrix has non-finite entries");
  }
  const double ortho = orthogonality_residual(m);
  const double det = m.determinant();
  if (ortho > tol || std::abs(det - 1.0) > tol) {
    std::ostringstream os;
    os << "not a rotation: ||R^T R - I||_F = " << ortho << ", det = " << det;
    throw InvalidInputError(os.str());
  }
  return unchecked(m);
}

Mat3 hat(const Vec3& v) { return generic::hat<double>(v); }

Vec3 vee(const Mat3& m, double tol) {
  if ((m + m.transpose()).cwiseAbs().maxCoeff() > tol || m.diagonal().cwiseAbs().maxCoeff() > tol) {
    throw InvalidInputError("vee: matrix is not skew-symmetric");
  }
  return Vec3(m(2, 1), m(0, 2), m(1, 0));
}

Rotation exp_so3(const Vec3& v) { return Rotation::unchecked(generic::exp<double>(v)); }

double rotation_angle(const Rotation& r) {
  const Mat3& m = r.matrix();
  const Vec3 axial(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  const double s = 0.5 * axial.norm();
  const double c = 0.5 * (m.trace() - 1.0);
  return std::atan2(s, c);
}

Vec3 log_so3(const Rotation& r) {
  const Mat3& m = r.matrix();
  const Vec3 axial(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  const double s = 0.5 * axial.norm();
  const double c = 0.5 * (m.trace() - 1.0);
  const double theta = std::atan2(s, c);
  if (theta >= std::numbers::pi - kAntipodalMargin) {
    std::ostringstream os;
    os << "log_so3: rotation angle " << theta << " is within " << kAntipodalMargin << " of pi";
    throw NearAntipodalError(os.str());
  }
  // theta / (2 sin theta)
  double k;
  if (theta < kSmallAngle) {
    k = 0.5 + theta * theta / 12.0;
  } else {
    k = theta / (2.0 * std::sin(theta));
  }
  return k * axial;
}

double geodesic_error(const Rotation& a, const Rotation& b) {
  const double x = (b.matrix() - a.matrix()).norm() / (2.0 * std::numbers::sqrt2);
  return 2.0 * std::asin(std::clamp(x, 0.0, 1.0));
}

bool is_degenerate(const Rotation6D& r) {
  constexpr double kEps = 1e-12;
  const double n1 = r.nu1.norm();
  if (!(n1 > kEps)) return true;
  const Vec3 e1 = r.nu1 / n1;
  const double n2 = (r.nu2 - e1.dot(r.nu2) * e1).norm();
  return !(n2 > kEps * std::max(1.0, r.nu2.norm()));
}

Rotation gram_schmidt(const Rotation6D& r) {
  constexpr double kEps = 1e-12;
  const double n1 = r.nu1.norm();
  if (!(n1 > kEps)) {
    throw Degenerate6DError("gram_schmidt: first column has (near) zero norm");
  }
  const Vec3 e1 = r.nu1 / n1;
  const Vec3 u2 = r.nu2 - e1.dot(r.nu2) * e1;
  const double n2 = u2.norm();
  if (!(n2 > kEps * std::max(1.0, r.nu2.norm()))) {
    throw Degenerate6DError("gram_schmidt: columns are parallel");
  }
  const Vec3 e2 = u2 / n2;
  Mat3 m;
  m.col(0) = e1;
  m.col(1) = e2;
  m.col(2) = e1.cross(e2);
  return Rotation::unchecked(m);
}

Vec9 to_9d(const Rotation& r) {
  Vec9 out;
  const Mat3& m = r.matrix();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out(3 * i + j) = m(i, j);
    }
  }
  return out;
}

Rotation6D to_6d(const Rotation& r) { return {r.matrix().col(0), r.matrix().col(1)}; }

Mat3 left_jacobian(const Vec3& v) { return generic::left_jacobian<double>(v); }

Rotation sample_uniform_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double u1 = uni(rng);
  const double u2 = uni(rng);
  const double u3 = uni(rng);
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double two_pi = 2.0 * std::numbers::pi;
  Quaternion q;
  q.x = a * std::sin(two_pi * u2);
  q.y = a * std::cos(two_pi * u2);
  q.z = b * std::sin(two_pi * u3);
  q.w = b * std::cos(two_pi * u3);
  return from_quaternion(q);
}

Rotation project_to_so3(const Mat3& m) {
  if (!m.allFinite()) {
    throw InvalidInputError("project_to_so3: non-finite input");
  }
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(2) > 1e-12 * std::max(1.0, sv(0)))) {
    throw InvalidInputError("project_to_so3: singular input");
  }
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return Rotation::unchecked(u * d * v.transpose());
}

Quaternion to_quaternion(const Rotation& r) {
  // Shepperd's method: branch on the largest of the four squared components.
  const Mat3& m = r.matrix();
  const double tr = m.trace();
  Quaternion q;
  if (tr >= m(0, 0) && tr >= m(1, 1) && tr >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
    q.z = 0.25 * s;
  }
  const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
  const double sign = q.w < 0.0 ? -1.0 : 1.0;
  q.w *= sign / n;
  q.x *= sign / n;
  q.y *= sign / n;
  q.z *= sign / n;
  return q;
}

Rotation from_quaternion(const Quaternion& q_in) {
  const double n = std::sqrt(q_in.w * q_in.w + q_in.x * q_in.x + q_in.y * q_in.y + q_in.z * q_in.z);
  if (!(n > 1e-12) || !std::isfinite(n)) {
    throw InvalidInputError("from_quaternion: zero or non-finite quaternion");
  }
  const double w = q_in.w / n, x = q_in.x / n, y = q_in.y / n, z = q_in.z / n;
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
       2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
       2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return Rotation::unchecked(m);
}

}  // namespace sgncde::so3
