#pragma once

#include <Eigen/Core>

#include <random>

namespace sgncde::so3 {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec9 = Eigen::Matrix<double, 9, 1>;

/// Tolerance on ||R^T R - I||_F and |det R - 1| for a matrix to count as a rotation.
inline constexpr double kRotationTolerance = 1e-9;
/// Below this angle exp/log switch to Taylor-expanded coefficients.
inline constexpr double kSmallAngle = 1e-4;
/// Log is refused for angles closer than this to pi.
inline constexpr double kAntipodalMargin = 1e-6;

/**
 * A 3x3 orthonormal matrix with determinant +1.
 *
 * Construction through from_matrix() validates the invariants; the library's
 * own constructors (exp_so3, gram_schmidt, project_to_so3, ...) produce
 * rotations by construction and use the unchecked path.
 */
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }

  /// Throws InvalidInputError if m is not a rotation within `tol`.
  static Rotation from_matrix(const Mat3& m, double tol = kRotationTolerance);

  /// No validation; caller guarantees the invariants.
  static Rotation unchecked(const Mat3& m) {
    Rotation r;
    r.m_ = m;
    return r;
  }

  const Mat3& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  Rotation inverse() const { return unchecked(m_.transpose()); }
  Rotation operator*(const Rotation& other) const { return unchecked(m_ * other.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  bool operator==(const Rotation& other) const { return m_ == other.m_; }

 private:
  Mat3 m_;
};

/// The 6D representation: first two columns of a rotation matrix.
struct Rotation6D {
  Vec3 nu1;
  Vec3 nu2;
};

/// Unit quaternion, scalar first.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

Mat3 hat(const Vec3& v);

/// Inverse of hat. Throws InvalidInputError if m is not skew within `tol`.
Vec3 vee(const Mat3& m, double tol = kRotationTolerance);

/// Rodrigues formula.
Rotation exp_so3(const Vec3& v);

/// Principal logarithm; throws NearAntipodalError when the angle is within 1e-6 of pi.
Vec3 log_so3(const Rotation& r);

/// Rotation angle in [0, pi], computed with atan2 for accuracy at both ends.
double rotation_angle(const Rotation& r);

/// 2 asin(||R2 - R1||_F / (2 sqrt 2)), in radians.
double geodesic_error(const Rotation& a, const Rotation& b);

/// Throws Degenerate6DError for a (near) zero first column or parallel columns.
Rotation gram_schmidt(const Rotation6D& r);
/// True when gram_schmidt(r) would throw.
bool is_degenerate(const Rotation6D& r);

/// Row-major flattening.
Vec9 to_9d(const Rotation& r);
Rotation6D to_6d(const Rotation& r);

/// Left Jacobian of SO(3): d/dt Exp(p(t)) = hat(J_l(p) p') Exp(p).
Mat3 left_jacobian(const Vec3& v);

/// Uniform (Haar) rotation from three uniform numbers (Shoemake).
Rotation sample_uniform_rotation(std::mt19937_64& rng);

/// Nearest rotation in Frobenius norm. Throws InvalidInputError for singular input.
Rotation project_to_so3(const Mat3& m);

/// Quaternion with qw >= 0.
Quaternion to_quaternion(const Rotation& r);
/// Normalizes q before conversion; throws InvalidInputError for a zero quaternion.
Rotation from_quaternion(const Quaternion& q);

/// ||R^T R - I||_F.
double orthogonality_residual(const Mat3& m);

}  // namespace sgncde::so3
