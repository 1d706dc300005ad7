#pragma once

#include "sgncde/sg_filter.hpp"

#include <memory>
#include <vector>

namespace sgncde::forecast {

using sg::RotationTrajectory;
using sg::Vec10;
using so3::Rotation;
using so3::Vec9;

/// A smooth-by-pieces driving signal X_t = (t, x_t), x_t in R^9, defined for t >= t_begin().
/// Within one piece the signal is smooth; pieces change only at breakpoints().
class Control {
 public:
  virtual ~Control() = default;

  virtual double t_begin() const = 0;
  /// Time after which the signal is extrapolated.
  virtual double t_last() const = 0;
  virtual std::vector<double> breakpoints() const = 0;
  /// Throws OutOfSupportError for t < t_begin().
  virtual std::size_t piece_for(double t) const = 0;
  virtual Vec9 value(double t, std::size_t piece) const = 0;
  /// dX/dt = (1, dx/dt).
  virtual Vec10 derivative(double t, std::size_t piece) const = 0;

  Vec9 value(double t) const { return value(t, piece_for(t)); }
  Vec10 derivative(double t) const { return derivative(t, piece_for(t)); }
};

/// SG control path on SO(3), flattened row-major.
class SGControl final : public Control {
 public:
  explicit SGControl(sg::FittedPath fitted) : fitted_(std::move(fitted)) {}
  using Control::derivative;
  using Control::value;

  double t_begin() const override { return fitted_.path.t_begin(); }
  double t_last() const override { return fitted_.path.t_end(); }
  std::vector<double> breakpoints() const override { return fitted_.path.switch_points(); }
  std::size_t piece_for(double t) const override { return fitted_.path.anchor_for(t); }
  Vec9 value(double t, std::size_t piece) const override;
  Vec10 derivative(double t, std::size_t piece) const override { return fitted_.path.derivative_9d(t, piece); }

  const sg::ControlPath& path() const { return fitted_.path; }
  const sg::FittedPath& fitted() const { return fitted_; }

 private:
  sg::FittedPath fitted_;
};

/// Cubic Hermite spline through the raw 9D observations with backward-difference knot
/// slopes (the first knot uses the forward difference); linear with the last slope beyond t_N.
/// Pieces are the knot intervals plus the extrapolation piece, so t_N is a breakpoint.
class HermiteControl final : public Control {
 public:
  /// Needs at least two samples.
  explicit HermiteControl(const RotationTrajectory& traj);
  using Control::derivative;
  using Control::value;

  double t_begin() const override { return times_.front(); }
  double t_last() const override { return times_.back(); }
  std::vector<double> breakpoints() const override;
  std::size_t piece_for(double t) const override;
  Vec9 value(double t, std::size_t piece) const override;
  Vec10 derivative(double t, std::size_t piece) const override;

  const std::vector<Vec9>& slopes() const { return slopes_; }

 private:
  std::vector<double> times_;
  std::vector<Vec9> knots_;
  std::vector<Vec9> slopes_;
};

/// Piece-constant integration interval.
struct Segment {
  double begin = 0.0;
  double end = 0.0;
  std::size_t piece = 0;
};

/// Splits [t0, last(stops)] at every stop and every breakpoint; the piece of each
/// segment is the one active at its midpoint. `stops` must be sorted and >= t0.
std::vector<Segment> make_segments(const Control& control, double t0, const std::vector<double>& stops);

}  // namespace sgncde::forecast
