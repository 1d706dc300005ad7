#include "sgncde/control.hpp"

#include "sgncde/errors.hpp"

#include <algorithm>
#include <sstream>

namespace sgncde::forecast {

Vec9 SGControl::value(double t, std::size_t piece) const { return so3::to_9d(fitted_.path.value(t, piece)); }

HermiteControl::HermiteControl(const RotationTrajectory& traj) : times_(traj.times()) {
  if (traj.size() < 2) throw InvalidInputError("Hermite control needs at least two samples");
  knots_.reserve(traj.size());
  for (const auto& r : traj.rotations()) knots_.push_back(so3::to_9d(r));
  slopes_.resize(knots_.size());
  for (std::size_t k = 1; k < knots_.size(); ++k) {
    slopes_[k] = (knots_[k] - knots_[k - 1]) / (times_[k] - times_[k - 1]);
  }
  slopes_[0] = slopes_[1];
}

std::vector<double> HermiteControl::breakpoints() const {
  return std::vector<double>(times_.begin() + 1, times_.end());
}

std::size_t HermiteControl::piece_for(double t) const {
  if (t < times_.front()) {
    std::ostringstream os;
    os << "Hermite control queried at t = " << t << " before " << times_.front();
    throw OutOfSupportError(os.str());
  }
  if (t >= times_.back()) return times_.size() - 1;
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  return static_cast<std::size_t>(it - times_.begin()) - 1;
}

Vec9 HermiteControl::value(double t, std::size_t i) const {
  if (i + 1 >= times_.size()) return knots_.back() + slopes_.back() * (t - times_.back());
  const double h = times_[i + 1] - times_[i];
  const double s = (t - times_[i]) / h;
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * knots_[i] + (s3 - 2 * s2 + s) * h * slopes_[i] + (-2 * s3 + 3 * s2) * knots_[i + 1] +
         (s3 - s2) * h * slopes_[i + 1];
}

Vec10 HermiteControl::derivative(double t, std::size_t i) const {
  Vec10 out;
  out(0) = 1.0;
  if (i + 1 >= times_.size()) {
    out.tail<9>() = slopes_.back();
    return out;
  }
  const double h = times_[i + 1] - times_[i];
  const double s = (t - times_[i]) / h;
  const double s2 = s * s;
  out.tail<9>() = ((6 * s2 - 6 * s) * knots_[i] + (3 * s2 - 4 * s + 1) * h * slopes_[i] +
                   (-6 * s2 + 6 * s) * knots_[i + 1] + (3 * s2 - 2 * s) * h * slopes_[i + 1]) /
                  h;
  return out;
}

std::vector<Segment> make_segments(const Control& control, double t0, const std::vector<double>& stops) {
  if (stops.empty()) return {};
  if (t0 < control.t_begin()) throw OutOfSupportError("integration starts before the control's support");
  const double t1 = stops.back();
  std::vector<double> pts{t0};
  for (double s : stops) {
    if (s < t0) throw OutOfSupportError("integration stop before the start time");
    pts.push_back(s);
  }
  for (double b : control.breakpoints()) {
    if (b > t0 && b < t1) pts.push_back(b);
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  std::vector<Segment> segs;
  segs.reserve(pts.size());
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double mid = 0.5 * (pts[i] + pts[i + 1]);
    segs.push_back({pts[i], pts[i + 1], control.piece_for(mid)});
  }
  return segs;
}

}  // namespace sgncde::forecast
