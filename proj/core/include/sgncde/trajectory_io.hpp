#pragma once

#include "sgncde/sg_filter.hpp"

#include <string>
#include <string_view>

namespace sgncde::io {

/// CSV with header `t,qw,qx,qy,qz`; unit quaternion, scalar first, qw >= 0.
std::string format_trajectory_csv(const sg::RotationTrajectory& traj);
/// Throws InvalidInputError on a malformed header, row, or timestamp order.
sg::RotationTrajectory parse_trajectory_csv(std::string_view text);

sg::RotationTrajectory load_trajectory_csv(const std::string& path);
void save_trajectory_csv(const std::string& path, const sg::RotationTrajectory& traj);

/// Writes to `path.tmp.<pid>` then renames over `path`, so readers never see a partial file.
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double x);

}  // namespace sgncde::io
