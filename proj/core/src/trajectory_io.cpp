#include "sgncde/trajectory_io.hpp"

#include "sgncde/errors.hpp"

#include <unistd.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace sgncde::io {

namespace {

constexpr std::string_view kHeader = "t,qw,qx,qy,qz";

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_field(std::string_view s, int line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidInputError("trajectory CSV line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string format_trajectory_csv(const sg::RotationTrajectory& traj) {
  std::string out(kHeader);
  out += '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const so3::Quaternion q = so3::to_quaternion(traj.rotation(k));
    out += format_double(traj.time(k));
    for (double v : {q.w, q.x, q.y, q.z}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

sg::RotationTrajectory parse_trajectory_csv(std::string_view text) {
  std::vector<double> times;
  std::vector<so3::Rotation> rots;
  int line_no = 0;
  bool header_seen = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kHeader) {
        throw InvalidInputError("trajectory CSV: expected header '" + std::string(kHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() != 5) {
      throw InvalidInputError("trajectory CSV line " + std::to_string(line_no) + ": expected 5 fields");
    }
    times.push_back(parse_field(fields[0], line_no));
    so3::Quaternion q{parse_field(fields[1], line_no), parse_field(fields[2], line_no),
                      parse_field(fields[3], line_no), parse_field(fields[4], line_no)};
    const double n2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z;
    if (std::abs(n2 - 1.0) > 1e-6) {
      throw InvalidInputError("trajectory CSV line " + std::to_string(line_no) + ": quaternion is not unit norm");
    }
    rots.push_back(so3::from_quaternion(q));
  }
  if (!header_seen) throw InvalidInputError("trajectory CSV: empty input");
  return sg::RotationTrajectory(std::move(times), std::move(rots));
}

sg::RotationTrajectory load_trajectory_csv(const std::string& path) { return parse_trajectory_csv(read_file(path)); }

void save_trajectory_csv(const std::string& path, const sg::RotationTrajectory& traj) {
  write_file_atomic(path, format_trajectory_csv(traj));
}

void write_file_atomic(const std::string& path, std::string_view contents) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error("failed writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace sgncde::io
