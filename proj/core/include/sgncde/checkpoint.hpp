#pragma once

#include <Eigen/Core>

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sgncde::ckpt {

inline constexpr int kFormatVersion = 1;

struct TensorRecord {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd adam_m;
  Eigen::MatrixXd adam_v;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_rge = 0.0;  // radians
  double val_rge = 0.0;    // radians
};

/// Named tensors plus architecture metadata, optimizer state and loss history.
/// Serialized as JSON; doubles round-trip exactly.
struct Checkpoint {
  int format_version = kFormatVersion;
  std::string model;
  std::map<std::string, double> architecture;
  std::map<std::string, std::string> settings;
  std::vector<TensorRecord> tensors;
  long optimizer_steps = 0;
  std::vector<EpochRecord> history;

  const TensorRecord& tensor(const std::string& name) const;
};

std::string serialize(const Checkpoint& c);
/// Throws InvalidInputError on malformed input or an unsupported format version.
Checkpoint deserialize(std::string_view text);

void save(const std::string& path, const Checkpoint& c);
Checkpoint load(const std::string& path);

}  // namespace sgncde::ckpt
