#include "sgncde/checkpoint.hpp"

#include "sgncde/errors.hpp"
#include "sgncde/trajectory_io.hpp"

#include "json.hpp"

namespace sgncde::ckpt {

namespace {

using json = nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw InvalidInputError("checkpoint: tensor data length does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++].get<double>();
  }
  return m;
}

}  // namespace

const TensorRecord& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw InvalidInputError("checkpoint has no tensor named '" + name + "'");
}

namespace {

// JSON has no NaN; epochs without a validation pass store null.
json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
double number_from(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

std::string serialize(const Checkpoint& c) {
  json j;
  j["format_version"] = c.format_version;
  j["model"] = c.model;
  j["architecture"] = c.architecture;
  j["settings"] = c.settings;
  j["optimizer_steps"] = c.optimizer_steps;
  json tensors = json::array();
  for (const auto& t : c.tensors) {
    json r;
    r["name"] = t.name;
    r["value"] = matrix_to_json(t.value);
    if (t.adam_m.size() > 0) r["adam_m"] = matrix_to_json(t.adam_m);
    if (t.adam_v.size() > 0) r["adam_v"] = matrix_to_json(t.adam_v);
    tensors.push_back(std::move(r));
  }
  j["tensors"] = std::move(tensors);
  json hist = json::array();
  for (const auto& e : c.history) {
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", number(e.train_loss)},
                    {"train_rge", number(e.train_rge)},
                    {"val_rge", number(e.val_rge)}});
  }
  j["history"] = std::move(hist);
  return j.dump(1);
}

Checkpoint deserialize(std::string_view text) {
  try {
    const json j = json::parse(text);
    Checkpoint c;
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != kFormatVersion) {
      throw InvalidInputError("checkpoint format version " + std::to_string(c.format_version) + " is not supported");
    }
    c.model = j.at("model").get<std::string>();
    c.architecture = j.at("architecture").get<std::map<std::string, double>>();
    c.settings = j.at("settings").get<std::map<std::string, std::string>>();
    c.optimizer_steps = j.value("optimizer_steps", 0L);
    for (const auto& r : j.at("tensors")) {
      TensorRecord t;
      t.name = r.at("name").get<std::string>();
      t.value = matrix_from_json(r.at("value"));
      if (r.contains("adam_m")) t.adam_m = matrix_from_json(r.at("adam_m"));
      if (r.contains("adam_v")) t.adam_v = matrix_from_json(r.at("adam_v"));
      c.tensors.push_back(std::move(t));
    }
    for (const auto& e : j.value("history", json::array())) {
      c.history.push_back({e.at("epoch").get<int>(), number_from(e.at("train_loss")), number_from(e.at("train_rge")),
                           number_from(e.at("val_rge"))});
    }
    return c;
  } catch (const json::exception& e) {
    throw InvalidInputError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save(const std::string& path, const Checkpoint& c) { io::write_file_atomic(path, serialize(c)); }

Checkpoint load(const std::string& path) { return deserialize(io::read_file(path)); }

}  // namespace sgncde::ckpt
