#include "sgncde/eval_harness.hpp"

#include "sgncde/errors.hpp"
#include "sgncde/trajectory_io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace sgncde::eval {

namespace {

constexpr std::uint64_t kSplitStride = 1'000'000;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

long parse_integer(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("experiment: '" + std::string(key) + "' expects an integer, got '" + v + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("experiment: '" + std::string(key) + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("experiment: '" + std::string(key) + "' expects true or false");
}

/// Stable seed for the corruption of one window.
std::uint64_t window_seed(std::uint64_t trajectory, int window) {
  std::uint64_t x = trajectory * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(window) + 0x632BE59BD9B4E019ULL;
  x ^= x >> 33;
  x *= 0xFF51AFD7ED558CCDULL;
  x ^= x >> 33;
  return x;
}

template <class F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string format_fixed(double x, int digits) {
  if (!std::isfinite(x)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

}  // namespace

void ExperimentSpec::validate() const {
  if (scenarios.empty()) throw ConfigError("experiment needs at least one scenario");
  if (models.empty()) throw ConfigError("experiment needs at least one model");
  std::set<std::string> names;
  for (const Scenario& s : scenarios) {
    s.config.validate();
    if (!names.insert(s.name).second) throw ConfigError("duplicate scenario name '" + s.name + "'");
  }
  std::set<std::string> model_names;
  for (const std::string& m : models) {
    if (!is_known_model(m)) {
      throw ConfigError("unknown model '" + m +
                        "' (valid: sg-ncde, hermite-ncde, gru, constant-velocity, identity, oracle)");
    }
    if (!model_names.insert(m).second) throw ConfigError("duplicate model '" + m + "'");
  }
  if (split.train < 1 || split.val < 0 || split.test < 1) throw ConfigError("split sizes must be positive");
  if (split.train >= static_cast<int>(kSplitStride) || split.val >= static_cast<int>(kSplitStride) ||
      split.test >= static_cast<int>(kSplitStride)) {
    throw ConfigError("split sizes must stay below 1000000 trajectories");
  }
  if (window.history < 2 || window.horizon < 1 || window.stride < 0) throw ConfigError("invalid window sizes");
  if (window.min_history < 3 || window.min_history > window.history) {
    throw ConfigError("min_history must be in [3, history]");
  }
  for (const Scenario& s : scenarios) {
    if (windows_per_trajectory(s.config, window) < 1) {
      throw ConfigError("scenario '" + s.name + "' is too short for one history + horizon window");
    }
  }
  training.validate();
}

ExperimentSpec default_experiment() {
  ExperimentSpec spec;
  Scenario s;
  s.config.variant = sim::TorqueVariant::damped;
  s.config.torque.variant = sim::TorqueVariant::damped;
  s.config.noise_sigma = 0.05;
  s.config.drop_prob = 0.3;
  s.name = "damped";
  spec.scenarios.push_back(s);
  spec.models = {"sg-ncde", "gru", "hermite-ncde", "constant-velocity", "identity", "oracle"};
  return spec;
}

void apply_experiment_setting(ExperimentSpec& spec, std::string_view key, std::string_view value) {
  if (key == "variants") {
    const std::vector<std::string> names = split_list(value);
    if (names.empty()) throw ConfigError("experiment: 'variants' is empty");
    const sim::ScenarioConfig base = spec.scenarios.empty() ? sim::ScenarioConfig{} : spec.scenarios.front().config;
    spec.scenarios.clear();
    for (const std::string& n : names) {
      Scenario s{n, base};
      sim::apply_scenario_setting(s.config, "variant", n);
      spec.scenarios.push_back(s);
    }
  } else if (key == "models") {
    spec.models = split_list(value);
  } else if (key == "train_trajectories") {
    spec.split.train = static_cast<int>(parse_integer(key, value));
  } else if (key == "val_trajectories") {
    spec.split.val = static_cast<int>(parse_integer(key, value));
  } else if (key == "test_trajectories") {
    spec.split.test = static_cast<int>(parse_integer(key, value));
  } else if (key == "history") {
    spec.window.history = static_cast<int>(parse_integer(key, value));
  } else if (key == "horizon") {
    spec.window.horizon = static_cast<int>(parse_integer(key, value));
  } else if (key == "stride") {
    spec.window.stride = static_cast<int>(parse_integer(key, value));
  } else if (key == "min_history") {
    spec.window.min_history = static_cast<int>(parse_integer(key, value));
  } else if (key == "seed") {
    const long s = parse_integer(key, value);
    if (s < 0) throw ConfigError("experiment: 'seed' must be non-negative");
    spec.seed = static_cast<std::uint64_t>(s);
    spec.training.seed = spec.seed;
  } else if (key == "epochs") {
    spec.training.epochs = static_cast<int>(parse_integer(key, value));
  } else if (key == "batch_size") {
    spec.training.batch_size = static_cast<int>(parse_integer(key, value));
  } else if (key == "lr") {
    spec.training.lr = parse_real(key, value);
  } else if (key == "grad_clip") {
    spec.training.grad_clip = parse_real(key, value);
  } else if (key == "max_steps") {
    spec.training.max_steps = parse_integer(key, value);
  } else if (key == "rk4_steps") {
    spec.training.rk4_steps = static_cast<int>(parse_integer(key, value));
  } else if (key == "keep_best") {
    spec.training.keep_best = parse_bool(key, value);
  } else if (key == "val_every") {
    spec.training.val_every = static_cast<int>(parse_integer(key, value));
  } else if (key == "half_window") {
    spec.arch.half_window = static_cast<int>(parse_integer(key, value));
  } else if (key == "latent") {
    spec.arch.latent = static_cast<int>(parse_integer(key, value));
  } else if (key == "hidden") {
    spec.arch.hidden = static_cast<int>(parse_integer(key, value));
  } else if (key == "gru_hidden") {
    spec.arch.gru_hidden = static_cast<int>(parse_integer(key, value));
  } else if (key == "gru_layers") {
    spec.arch.gru_layers = static_cast<int>(parse_integer(key, value));
  } else {
    if (spec.scenarios.empty()) throw ConfigError("experiment: '" + std::string(key) + "' needs a scenario");
    for (Scenario& s : spec.scenarios) sim::apply_scenario_setting(s.config, key, value);
  }
}

ExperimentSpec parse_experiment_spec(std::string_view text, ExperimentSpec base) {
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("experiment line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_experiment_setting(base, trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
  }
  return base;
}

std::uint64_t trajectory_seed(std::uint64_t base, int split, int index) {
  return base * 4 * kSplitStride + static_cast<std::uint64_t>(split) * kSplitStride + static_cast<std::uint64_t>(index);
}

int windows_per_trajectory(const sim::ScenarioConfig& scenario, const WindowConfig& window) {
  const auto samples = static_cast<long>(std::floor(scenario.duration_s * scenario.sample_hz + 1e-9)) + 1;
  const long span = window.history + window.horizon;
  if (samples < span) return 0;
  return static_cast<int>((samples - span) / window.effective_stride() + 1);
}

std::vector<Sample> make_windows(const sim::ScenarioConfig& scenario, const WindowConfig& window,
                                 std::uint64_t trajectory_seed) {
  sim::ScenarioConfig clean = scenario;
  clean.seed = trajectory_seed;
  clean.noise_sigma = 0.0;
  clean.drop_prob = 0.0;
  clean.jitter = 0.0;
  const sim::SimulationResult result = sim::simulate(clean);
  const auto& truth = result.truth;

  std::vector<Sample> out;
  const int count = windows_per_trajectory(scenario, window);
  for (int w = 0; w < count; ++w) {
    const std::size_t first = static_cast<std::size_t>(w) * static_cast<std::size_t>(window.effective_stride());
    const auto hist_len = static_cast<std::size_t>(window.history);
    const sg::RotationTrajectory clean_history = truth.slice(first, hist_len);
    std::mt19937_64 rng(window_seed(trajectory_seed, w));
    sg::RotationTrajectory history;
    do {
      history = sim::corrupt(clean_history, scenario.noise_sigma, rng);
      history = sim::subsample_irregular(history, scenario.drop_prob, scenario.jitter, rng);
    } while (history.size() < static_cast<std::size_t>(window.min_history));

    Sample s;
    s.history = std::move(history);
    s.trajectory = trajectory_seed;
    s.window = w;
    for (int j = 0; j < window.horizon; ++j) {
      const std::size_t k = first + hist_len + static_cast<std::size_t>(j);
      s.query_times.push_back(truth.time(k));
      s.future.push_back(truth.rotation(k));
    }
    out.push_back(std::move(s));
  }
  return out;
}

Dataset build_dataset(const sim::ScenarioConfig& scenario, const SplitSizes& split, const WindowConfig& window,
                      std::uint64_t seed) {
  scenario.validate();
  Dataset d;
  const auto fill = [&](int which, int count, std::vector<Sample>& samples, std::vector<std::uint64_t>& seeds) {
    for (int i = 0; i < count; ++i) {
      const std::uint64_t s = trajectory_seed(seed, which, i);
      seeds.push_back(s);
      for (Sample& w : make_windows(scenario, window, s)) samples.push_back(std::move(w));
    }
  };
  fill(0, split.train, d.train, d.train_seeds);
  fill(1, split.val, d.val, d.val_seeds);
  fill(2, split.test, d.test, d.test_seeds);
  return d;
}

Predictor predictor_for(const forecast::Forecaster& model) {
  return [&model](const Sample& s) { return model.forecast(s.request()); };
}

Predictor oracle_predictor() {
  return [](const Sample& s) {
    ForecastResult r;
    r.rotations = s.future;
    return r;
  };
}

ResultRow aggregate(const std::string& model, const std::string& scenario,
                    const std::vector<std::optional<ForecastResult>>& predictions, std::span<const Sample> test) {
  if (predictions.size() != test.size()) throw UsageError("aggregate: prediction and sample counts differ");
  ResultRow row;
  row.model = model;
  row.scenario = scenario;
  std::size_t horizon = 0;
  for (const Sample& s : test) horizon = std::max(horizon, s.future.size());
  std::vector<double> step_sum(horizon, 0.0);
  std::vector<long> step_count(horizon, 0);
  std::vector<double> errors;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!predictions[i]) {
      ++row.failures;
      continue;
    }
    const ForecastResult& p = *predictions[i];
    row.degenerate += p.degenerate;
    for (std::size_t j = 0; j < test[i].future.size(); ++j) {
      const double e = so3::geodesic_error(p.rotations.at(j), test[i].future[j]) * kRadToDeg;
      errors.push_back(e);
      step_sum[j] += e;
      ++step_count[j];
    }
  }
  row.count = static_cast<long>(errors.size());
  if (!errors.empty()) {
    double sum = 0.0;
    for (double e : errors) sum += e;
    row.mean_deg = sum / static_cast<double>(errors.size());
    double var = 0.0;
    for (double e : errors) var += (e - row.mean_deg) * (e - row.mean_deg);
    row.std_deg = std::sqrt(var / static_cast<double>(errors.size()));
  } else {
    row.mean_deg = row.std_deg = std::nan("");
  }
  for (std::size_t j = 0; j < horizon; ++j) {
    row.step_mean_deg.push_back(step_count[j] > 0 ? step_sum[j] / static_cast<double>(step_count[j]) : std::nan(""));
  }
  return row;
}

Evaluation evaluate(const std::string& model, const std::string& scenario, const Predictor& predict,
                    std::span<const Sample> test, int threads) {
  Evaluation e;
  e.predictions.resize(test.size());
  parallel_for(test.size(), threads, [&](std::size_t i) {
    try {
      ForecastResult r = predict(test[i]);
      if (r.rotations.size() != test[i].future.size()) throw UsageError("forecast returned the wrong horizon");
      e.predictions[i] = std::move(r);
    } catch (const Error&) {
      e.predictions[i].reset();
    }
  });
  e.row = aggregate(model, scenario, e.predictions, test);
  return e;
}

std::string format_prediction_csv(const Evaluation& e, std::span<const Sample> test, std::uint64_t trajectory) {
  std::ostringstream os;
  os << "window,step,t,qw,qx,qy,qz,true_qw,true_qx,true_qy,true_qz,rge_rad\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Sample& s = test[i];
    if (s.trajectory != trajectory || !e.predictions[i]) continue;
    for (std::size_t j = 0; j < s.future.size(); ++j) {
      const so3::Rotation& p = e.predictions[i]->rotations[j];
      const so3::Quaternion q = so3::to_quaternion(p);
      const so3::Quaternion g = so3::to_quaternion(s.future[j]);
      os << s.window << ',' << j + 1 << ',' << io::format_double(s.query_times[j]);
      for (double v : {q.w, q.x, q.y, q.z, g.w, g.x, g.y, g.z}) os << ',' << io::format_double(v);
      os << ',' << io::format_double(so3::geodesic_error(p, s.future[j])) << '\n';
    }
  }
  return os.str();
}

void write_prediction_dump(const std::string& dir, const Evaluation& e, std::span<const Sample> test) {
  std::vector<std::uint64_t> trajectories;
  for (const Sample& s : test) {
    if (trajectories.empty() || trajectories.back() != s.trajectory) trajectories.push_back(s.trajectory);
  }
  const std::filesystem::path base = std::filesystem::path(dir) / e.row.model / e.row.scenario;
  for (std::uint64_t t : trajectories) {
    io::write_file_atomic((base / ("traj_" + std::to_string(t) + ".csv")).string(), format_prediction_csv(e, test, t));
  }
}

bool is_reference_model(std::string_view name) {
  return name == "constant-velocity" || name == "identity" || name == "oracle";
}

bool is_known_model(std::string_view name) {
  return is_reference_model(name) || name == "sg-ncde" || name == "hermite-ncde" || name == "gru";
}

std::unique_ptr<forecast::NeuralModel> train_model(forecast::ModelKind kind, const ExperimentSpec& spec,
                                                   const Dataset& data, train::TrainingResult* result,
                                                   const train::EpochCallback& on_epoch) {
  auto model = forecast::make_model(kind, spec.arch, spec.seed);
  train::TrainingConfig cfg = spec.training;
  cfg.seed = spec.seed;
  train::TrainingResult r = train::train(*model, data.train, data.val, cfg, nullptr, on_epoch);
  if (result) *result = std::move(r);
  return model;
}

std::map<std::string, std::vector<std::string>> rank(const std::vector<ResultRow>& rows) {
  std::map<std::string, std::vector<const ResultRow*>> by_scenario;
  for (const ResultRow& r : rows) by_scenario[r.scenario].push_back(&r);
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [scenario, list] : by_scenario) {
    std::stable_sort(list.begin(), list.end(), [](const ResultRow* a, const ResultRow* b) {
      const bool fa = std::isfinite(a->mean_deg);
      const bool fb = std::isfinite(b->mean_deg);
      if (fa != fb) return fa;
      return fa && a->mean_deg < b->mean_deg;
    });
    for (const ResultRow* r : list) out[scenario].push_back(r->model);
  }
  return out;
}

CompareResult compare(const ExperimentSpec& spec, int threads, const Progress& progress) {
  spec.validate();
  CompareResult out;
  struct Cell {
    std::size_t scenario;
    std::string model;
  };
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < spec.scenarios.size(); ++s)
    for (const std::string& m : spec.models) cells.push_back({s, m});

  std::vector<Dataset> data(spec.scenarios.size());
  parallel_for(spec.scenarios.size(), threads, [&](std::size_t s) {
    data[s] = build_dataset(spec.scenarios[s].config, spec.split, spec.window, spec.seed);
  });

  out.rows.resize(cells.size());
  out.evaluations.resize(cells.size());
  out.training.resize(cells.size());
  std::mutex progress_mutex;
  const auto report = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(progress_mutex);
    progress(msg);
  };
  // Cells run concurrently; each forecasts its test set sequentially so results do not
  // depend on the thread count.
  parallel_for(cells.size(), threads, [&](std::size_t c) {
    const Cell& cell = cells[c];
    const Scenario& scenario = spec.scenarios[cell.scenario];
    const Dataset& d = data[cell.scenario];
    if (cell.model == "oracle") {
      out.evaluations[c] = evaluate(cell.model, scenario.name, oracle_predictor(), d.test);
    } else if (cell.model == "identity") {
      const forecast::Identity m;
      out.evaluations[c] = evaluate(cell.model, scenario.name, predictor_for(m), d.test);
    } else if (cell.model == "constant-velocity") {
      const forecast::ConstantVelocity m;
      out.evaluations[c] = evaluate(cell.model, scenario.name, predictor_for(m), d.test);
    } else {
      try {
        const auto kind = forecast::parse_model_kind(cell.model);
        report("training " + cell.model + " on " + scenario.name);
        const auto model = train_model(kind, spec, d, &out.training[c], [&](const ckpt::EpochRecord& rec) {
          std::ostringstream os;
          os << cell.model << '/' << scenario.name << " epoch " << rec.epoch << " loss " << rec.train_loss
             << " train_rge " << rec.train_rge << " val_rge " << rec.val_rge;
          report(os.str());
        });
        out.evaluations[c] = evaluate(cell.model, scenario.name, predictor_for(*model), d.test);
      } catch (const DivergenceError& e) {
        ResultRow row;
        row.model = cell.model;
        row.scenario = scenario.name;
        row.mean_deg = row.std_deg = std::nan("");
        row.failures = static_cast<long>(d.test.size());
        row.error = e.what();
        out.evaluations[c].row = row;
        out.evaluations[c].predictions.assign(d.test.size(), std::nullopt);
      }
    }
    out.rows[c] = out.evaluations[c].row;
    report("evaluated " + cell.model + " on " + scenario.name + ": " + format_fixed(out.rows[c].mean_deg, 3) + " deg");
  });
  out.ranking = rank(out.rows);
  return out;
}

std::string format_results_csv(const std::vector<ResultRow>& rows) {
  std::size_t horizon = 0;
  for (const ResultRow& r : rows) horizon = std::max(horizon, r.step_mean_deg.size());
  std::ostringstream os;
  os << "model,scenario,mean_deg,std_deg,count,failures,degenerate";
  for (std::size_t j = 0; j < horizon; ++j) os << ",step" << j + 1 << "_deg";
  os << ",error\n";
  for (const ResultRow& r : rows) {
    os << r.model << ',' << r.scenario << ',' << io::format_double(r.mean_deg) << ',' << io::format_double(r.std_deg)
       << ',' << r.count << ',' << r.failures << ',' << r.degenerate;
    for (std::size_t j = 0; j < horizon; ++j) {
      os << ',' << (j < r.step_mean_deg.size() ? io::format_double(r.step_mean_deg[j]) : "");
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << ',' << err << '\n';
  }
  return os.str();
}

std::string format_results_table(const std::vector<ResultRow>& rows) {
  std::vector<std::array<std::string, 6>> cells;
  cells.push_back({"model", "scenario", "RGE (deg)", "count", "failures", "degenerate"});
  for (const ResultRow& r : rows) {
    cells.push_back({r.model, r.scenario, format_fixed(r.mean_deg, 3) + " +- " + format_fixed(r.std_deg, 3),
                     std::to_string(r.count), std::to_string(r.failures), std::to_string(r.degenerate)});
  }
  std::array<std::size_t, 6> width{};
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      os << (i == 0 ? "" : "  ") << (i < 2 ? std::left : std::right) << std::setw(static_cast<int>(width[i]))
         << cells[r][i];
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

std::string format_ranking(const std::map<std::string, std::vector<std::string>>& ranking) {
  std::ostringstream os;
  for (const auto& [scenario, models] : ranking) {
    os << scenario << ':';
    for (std::size_t i = 0; i < models.size(); ++i) os << (i == 0 ? " " : " < ") << models[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace sgncde::eval
