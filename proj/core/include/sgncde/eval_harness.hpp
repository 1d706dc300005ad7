#pragma once

#include "sgncde/models.hpp"
#include "sgncde/rigid_body.hpp"
#include "sgncde/training.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sgncde::eval {

using forecast::ForecastResult;
using forecast::Sample;

/// How (history, future) windows are cut from each simulated trajectory.
struct WindowConfig {
  int history = 20;     // grid samples offered as history (before drops)
  int horizon = 8;      // future grid samples to predict
  int stride = 0;       // grid offset between windows; 0 means history + horizon
  int min_history = 4;  // retained history samples required after dropping

  int effective_stride() const { return stride > 0 ? stride : history + horizon; }
};

struct SplitSizes {
  int train = 500;
  int val = 50;
  int test = 100;
};

struct Scenario {
  std::string name;
  sim::ScenarioConfig config;  // noise_sigma / drop_prob / jitter apply to histories only
};

struct ExperimentSpec {
  std::vector<Scenario> scenarios;
  /// Any of sg-ncde, hermite-ncde, gru, constant-velocity, identity, oracle.
  std::vector<std::string> models;
  SplitSizes split;
  WindowConfig window;
  std::uint64_t seed = 0;
  train::TrainingConfig training;
  forecast::Architecture arch;

  /// Throws ConfigError.
  void validate() const;
};

/// Default benchmark: damped motion, sigma 0.05, drop 0.3, all models, 500/50/100 split.
ExperimentSpec default_experiment();

/// `key = value` lines. Scenario keys (variant, noise_sigma, ...) apply to every scenario;
/// `variants` and `models` take comma-separated lists. Unknown keys are a ConfigError.
ExperimentSpec parse_experiment_spec(std::string_view text, ExperimentSpec base = default_experiment());
void apply_experiment_setting(ExperimentSpec& spec, std::string_view key, std::string_view value);

/// Trajectory seed of sample i in a split. Splits occupy disjoint ranges.
std::uint64_t trajectory_seed(std::uint64_t base, int split, int index);

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  std::vector<std::uint64_t> train_seeds;
  std::vector<std::uint64_t> val_seeds;
  std::vector<std::uint64_t> test_seeds;
};

/// Number of windows one trajectory of the scenario yields.
int windows_per_trajectory(const sim::ScenarioConfig& scenario, const WindowConfig& window);

/// Windows of one clean simulated trajectory; corruption applies to histories only.
std::vector<Sample> make_windows(const sim::ScenarioConfig& scenario, const WindowConfig& window,
                                 std::uint64_t trajectory_seed);

Dataset build_dataset(const sim::ScenarioConfig& scenario, const SplitSizes& split, const WindowConfig& window,
                      std::uint64_t seed);

struct ResultRow {
  std::string model;
  std::string scenario;
  double mean_deg = 0.0;
  double std_deg = 0.0;
  std::vector<double> step_mean_deg;
  long count = 0;       // (sample, step) pairs included
  long failures = 0;    // samples whose forecast raised an error
  long degenerate = 0;  // horizon steps that used the 6D fallback
  std::string error;    // set when the whole cell failed (e.g. divergence)
};

using Predictor = std::function<ForecastResult(const Sample&)>;

Predictor predictor_for(const forecast::Forecaster& model);
/// Returns each sample's ground truth.
Predictor oracle_predictor();

struct Evaluation {
  ResultRow row;
  std::vector<std::optional<ForecastResult>> predictions;  // empty optional: failed forecast
};

/// Forecasts every sample (up to `threads` workers, results independent of the count).
Evaluation evaluate(const std::string& model, const std::string& scenario, const Predictor& predict,
                    std::span<const Sample> test, int threads = 1);

/// Pure function of the predictions: RGE per step in degrees, mean and population std.
ResultRow aggregate(const std::string& model, const std::string& scenario,
                    const std::vector<std::optional<ForecastResult>>& predictions, std::span<const Sample> test);

/// One CSV per trajectory: dir/<model>/<scenario>/traj_<seed>.csv.
void write_prediction_dump(const std::string& dir, const Evaluation& e, std::span<const Sample> test);
/// Header: window,step,t,qw,qx,qy,qz,true_qw,true_qx,true_qy,true_qz,rge_rad
std::string format_prediction_csv(const Evaluation& e, std::span<const Sample> test, std::uint64_t trajectory);

struct CompareResult {
  std::vector<ResultRow> rows;
  std::map<std::string, std::vector<std::string>> ranking;  // scenario -> models, best first
  std::vector<train::TrainingResult> training;              // per learned cell, in row order
  std::vector<Evaluation> evaluations;                      // per row
};

using Progress = std::function<void(const std::string&)>;

/// Trains and evaluates every model on every scenario. A diverged cell is recorded and skipped.
CompareResult compare(const ExperimentSpec& spec, int threads = 1, const Progress& progress = {});

/// Trains one learned model the way compare() does.
std::unique_ptr<forecast::NeuralModel> train_model(forecast::ModelKind kind, const ExperimentSpec& spec,
                                                   const Dataset& data, train::TrainingResult* result = nullptr,
                                                   const train::EpochCallback& on_epoch = {});

bool is_reference_model(std::string_view name);
bool is_known_model(std::string_view name);

std::string format_results_csv(const std::vector<ResultRow>& rows);
std::string format_results_table(const std::vector<ResultRow>& rows);
std::string format_ranking(const std::map<std::string, std::vector<std::string>>& ranking);
std::map<std::string, std::vector<std::string>> rank(const std::vector<ResultRow>& rows);

inline constexpr double kRadToDeg = 57.29577951308232;

}  // namespace sgncde::eval
