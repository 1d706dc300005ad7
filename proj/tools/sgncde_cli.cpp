// Command-line front end: simulate, filter, train, forecast, evaluate, compare.

#include "sgncde/checkpoint.hpp"
#include "sgncde/control.hpp"
#include "sgncde/errors.hpp"
#include "sgncde/eval_harness.hpp"
#include "sgncde/models.hpp"
#include "sgncde/rigid_body.hpp"
#include "sgncde/sg_filter.hpp"
#include "sgncde/svg.hpp"
#include "sgncde/trajectory_io.hpp"
#include "sgncde/training.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

using namespace sgncde;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help, const std::string& config_help) {
  cmd->add_option("--seed", c.seed, "Random seed; every output is a pure function of the seed and flags");
  cmd->add_option("--out", c.out, out_help);
  if (!config_help.empty()) cmd->add_option("--config", c.config, config_help)->check(CLI::ExistingFile);
  cmd->add_option("--threads", c.threads, "Maximum worker threads")->check(CLI::PositiveNumber);
}

// Scenario overrides shared by simulate and the experiment commands.
struct ScenarioFlags {
  std::optional<std::string> variant;
  std::optional<double> duration, dt, sample_hz, noise, drop, jitter, omega_min, damping;
};

void add_scenario_flags(CLI::App* cmd, ScenarioFlags& f) {
  cmd->add_option("--variant", f.variant, "Torque scenario: free, linear_control, config_dependent, damped");
  cmd->add_option("--duration", f.duration, "Trajectory length in seconds (default 3)");
  cmd->add_option("--dt", f.dt, "Integrator step in seconds (default 0.001)");
  cmd->add_option("--sample-hz", f.sample_hz, "Observation rate in Hz (default 40)");
  cmd->add_option("--noise", f.noise, "Tangent noise standard deviation in rad");
  cmd->add_option("--drop-prob", f.drop, "Probability of dropping each observation");
  cmd->add_option("--jitter", f.jitter, "Maximum timestamp jitter in seconds");
  cmd->add_option("--omega-min", f.omega_min, "Rejection threshold on the initial angular speed (rad/s)");
  cmd->add_option("--damping", f.damping, "Damping coefficient of the damped scenario");
}

std::vector<std::pair<std::string, std::string>> scenario_overrides(const ScenarioFlags& f) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto num = [&](const char* key, const std::optional<double>& v) {
    if (v) out.emplace_back(key, io::format_double(*v));
  };
  num("duration_s", f.duration);
  num("dt", f.dt);
  num("sample_hz", f.sample_hz);
  num("noise_sigma", f.noise);
  num("drop_prob", f.drop);
  num("jitter", f.jitter);
  num("omega_min", f.omega_min);
  num("damping", f.damping);
  return out;
}

struct ExperimentFlags {
  ScenarioFlags scenario;
  std::optional<std::string> variants, models;
  std::optional<int> train_n, val_n, test_n, history, horizon, stride, epochs, batch, rk4, half_window, latent, hidden,
      gru_hidden, gru_layers, val_every;
  std::optional<long> max_steps;
  std::optional<double> lr, grad_clip;
  bool no_keep_best = false;
};

void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f, bool with_models) {
  add_scenario_flags(cmd, f.scenario);
  cmd->add_option("--variants", f.variants, "Comma-separated scenario list (overrides --variant)");
  if (with_models) {
    cmd->add_option("--models", f.models,
                    "Comma-separated models: sg-ncde, hermite-ncde, gru, constant-velocity, identity, oracle");
  }
  cmd->add_option("--train-trajectories", f.train_n, "Training trajectories (default 500)");
  cmd->add_option("--val-trajectories", f.val_n, "Validation trajectories (default 50)");
  cmd->add_option("--test-trajectories", f.test_n, "Test trajectories (default 100)");
  cmd->add_option("--history", f.history, "History grid samples per window (default 20)");
  cmd->add_option("--horizon", f.horizon, "Future samples per window (default 8)");
  cmd->add_option("--stride", f.stride, "Grid offset between windows (default history + horizon)");
  cmd->add_option("--epochs", f.epochs, "Training epochs (default 30)");
  cmd->add_option("--batch-size", f.batch, "Mini-batch size (default 32)");
  cmd->add_option("--lr", f.lr, "Adam learning rate (default 1e-3)");
  cmd->add_option("--grad-clip", f.grad_clip, "Global gradient-norm clip, 0 disables (default 0)");
  cmd->add_option("--max-steps", f.max_steps, "Stop after this many optimizer steps");
  cmd->add_option("--rk4-steps", f.rk4, "Fixed RK4 steps per control segment during training (default 1)");
  cmd->add_option("--val-every", f.val_every, "Validate every this many epochs (default 1)");
  cmd->add_flag("--no-keep-best", f.no_keep_best, "Keep the final parameters instead of the best-validation epoch");
  cmd->add_option("--half-window", f.half_window, "SG half window n; the window has 2n+1 samples (default 5)");
  cmd->add_option("--latent", f.latent, "CDE latent width (default 100)");
  cmd->add_option("--hidden", f.hidden, "CDE hidden layer width (default 100)");
  cmd->add_option("--gru-hidden", f.gru_hidden, "GRU hidden width (default 250)");
  cmd->add_option("--gru-layers", f.gru_layers, "Stacked GRU cells (default 3)");
}

eval::ExperimentSpec resolve_experiment(const Common& c, const ExperimentFlags& f) {
  eval::ExperimentSpec spec = eval::default_experiment();
  if (!c.config.empty()) spec = eval::parse_experiment_spec(io::read_file(c.config), spec);
  const auto set = [&](const char* key, const std::string& value) { eval::apply_experiment_setting(spec, key, value); };
  const auto set_int = [&](const char* key, const auto& v) {
    if (v) set(key, std::to_string(*v));
  };
  const auto set_real = [&](const char* key, const std::optional<double>& v) {
    if (v) set(key, io::format_double(*v));
  };
  if (f.variants) {
    set("variants", *f.variants);
  } else if (f.scenario.variant) {
    set("variants", *f.scenario.variant);
  }
  for (const auto& [k, v] : scenario_overrides(f.scenario)) set(k.c_str(), v);
  if (f.models) set("models", *f.models);
  set_int("train_trajectories", f.train_n);
  set_int("val_trajectories", f.val_n);
  set_int("test_trajectories", f.test_n);
  set_int("history", f.history);
  set_int("horizon", f.horizon);
  set_int("stride", f.stride);
  set_int("epochs", f.epochs);
  set_int("batch_size", f.batch);
  set_int("rk4_steps", f.rk4);
  set_int("val_every", f.val_every);
  set_int("max_steps", f.max_steps);
  set_int("half_window", f.half_window);
  set_int("latent", f.latent);
  set_int("hidden", f.hidden);
  set_int("gru_hidden", f.gru_hidden);
  set_int("gru_layers", f.gru_layers);
  set_real("lr", f.lr);
  set_real("grad_clip", f.grad_clip);
  if (f.no_keep_best) set("keep_best", "false");
  if (c.seed) set("seed", std::to_string(*c.seed));
  spec.validate();
  return spec;
}

std::string loss_curve_csv(const std::vector<ckpt::EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,train_rge_rad,val_rge_rad\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << io::format_double(r.train_loss) << ',' << io::format_double(r.train_rge) << ','
       << (std::isfinite(r.val_rge) ? io::format_double(r.val_rge) : "") << '\n';
  }
  return os.str();
}

void log_epoch(const ckpt::EpochRecord& r) {
  std::cerr << "epoch " << r.epoch << "  loss " << r.train_loss << "  train_rge " << r.train_rge << " rad  val_rge "
            << r.val_rge << " rad\n";
}

fs::path out_dir(const Common& c, const char* fallback) { return c.out.empty() ? fs::path(fallback) : fs::path(c.out); }

// ---------------------------------------------------------------------------------------------

struct SimulateArgs {
  Common common;
  ScenarioFlags scenario;
  int count = 1;
};

int run_simulate(const SimulateArgs& a) {
  sim::ScenarioConfig cfg;
  if (!a.common.config.empty()) cfg = sim::load_scenario_config(a.common.config);
  if (a.scenario.variant) sim::apply_scenario_setting(cfg, "variant", *a.scenario.variant);
  for (const auto& [k, v] : scenario_overrides(a.scenario)) sim::apply_scenario_setting(cfg, k, v);
  if (a.common.seed) cfg.seed = *a.common.seed;
  if (a.count < 1) throw ConfigError("--count must be at least 1");
  cfg.validate();
  const fs::path dir = out_dir(a.common, "trajectories");
  for (int i = 0; i < a.count; ++i) {
    sim::ScenarioConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(i);
    const sim::SimulationResult r = sim::simulate(c);
    const std::string stem = "traj_" + std::to_string(c.seed);
    io::save_trajectory_csv((dir / (stem + ".csv")).string(), r.observed);
    io::save_trajectory_csv((dir / (stem + "_truth.csv")).string(), r.truth);
  }
  std::cerr << "wrote " << a.count << " trajectories to " << dir.string() << '\n';
  return kExitOk;
}

struct FilterArgs {
  Common common;
  std::string input;
  int window = 5;
  double extrapolate = 0.2;
  std::string svg;
};

int run_filter(const FilterArgs& a) {
  if (a.window < 1) throw ConfigError("--window must be at least 1");
  if (!(a.extrapolate >= 0.0)) throw ConfigError("--extrapolate must be non-negative");
  const sg::RotationTrajectory traj = io::load_trajectory_csv(a.input);
  if (traj.size() < 3) throw InvalidInputError("filter needs at least three samples");
  const sg::ControlPath path = sg::fit_path(traj, a.window);
  const double spacing = (traj.times().back() - traj.times().front()) / static_cast<double>(traj.size() - 1);

  std::ostringstream csv;
  csv << "t,qw,qx,qy,qz,rge_raw_rad\n";
  const auto row = [&](double t, const so3::Rotation& r, std::optional<double> rge) {
    const so3::Quaternion q = so3::to_quaternion(r);
    csv << io::format_double(t);
    for (double v : {q.w, q.x, q.y, q.z}) csv << ',' << io::format_double(v);
    csv << ',' << (rge ? io::format_double(*rge) : "") << '\n';
  };
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const so3::Rotation phi = path.value(traj.time(k));
    row(traj.time(k), phi, so3::geodesic_error(phi, traj.rotation(k)));
  }
  const auto extra = static_cast<int>(std::floor(a.extrapolate / spacing + 1e-9));
  for (int j = 1; j <= extra; ++j) {
    const double t = traj.times().back() + j * spacing;
    row(t, path.value(t), std::nullopt);
  }
  const fs::path out = a.common.out.empty() ? fs::path("filtered.csv") : fs::path(a.common.out);
  io::write_file_atomic(out.string(), csv.str());

  if (!a.svg.empty()) {
    const so3::Rotation ref_inv = path.value(traj.time(0)).inverse();
    const auto log_coords = [&](const so3::Rotation& r) {
      try {
        return so3::Vec3(so3::log_so3(r * ref_inv));
      } catch (const NearAntipodalError&) {
        return so3::Vec3(so3::Vec3::Constant(std::nan("")));
      }
    };
    svg::Panel coords{"Log coordinates relative to the first filtered sample", "t (s)", "rad", {},
                      traj.times().back()};
    const char* colors[3] = {"#d62728", "#2ca02c", "#1f77b4"};
    const char* axes[3] = {"x", "y", "z"};
    const double t_end = traj.times().back() + a.extrapolate;
    const int dense = 10 * static_cast<int>(std::ceil((t_end - traj.time(0)) / spacing));
    for (int axis = 0; axis < 3; ++axis) {
      svg::Series raw{std::string("raw ") + axes[axis], {}, {}, colors[axis], true};
      svg::Series fit{std::string("filtered ") + axes[axis], {}, {}, colors[axis], false};
      for (std::size_t k = 0; k < traj.size(); ++k) {
        raw.x.push_back(traj.time(k));
        raw.y.push_back(log_coords(traj.rotation(k))(axis));
      }
      for (int i = 0; i <= dense; ++i) {
        const double t = traj.time(0) + (t_end - traj.time(0)) * i / dense;
        fit.x.push_back(t);
        fit.y.push_back(log_coords(path.value(t))(axis));
      }
      coords.series.push_back(std::move(raw));
      coords.series.push_back(std::move(fit));
    }
    svg::Panel rge{"Geodesic distance between filtered path and raw samples", "t (s)", "rad", {}, std::nan("")};
    svg::Series s{"RGE", {}, {}, "#9467bd", false};
    for (std::size_t k = 0; k < traj.size(); ++k) {
      s.x.push_back(traj.time(k));
      s.y.push_back(so3::geodesic_error(path.value(traj.time(k)), traj.rotation(k)));
    }
    rge.series.push_back(std::move(s));
    io::write_file_atomic(a.svg, svg::render({coords, rge}));
  }
  return kExitOk;
}

struct TrainArgs {
  Common common;
  ExperimentFlags exp;
  std::string model;
  std::string resume;
};

int run_train(const TrainArgs& a) {
  const eval::ExperimentSpec spec = resolve_experiment(a.common, a.exp);
  std::unique_ptr<forecast::NeuralModel> model;
  std::optional<ckpt::Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = ckpt::load(a.resume);
    model = forecast::model_from_checkpoint(*resume);
    if (!a.model.empty() && forecast::parse_model_kind(a.model) != model->kind()) {
      throw ConfigError("--model " + a.model + " conflicts with the resumed checkpoint (" + model->name() + ")");
    }
  } else {
    if (a.model.empty()) throw ConfigError("--model is required unless --resume is given");
    model = forecast::make_model(forecast::parse_model_kind(a.model), spec.arch, spec.seed);
  }
  eval::SplitSizes split = spec.split;
  split.test = 0;
  const eval::Dataset data = eval::build_dataset(spec.scenarios.front().config, split, spec.window, spec.seed);
  std::cerr << "training " << model->name() << " (" << model->parameter_count() << " parameters) on "
            << data.train.size() << " windows, validating on " << data.val.size() << '\n';
  train::TrainingConfig cfg = spec.training;
  cfg.seed = spec.seed;
  const train::TrainingResult result =
      train::train(*model, data.train, data.val, cfg, resume ? &*resume : nullptr, log_epoch);
  const fs::path dir = out_dir(a.common, "run");
  ckpt::save((dir / "checkpoint.json").string(), train::make_checkpoint(*model, result, cfg));
  io::write_file_atomic((dir / "loss_curve.csv").string(), loss_curve_csv(result.history));
  std::cerr << "best epoch " << result.best_epoch << ", validation RGE " << result.best_val_rge << " rad\n";
  return kExitOk;
}

struct ForecastArgs {
  Common common;
  std::string checkpoint;
  std::string model;
  std::string input;
  int horizon = 8;
  std::optional<double> step;
};

std::unique_ptr<forecast::Forecaster> load_forecaster(const std::string& checkpoint, const std::string& model) {
  if (!checkpoint.empty()) return forecast::model_from_checkpoint(ckpt::load(checkpoint));
  if (model == "constant-velocity") return std::make_unique<forecast::ConstantVelocity>();
  if (model == "identity") return std::make_unique<forecast::Identity>();
  throw ConfigError("give --checkpoint or --model constant-velocity|identity");
}

int run_forecast(const ForecastArgs& a) {
  if (a.horizon < 1) throw ConfigError("--horizon must be at least 1");
  const auto model = load_forecaster(a.checkpoint, a.model);
  forecast::ForecastRequest req;
  req.history = io::load_trajectory_csv(a.input);
  if (req.history.size() < 2) throw InvalidInputError("history needs at least two samples");
  const double spacing = a.step.value_or((req.history.times().back() - req.history.time(0)) /
                                         static_cast<double>(req.history.size() - 1));
  if (!(spacing > 0.0)) throw ConfigError("--step must be positive");
  for (int j = 1; j <= a.horizon; ++j) req.query_times.push_back(req.history.times().back() + j * spacing);
  const forecast::ForecastResult r = model->forecast(req);
  if (r.degenerate > 0) std::cerr << r.degenerate << " horizon steps used the degenerate-6D fallback\n";
  const std::string csv = io::format_trajectory_csv(sg::RotationTrajectory(req.query_times, r.rotations));
  if (a.common.out.empty()) {
    std::cout << csv;
  } else {
    io::write_file_atomic(a.common.out, csv);
  }
  return kExitOk;
}

struct EvaluateArgs {
  Common common;
  ExperimentFlags exp;
  std::string checkpoint;
  std::string model;
};

void write_results(const fs::path& dir, const std::vector<eval::ResultRow>& rows) {
  io::write_file_atomic((dir / "results.csv").string(), eval::format_results_csv(rows));
  io::write_file_atomic((dir / "results.txt").string(), eval::format_results_table(rows));
}

int run_evaluate(const EvaluateArgs& a) {
  const eval::ExperimentSpec spec = resolve_experiment(a.common, a.exp);
  std::unique_ptr<forecast::Forecaster> model;
  std::string name = a.model;
  if (!a.checkpoint.empty()) {
    model = load_forecaster(a.checkpoint, "");
    name = model->name();
  } else if (a.model != "oracle") {
    model = load_forecaster("", a.model);
  }
  const fs::path dir = out_dir(a.common, "evaluation");
  std::vector<eval::ResultRow> rows;
  for (const eval::Scenario& s : spec.scenarios) {
    const eval::Dataset data = eval::build_dataset(s.config, {0, 0, spec.split.test}, spec.window, spec.seed);
    const eval::Predictor predict = model ? eval::predictor_for(*model) : eval::oracle_predictor();
    const eval::Evaluation e = eval::evaluate(name, s.name, predict, data.test, a.common.threads);
    eval::write_prediction_dump((dir / "predictions").string(), e, data.test);
    rows.push_back(e.row);
  }
  write_results(dir, rows);
  std::cout << eval::format_results_table(rows);
  return kExitOk;
}

struct CompareArgs {
  Common common;
  ExperimentFlags exp;
};

int run_compare(const CompareArgs& a) {
  const eval::ExperimentSpec spec = resolve_experiment(a.common, a.exp);
  const eval::CompareResult r =
      eval::compare(spec, a.common.threads, [](const std::string& msg) { std::cerr << msg << '\n'; });
  const fs::path dir = out_dir(a.common, "comparison");
  write_results(dir, r.rows);
  io::write_file_atomic((dir / "ranking.txt").string(), eval::format_ranking(r.ranking));
  for (std::size_t i = 0; i < r.evaluations.size(); ++i) {
    const eval::Evaluation& e = r.evaluations[i];
    const auto& scenario = *std::find_if(spec.scenarios.begin(), spec.scenarios.end(),
                                         [&](const eval::Scenario& s) { return s.name == e.row.scenario; });
    const eval::Dataset data = eval::build_dataset(scenario.config, {0, 0, spec.split.test}, spec.window, spec.seed);
    eval::write_prediction_dump((dir / "predictions").string(), e, data.test);
    if (!r.training[i].history.empty()) {
      io::write_file_atomic((dir / "loss_curves" / (e.row.model + "_" + e.row.scenario + ".csv")).string(),
                            loss_curve_csv(r.training[i].history));
    }
  }
  std::cout << eval::format_results_table(r.rows) << '\n' << eval::format_ranking(r.ranking);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation forecasting with Savitzky-Golay neural CDEs on SO(3)"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Simulate rigid-body rotation trajectories to CSV");
  add_common(simulate, sim_args.common, "Output directory (default ./trajectories)", "Scenario file (key = value)");
  add_scenario_flags(simulate, sim_args.scenario);
  simulate->add_option("--count", sim_args.count, "Number of trajectories; seeds seed .. seed+count-1");

  FilterArgs filter_args;
  auto* filter = app.add_subcommand("filter", "Fit the SG control path to a trajectory CSV");
  add_common(filter, filter_args.common, "Filtered path CSV (default ./filtered.csv)", "");
  filter->add_option("--input", filter_args.input, "Trajectory CSV (t,qw,qx,qy,qz)")->required()->check(CLI::ExistingFile);
  filter->add_option("--window", filter_args.window, "Half window n; each fit uses 2n+1 samples (default 5)");
  filter->add_option("--extrapolate", filter_args.extrapolate, "Seconds of extrapolation appended (default 0.2)");
  filter->add_option("--svg", filter_args.svg, "Also write an SVG plot to this path");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a forecaster on simulated windows");
  add_common(train_cmd, train_args.common, "Run directory for checkpoint.json and loss_curve.csv (default ./run)",
             "Experiment file (key = value)");
  add_experiment_flags(train_cmd, train_args.exp, false);
  train_cmd->add_option("--model", train_args.model, "sg-ncde, hermite-ncde or gru");
  train_cmd->add_option("--resume", train_args.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);

  ForecastArgs fc_args;
  auto* fc = app.add_subcommand("forecast", "Predict future rotations after a history CSV");
  add_common(fc, fc_args.common, "Prediction CSV (default stdout)", "");
  auto* fc_ckpt = fc->add_option("--checkpoint", fc_args.checkpoint, "Trained model checkpoint")->check(CLI::ExistingFile);
  auto* fc_model = fc->add_option("--model", fc_args.model, "Analytic model: constant-velocity or identity");
  fc_ckpt->excludes(fc_model);
  fc->add_option("--input", fc_args.input, "History CSV (t,qw,qx,qy,qz)")->required()->check(CLI::ExistingFile);
  fc->add_option("--horizon", fc_args.horizon, "Number of future steps (default 8)");
  fc->add_option("--step", fc_args.step, "Spacing of future times in seconds (default: mean history spacing)");

  EvaluateArgs ev_args;
  auto* ev = app.add_subcommand("evaluate", "Evaluate one model on the simulated test split");
  add_common(ev, ev_args.common, "Output directory (default ./evaluation)", "Experiment file (key = value)");
  add_experiment_flags(ev, ev_args.exp, false);
  auto* ev_ckpt = ev->add_option("--checkpoint", ev_args.checkpoint, "Trained model checkpoint")->check(CLI::ExistingFile);
  auto* ev_model = ev->add_option("--model", ev_args.model, "Reference model: constant-velocity, identity or oracle");
  ev_ckpt->excludes(ev_model);

  CompareArgs cmp_args;
  auto* cmp = app.add_subcommand("compare", "Train and evaluate every model on every scenario");
  add_common(cmp, cmp_args.common, "Output directory (default ./comparison)", "Experiment file (key = value)");
  add_experiment_flags(cmp, cmp_args.exp, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*simulate) return run_simulate(sim_args);
    if (*filter) return run_filter(filter_args);
    if (*train_cmd) return run_train(train_args);
    if (*fc) {
      if (fc_args.checkpoint.empty() && fc_args.model.empty()) throw ConfigError("give --checkpoint or --model");
      return run_forecast(fc_args);
    }
    if (*ev) {
      if (ev_args.checkpoint.empty() && ev_args.model.empty()) throw ConfigError("give --checkpoint or --model");
      if (!ev_args.model.empty() && !eval::is_reference_model(ev_args.model)) {
        throw ConfigError("--model must be constant-velocity, identity or oracle (use --checkpoint for trained models)");
      }
      return run_evaluate(ev_args);
    }
    if (*cmp) return run_compare(cmp_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidInputError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence at batch " << e.batch() << ": " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
