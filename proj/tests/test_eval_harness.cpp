#include "sgncde/errors.hpp"
#include "sgncde/eval_harness.hpp"
#include "sgncde/trajectory_io.hpp"
#include "test_support.hpp"

#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace sgncde {
namespace {

using eval::ExperimentSpec;
using forecast::Sample;
using so3::Rotation;
using so3::Vec3;

sim::ScenarioConfig damped_noisy() { return eval::default_experiment().scenarios.front().config; }

/// Small spec for end-to-end runs.
ExperimentSpec small_spec(std::vector<std::string> models, int epochs) {
  ExperimentSpec spec = eval::default_experiment();
  spec.models = std::move(models);
  spec.split = {6, 2, 4};
  spec.seed = 3;
  spec.training.epochs = epochs;
  spec.training.batch_size = 8;
  spec.training.lr = 3e-3;
  spec.arch.latent = 24;
  spec.arch.hidden = 24;
  spec.arch.gru_hidden = 16;
  spec.arch.gru_layers = 1;
  return spec;
}

/// Spin about z at 1 rad/s observed every 0.025 s.
Sample spin_sample() {
  const auto truth = testing::constant_omega_trajectory(Rotation(), Vec3(0, 0, 1), testing::uniform_times(28, 0.025));
  Sample s;
  s.history = truth.slice(0, 20);
  for (std::size_t j = 20; j < 28; ++j) {
    s.query_times.push_back(truth.time(j));
    s.future.push_back(truth.rotation(j));
  }
  return s;
}

TEST(Dataset, SplitsAreDisjointAndCounted) {
  const auto d = eval::build_dataset(damped_noisy(), {7, 3, 5}, eval::WindowConfig{}, 11);
  const int per = eval::windows_per_trajectory(damped_noisy(), eval::WindowConfig{});
  EXPECT_EQ(per, 4);  // 121 samples at 40 Hz over 3 s, windows of 28 with stride 28
  EXPECT_EQ(d.train.size(), 7u * per);
  EXPECT_EQ(d.val.size(), 3u * per);
  EXPECT_EQ(d.test.size(), 5u * per);
  std::set<std::uint64_t> seen;
  for (const auto* seeds : {&d.train_seeds, &d.val_seeds, &d.test_seeds})
    for (auto s : *seeds) EXPECT_TRUE(seen.insert(s).second) << s;
  for (const auto& s : d.test)
    EXPECT_EQ(std::count(d.train_seeds.begin(), d.train_seeds.end(), s.trajectory), 0);
  // Splits stay disjoint across neighbouring base seeds too.
  for (int split = 0; split < 3; ++split)
    EXPECT_NE(eval::trajectory_seed(11, split, 999999), eval::trajectory_seed(12, 0, 0));
}

TEST(Dataset, WindowsCorruptOnlyHistories) {
  const auto cfg = damped_noisy();
  const auto d = eval::build_dataset(cfg, {2, 0, 1}, eval::WindowConfig{}, 1);
  sim::ScenarioConfig clean = cfg;
  clean.noise_sigma = clean.drop_prob = 0.0;
  for (const auto& s : d.train) {
    clean.seed = s.trajectory;
    const auto truth = sim::simulate(clean).truth;
    const std::size_t first = static_cast<std::size_t>(s.window) * 28;
    EXPECT_GE(s.history.size(), 4u);
    EXPECT_LE(s.history.size(), 20u);
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_EQ(s.query_times[j], truth.time(first + 20 + j));
      EXPECT_EQ(s.future[j].matrix(), truth.rotation(first + 20 + j).matrix());
    }
    // Noise moves the retained history samples off the clean trajectory.
    double off = 0.0;
    for (std::size_t k = 0; k < s.history.size(); ++k) {
      const auto idx = static_cast<std::size_t>(std::lround(s.history.time(k) * 40.0));
      off += so3::geodesic_error(s.history.rotation(k), truth.rotation(idx));
    }
    EXPECT_GT(off / s.history.size(), 0.02);
  }
}

TEST(Dataset, BitIdenticalAcrossBuilds) {
  const auto a = eval::build_dataset(damped_noisy(), {3, 1, 2}, eval::WindowConfig{}, 4);
  const auto b = eval::build_dataset(damped_noisy(), {3, 1, 2}, eval::WindowConfig{}, 4);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].history.times(), b.train[i].history.times());
    for (std::size_t k = 0; k < a.train[i].history.size(); ++k)
      EXPECT_EQ(a.train[i].history.rotation(k).matrix(), b.train[i].history.rotation(k).matrix());
  }
}

TEST(Aggregate, OracleIsZero) {
  const auto d = eval::build_dataset(damped_noisy(), {1, 0, 3}, eval::WindowConfig{}, 2);
  const auto e = eval::evaluate("oracle", "damped", eval::oracle_predictor(), d.test);
  EXPECT_EQ(e.row.mean_deg, 0.0);
  EXPECT_EQ(e.row.std_deg, 0.0);
  EXPECT_EQ(e.row.count, static_cast<long>(d.test.size()) * 8);
  EXPECT_EQ(e.row.failures, 0);
}

TEST(Aggregate, IdentityOnSpinGrowsLinearly) {
  const std::vector<Sample> test{spin_sample()};
  const forecast::Identity id;
  const auto e = eval::evaluate("identity", "spin", eval::predictor_for(id), test);
  ASSERT_EQ(e.row.step_mean_deg.size(), 8u);
  double mean = 0.0;
  for (int k = 1; k <= 8; ++k) {
    EXPECT_NEAR(e.row.step_mean_deg[k - 1], 0.025 * k * 180.0 / std::numbers::pi, 1e-9);
    mean += 0.025 * k / 8.0;
  }
  EXPECT_NEAR(e.row.mean_deg, mean * 180.0 / std::numbers::pi, 1e-9);
  EXPECT_NEAR(std::numbers::pi * eval::kRadToDeg, 180.0, 1e-12);
}

TEST(Aggregate, FailuresAreCountedAndExcluded) {
  std::vector<Sample> test{spin_sample(), spin_sample(), spin_sample()};
  test[1].window = 1;
  const forecast::Identity id;
  const auto flaky = [&](const Sample& s) {
    if (s.window == 1) throw InvalidInputError("boom");
    return id.forecast(s.request());
  };
  const auto e = eval::evaluate("flaky", "spin", flaky, test);
  EXPECT_EQ(e.row.failures, 1);
  EXPECT_EQ(e.row.count, 16);
  EXPECT_FALSE(e.predictions[1].has_value());
  const auto clean = eval::evaluate("identity", "spin", eval::predictor_for(id), std::span(test).first(1));
  EXPECT_NEAR(e.row.mean_deg, clean.row.mean_deg, 1e-12);
}

TEST(Aggregate, IndependentOfThreadCount) {
  const auto d = eval::build_dataset(damped_noisy(), {1, 0, 4}, eval::WindowConfig{}, 6);
  const forecast::ConstantVelocity cv;
  const auto a = eval::evaluate("cv", "damped", eval::predictor_for(cv), d.test, 1);
  const auto b = eval::evaluate("cv", "damped", eval::predictor_for(cv), d.test, 3);
  EXPECT_EQ(a.row.mean_deg, b.row.mean_deg);
  EXPECT_EQ(a.row.std_deg, b.row.std_deg);
  EXPECT_EQ(a.row.step_mean_deg, b.row.step_mean_deg);
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::istringstream in(io::read_file(p.string()));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string x;
    while (std::getline(ls, x, ',')) f.push_back(x);
    rows.push_back(f);
  }
  return rows;
}

TEST(Dump, AggregationIsAFunctionOfTheDump) {
  const auto d = eval::build_dataset(damped_noisy(), {1, 0, 3}, eval::WindowConfig{}, 8);
  const forecast::ConstantVelocity cv;
  const auto e = eval::evaluate("constant-velocity", "damped", eval::predictor_for(cv), d.test);
  const auto dir = std::filesystem::temp_directory_path() / "sgncde_dump_test";
  std::filesystem::remove_all(dir);
  eval::write_prediction_dump(dir.string(), e, d.test);
  double sum_deg = 0.0, sum_col = 0.0;
  long n = 0;
  int files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "constant-velocity" / "damped")) {
    ++files;
    const auto rows = read_csv(entry.path());
    ASSERT_EQ(rows[0].size(), 12u);
    EXPECT_EQ(rows[0][0], "window");
    EXPECT_EQ(rows[0][11], "rge_rad");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      std::vector<double> v;
      for (const auto& s : rows[r]) v.push_back(std::stod(s));
      const Rotation p = so3::from_quaternion({v[3], v[4], v[5], v[6]});
      const Rotation g = so3::from_quaternion({v[7], v[8], v[9], v[10]});
      sum_deg += so3::geodesic_error(p, g) * eval::kRadToDeg;
      sum_col += v[11];
      ++n;
    }
  }
  EXPECT_EQ(files, 3);
  EXPECT_EQ(n, e.row.count);
  EXPECT_NEAR(sum_deg / n, e.row.mean_deg, 1e-9);
  EXPECT_NEAR(sum_col / n * eval::kRadToDeg, e.row.mean_deg, 1e-12);
  std::filesystem::remove_all(dir);
}

TEST(Spec, ParsesKeysAndRejectsUnknown) {
  const auto spec = eval::parse_experiment_spec(
      "# comment\nvariants = free, damped\nmodels = sg-ncde, oracle\ntrain_trajectories = 10\n"
      "val_trajectories = 2\ntest_trajectories = 3\nhistory = 16\nhorizon = 4\nseed = 9\nepochs = 2\n"
      "lr = 0.01\nnoise_sigma = 0.1\nhalf_window = 3\nkeep_best = false\n");
  ASSERT_EQ(spec.scenarios.size(), 2u);
  EXPECT_EQ(spec.scenarios[0].name, "free");
  EXPECT_EQ(spec.scenarios[1].config.variant, sim::TorqueVariant::damped);
  EXPECT_EQ(spec.scenarios[0].config.noise_sigma, 0.1);
  EXPECT_EQ(spec.models, (std::vector<std::string>{"sg-ncde", "oracle"}));
  EXPECT_EQ(spec.split.train, 10);
  EXPECT_EQ(spec.window.history, 16);
  EXPECT_EQ(spec.window.horizon, 4);
  EXPECT_EQ(spec.seed, 9u);
  EXPECT_EQ(spec.training.epochs, 2);
  EXPECT_EQ(spec.training.lr, 0.01);
  EXPECT_FALSE(spec.training.keep_best);
  EXPECT_EQ(spec.arch.half_window, 3);
  EXPECT_THROW(eval::parse_experiment_spec("mystery = 1\n"), ConfigError);
  EXPECT_THROW(eval::parse_experiment_spec("epochs = many\n"), ConfigError);
  EXPECT_THROW(eval::parse_experiment_spec("models = sg-ncde, transformer\n").validate(), ConfigError);
  EXPECT_THROW(eval::parse_experiment_spec("models = oracle, oracle\n").validate(), ConfigError);
  ExperimentSpec empty = eval::default_experiment();
  empty.models.clear();
  EXPECT_THROW(empty.validate(), ConfigError);
}

TEST(Spec, DefaultBenchmark) {
  const auto spec = eval::default_experiment();
  EXPECT_NO_THROW(spec.validate());
  ASSERT_EQ(spec.scenarios.size(), 1u);
  EXPECT_EQ(spec.scenarios[0].config.variant, sim::TorqueVariant::damped);
  EXPECT_EQ(spec.scenarios[0].config.noise_sigma, 0.05);
  EXPECT_EQ(spec.scenarios[0].config.drop_prob, 0.3);
  EXPECT_EQ(spec.split.train, 500);
  EXPECT_EQ(spec.split.val, 50);
  EXPECT_EQ(spec.split.test, 100);
  EXPECT_EQ(spec.models.size(), 6u);
}

TEST(Compare, TableShapeRankingAndBrackets) {
  auto spec = small_spec({"sg-ncde", "constant-velocity", "identity", "oracle"}, 6);
  spec.scenarios.push_back(spec.scenarios.front());
  spec.scenarios.back().name = "damped-again";
  const auto r = eval::compare(spec, 2);
  ASSERT_EQ(r.rows.size(), 8u);
  for (const auto& scenario : {"damped", "damped-again"}) {
    double oracle = 0, worst_ref = 0, learned = 0;
    for (const auto& row : r.rows) {
      if (row.scenario != scenario) continue;
      EXPECT_GE(row.mean_deg, 0.0);
      EXPECT_GE(row.std_deg, 0.0);
      EXPECT_EQ(row.count, 4 * 4 * 8);
      if (row.model == "oracle") oracle = row.mean_deg;
      if (row.model == "sg-ncde") learned = row.mean_deg;
      if (row.model == "identity" || row.model == "constant-velocity") worst_ref = std::max(worst_ref, row.mean_deg);
    }
    // Six epochs on a dozen trajectories say nothing about accuracy; only the oracle floor is firm.
    EXPECT_LE(oracle, learned);
    EXPECT_LE(oracle, worst_ref);
    EXPECT_TRUE(std::isfinite(learned));
    const auto& order = r.ranking.at(scenario);
    ASSERT_EQ(order.size(), 4u);
    EXPECT_EQ(order.front(), "oracle");
  }
  // The duplicate scenario shares data and seeds, so its cells match bit for bit.
  EXPECT_EQ(r.rows[0].mean_deg, r.rows[4].mean_deg);
}

TEST(Compare, RerunIsBitIdenticalAndEvaluationIsPure) {
  const auto spec = small_spec({"hermite-ncde", "gru", "identity"}, 2);
  const auto a = eval::compare(spec, 1);
  const auto b = eval::compare(spec, 3);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].mean_deg, b.rows[i].mean_deg) << a.rows[i].model;
    EXPECT_EQ(a.rows[i].std_deg, b.rows[i].std_deg);
  }
  EXPECT_EQ(eval::format_results_csv(a.rows), eval::format_results_csv(b.rows));

  const auto data = eval::build_dataset(spec.scenarios[0].config, spec.split, spec.window, spec.seed);
  const auto model = eval::train_model(forecast::ModelKind::hermite_ncde, spec, data);
  const std::string before = ckpt::serialize(model->to_checkpoint());
  const auto e = eval::evaluate("hermite-ncde", "damped", eval::predictor_for(*model), data.test, 2);
  EXPECT_EQ(ckpt::serialize(model->to_checkpoint()), before);
  EXPECT_EQ(e.row.mean_deg, a.rows[0].mean_deg);
}

TEST(Compare, DivergedCellIsRecorded) {
  auto spec = small_spec({"sg-ncde", "identity"}, 2);
  spec.training.lr = 1e30;
  const auto r = eval::compare(spec, 1);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_FALSE(r.rows[0].error.empty());
  EXPECT_TRUE(std::isnan(r.rows[0].mean_deg));
  EXPECT_TRUE(r.rows[1].error.empty());
  EXPECT_EQ(r.ranking.at("damped").front(), "identity");
}

TEST(Format, CsvAndTable) {
  eval::ResultRow row;
  row.model = "identity";
  row.scenario = "damped";
  row.mean_deg = 1.5;
  row.std_deg = 0.25;
  row.step_mean_deg = {1.0, 2.0};
  row.count = 16;
  const std::string csv = eval::format_results_csv({row});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,scenario,mean_deg,std_deg,count,failures,degenerate,step1_deg,step2_deg,error");
  EXPECT_NE(csv.find("identity,damped,1.5,0.25,16,0,0,1,2,"), std::string::npos);
  EXPECT_NE(eval::format_results_table({row}).find("1.500 +- 0.250"), std::string::npos);
}

}  // namespace
}  // namespace sgncde
