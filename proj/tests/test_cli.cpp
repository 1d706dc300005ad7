#include "sgncde/checkpoint.hpp"
#include "sgncde/models.hpp"
#include "sgncde/rigid_body.hpp"
#include "sgncde/trajectory_io.hpp"
#include "test_support.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sgncde {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string output;  // stdout and stderr
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sgncde_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  CliRun run(const std::string& args) const {
    const std::string log = path("cli.log");
    const std::string cmd = std::string(SGNCDE_CLI) + " " + args + " > " + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = io::read_file(log);
    return r;
  }

  fs::path dir_;
};

/// Rows after the header; empty fields and text read as NaN.
std::vector<std::vector<double>> read_numeric_csv(const std::string& file) {
  std::istringstream in(io::read_file(file));
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t end = line.find(',', start);
      const std::string x = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      char* rest = nullptr;
      const double v = std::strtod(x.c_str(), &rest);
      row.push_back(x.empty() || *rest != '\0' ? std::nan("") : v);
      if (end == std::string::npos) break;
      start = end + 1;
    }
    rows.push_back(row);
  }
  return rows;
}

// Flags for a training run small enough for a unit test.
const std::string kSmall =
    "--train-trajectories 3 --val-trajectories 1 --test-trajectories 2 --latent 8 --hidden 8 "
    "--gru-hidden 8 --gru-layers 1 --batch-size 8";

TEST_F(Cli, HelpListsSubcommands) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"simulate", "filter", "train", "forecast", "evaluate", "compare"})
    EXPECT_NE(r.output.find(sub), std::string::npos) << sub;
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run("simulate --variant bogus --out " + path("s")).code, 2);
  EXPECT_EQ(run("simulate --count 0 --out " + path("s")).code, 2);
  EXPECT_EQ(run("train --model transformer --out " + path("r")).code, 2);
  EXPECT_EQ(run("compare --models sg-ncde,nope --out " + path("c")).code, 2);
  EXPECT_EQ(run("nosuchcommand").code, 2);
  ASSERT_EQ(run("simulate --count 1 --out " + path("s")).code, 0);
  const std::string csv = path("s") + "/traj_0.csv";
  EXPECT_EQ(run("filter --window 0 --input " + csv).code, 2);
  EXPECT_EQ(run("forecast --model identity --checkpoint " + csv + " --input " + csv).code, 2);
  EXPECT_EQ(run("filter --input " + path("missing.csv")).code, 2);
}

TEST_F(Cli, SimulateIsDeterministicAndMatchesLibrary) {
  ASSERT_EQ(run("simulate --seed 7 --count 2 --variant damped --noise 0.05 --drop-prob 0.3 --out " + path("a")).code, 0);
  ASSERT_EQ(run("simulate --seed 7 --count 2 --variant damped --noise 0.05 --drop-prob 0.3 --out " + path("b")).code, 0);
  ASSERT_EQ(run("simulate --seed 8 --count 1 --variant damped --noise 0.05 --drop-prob 0.3 --out " + path("c")).code, 0);
  for (const char* f : {"traj_7.csv", "traj_8.csv", "traj_7_truth.csv", "traj_8_truth.csv"})
    EXPECT_EQ(io::read_file(path("a") + "/" + f), io::read_file(path("b") + "/" + f)) << f;
  // Seeds seed .. seed + count - 1 name the trajectories.
  EXPECT_EQ(io::read_file(path("a") + "/traj_8.csv"), io::read_file(path("c") + "/traj_8.csv"));

  sim::ScenarioConfig cfg;
  cfg.variant = sim::TorqueVariant::damped;
  cfg.noise_sigma = 0.05;
  cfg.drop_prob = 0.3;
  cfg.seed = 7;
  const auto expected = sim::simulate(cfg);
  const auto truth = io::load_trajectory_csv(path("a") + "/traj_7_truth.csv");
  const auto observed = io::load_trajectory_csv(path("a") + "/traj_7.csv");
  ASSERT_EQ(truth.size(), expected.truth.size());
  ASSERT_EQ(observed.size(), expected.observed.size());
  for (std::size_t k = 0; k < truth.size(); ++k) {
    EXPECT_EQ(truth.time(k), expected.truth.time(k));
    EXPECT_LT((truth.rotation(k).matrix() - expected.truth.rotation(k).matrix()).norm(), 1e-14);
  }
  for (std::size_t k = 0; k < observed.size(); ++k)
    EXPECT_LT((observed.rotation(k).matrix() - expected.observed.rotation(k).matrix()).norm(), 1e-14);
}

TEST_F(Cli, FilterReproducesPolynomialData) {
  // Rotation about a fixed axis by a quadratic angle lies in the filter's model class.
  const so3::Vec3 axis = so3::Vec3(1, -2, 0.5).normalized();
  const so3::Rotation r0 = so3::exp_so3(so3::Vec3(0.3, 0.1, -0.7));
  std::vector<double> t;
  std::vector<so3::Rotation> rs;
  for (int k = 0; k < 40; ++k) {
    t.push_back(0.025 * k);
    rs.push_back(so3::exp_so3(axis * (0.2 + 1.5 * t.back() - 0.8 * t.back() * t.back())) * r0);
  }
  io::save_trajectory_csv(path("poly.csv"), sg::RotationTrajectory(t, rs));
  const auto r = run("filter --window 3 --extrapolate 0.1 --input " + path("poly.csv") + " --out " + path("f.csv") +
                     " --svg " + path("f.svg"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = read_numeric_csv(path("f.csv"));
  ASSERT_GE(rows.size(), 40u);
  int checked = 0;
  for (const auto& row : rows) {
    ASSERT_EQ(row.size(), 6u);
    EXPECT_NEAR(Eigen::Vector4d(row[1], row[2], row[3], row[4]).norm(), 1.0, 1e-12);
    if (std::isnan(row[5])) continue;  // extrapolated rows have no observation
    EXPECT_LT(row[5], 1e-8) << "t = " << row[0];
    ++checked;
  }
  EXPECT_EQ(checked, 40);

  const std::string svg = io::read_file(path("f.svg"));
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_EQ(svg.substr(svg.find_last_not_of(" \n") - 5, 6), "</svg>");
}

TEST_F(Cli, TrainWritesLoadableCheckpointAndResumesSmoothly) {
  const auto first = run("train --model sg-ncde --epochs 4 --lr 3e-3 --no-keep-best " + kSmall + " --out " + path("r1"));
  ASSERT_EQ(first.code, 0) << first.output;
  const auto c = ckpt::load(path("r1") + "/checkpoint.json");
  const auto model = forecast::model_from_checkpoint(c);
  EXPECT_EQ(model->kind(), forecast::ModelKind::sg_ncde);
  const auto curve = read_numeric_csv(path("r1") + "/loss_curve.csv");
  ASSERT_EQ(curve.size(), 4u);

  const auto second = run("train --model sg-ncde --epochs 2 --lr 3e-3 --no-keep-best " + kSmall + " --resume " +
                          path("r1") + "/checkpoint.json --out " + path("r2"));
  ASSERT_EQ(second.code, 0) << second.output;
  const auto resumed = read_numeric_csv(path("r2") + "/loss_curve.csv");
  ASSERT_EQ(resumed.size(), 6u);
  EXPECT_EQ(resumed[4][0], 4.0);
  const double last_delta = std::abs(curve[3][1] - curve[2][1]);
  EXPECT_LE(std::abs(resumed[4][1] - curve[3][1]), 10.0 * last_delta);
}

TEST_F(Cli, DivergenceExitsThree) {
  const auto r = run("train --model sg-ncde --epochs 3 --lr 1e30 " + kSmall + " --out " + path("r"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("batch"), std::string::npos);
}

TEST_F(Cli, ForecastEmitsUnitQuaternions) {
  ASSERT_EQ(run("train --model hermite-ncde --epochs 1 " + kSmall + " --out " + path("r")).code, 0);
  ASSERT_EQ(run("simulate --seed 2 --count 1 --out " + path("s")).code, 0);
  const auto r = run("forecast --checkpoint " + path("r") + "/checkpoint.json --input " + path("s") +
                     "/traj_2.csv --horizon 5 --step 0.05 --out " + path("p.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = read_numeric_csv(path("p.csv"));
  ASSERT_EQ(rows.size(), 5u);
  const double last = io::load_trajectory_csv(path("s") + "/traj_2.csv").times().back();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_NEAR(rows[k][0], last + 0.05 * (k + 1), 1e-12);
    EXPECT_NEAR(Eigen::Vector4d(rows[k][1], rows[k][2], rows[k][3], rows[k][4]).norm(), 1.0, 1e-12);
  }
}

TEST_F(Cli, EvaluateOracleIsZero) {
  const auto r = run("evaluate --model oracle --test-trajectories 2 --out " + path("e"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = read_numeric_csv(path("e") + "/results.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0][2], 0.0);
  EXPECT_EQ(rows[0][3], 0.0);
  EXPECT_EQ(rows[0][4], 64.0);
}

TEST_F(Cli, EvaluateMatchesCompare) {
  const std::string common = "--seed 4 --epochs 2 " + kSmall;
  ASSERT_EQ(run("train --model gru " + common + " --out " + path("r")).code, 0);
  ASSERT_EQ(run("evaluate --checkpoint " + path("r") + "/checkpoint.json " + common + " --out " + path("e")).code, 0);
  ASSERT_EQ(run("compare --models gru " + common + " --out " + path("c")).code, 0);
  const auto e = read_numeric_csv(path("e") + "/results.csv");
  const auto c = read_numeric_csv(path("c") + "/results.csv");
  ASSERT_EQ(e.size(), 1u);
  ASSERT_EQ(c.size(), 1u);
  for (std::size_t j = 2; j < 15; ++j) EXPECT_EQ(e[0][j], c[0][j]) << "column " << j;
}

}  // namespace
}  // namespace sgncde
