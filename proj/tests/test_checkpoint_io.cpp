#include "sgncde/checkpoint.hpp"
#include "sgncde/errors.hpp"
#include "sgncde/trajectory_io.hpp"
#include "test_support.hpp"

#include <filesystem>
#include <limits>

namespace sgncde {
namespace {

using so3::Rotation;

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sgncde_io_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ckpt::Checkpoint sample_checkpoint() {
  ckpt::Checkpoint c;
  c.model = "sg-ncde";
  c.architecture = {{"latent", 4}, {"hidden", 6}, {"half_window", 2}};
  c.settings = {{"lr", "0.001"}, {"seed", "18446744073709551615"}};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (const char* name : {"a.weight", "a.bias"}) {
    ckpt::TensorRecord t;
    t.name = name;
    t.value = Eigen::MatrixXd::NullaryExpr(3, 2, [&] { return n(rng); });
    t.adam_m = Eigen::MatrixXd::NullaryExpr(3, 2, [&] { return n(rng) * 1e-7; });
    t.adam_v = Eigen::MatrixXd::NullaryExpr(3, 2, [&] { return std::abs(n(rng)) * 1e-300; });
    c.tensors.push_back(t);
  }
  c.tensors[0].value(0, 0) = 1.0 / 3.0;
  c.tensors[0].value(1, 0) = -0.0;
  c.tensors[0].value(2, 0) = std::numeric_limits<double>::denorm_min();
  c.tensors[0].value(0, 1) = std::numeric_limits<double>::max();
  c.optimizer_steps = 1234;
  c.history = {{0, 3.5, 0.25, 0.3}, {1, 2.5, 0.2, std::numeric_limits<double>::quiet_NaN()}};
  return c;
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto c = sample_checkpoint();
  const auto back = ckpt::deserialize(ckpt::serialize(c));
  EXPECT_EQ(back.format_version, ckpt::kFormatVersion);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.architecture, c.architecture);
  EXPECT_EQ(back.settings, c.settings);
  EXPECT_EQ(back.optimizer_steps, 1234);
  ASSERT_EQ(back.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.tensors[i].name, c.tensors[i].name);
    EXPECT_EQ(back.tensors[i].value, c.tensors[i].value);
    EXPECT_EQ(back.tensors[i].adam_m, c.tensors[i].adam_m);
    EXPECT_EQ(back.tensors[i].adam_v, c.tensors[i].adam_v);
  }
  EXPECT_TRUE(std::signbit(back.tensors[0].value(1, 0)));
  ASSERT_EQ(back.history.size(), 2u);
  EXPECT_EQ(back.history[0].train_loss, 3.5);
  EXPECT_EQ(back.history[1].epoch, 1);
  EXPECT_TRUE(std::isnan(back.history[1].val_rge));
  EXPECT_EQ(ckpt::serialize(back), ckpt::serialize(c));
  EXPECT_EQ(&back.tensor("a.bias"), &back.tensors[1]);
  EXPECT_THROW(back.tensor("missing"), InvalidInputError);
}

TEST(Checkpoint, RejectsBadInput) {
  EXPECT_THROW(ckpt::deserialize("not json"), InvalidInputError);
  EXPECT_THROW(ckpt::deserialize("{}"), InvalidInputError);
  auto text = ckpt::serialize(sample_checkpoint());
  const auto pos = text.find("\"format_version\": 1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 19, "\"format_version\": 99");
  EXPECT_THROW(ckpt::deserialize(text), InvalidInputError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = temp_dir("ckpt");
  const auto path = (dir / "c.json").string();
  ckpt::save(path, sample_checkpoint());
  EXPECT_EQ(ckpt::serialize(ckpt::load(path)), ckpt::serialize(sample_checkpoint()));
  EXPECT_THROW(ckpt::load((dir / "absent.json").string()), InvalidInputError);
}

TEST(TrajectoryCsv, RoundTrip) {
  std::mt19937_64 rng(2);
  std::vector<double> t;
  std::vector<Rotation> rs;
  for (int i = 0; i < 200; ++i) {
    t.push_back(0.025 * i + 1e-3 * i * i);
    rs.push_back(so3::sample_uniform_rotation(rng));
  }
  const sg::RotationTrajectory traj(t, rs);
  const std::string text = io::format_trajectory_csv(traj);
  EXPECT_EQ(text.substr(0, text.find('\n')), "t,qw,qx,qy,qz");
  const auto back = io::parse_trajectory_csv(text);
  ASSERT_EQ(back.size(), traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    EXPECT_EQ(back.time(k), traj.time(k));
    EXPECT_LT((back.rotation(k).matrix() - traj.rotation(k).matrix()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_GE(so3::to_quaternion(back.rotation(k)).w, 0.0);
  }
  const auto again = io::parse_trajectory_csv(io::format_trajectory_csv(back));
  for (std::size_t k = 0; k < traj.size(); ++k)
    EXPECT_LT((again.rotation(k).matrix() - traj.rotation(k).matrix()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(TrajectoryCsv, NegativeScalarQuaternionIsNormalized) {
  const auto traj = io::parse_trajectory_csv("t,qw,qx,qy,qz\n0,-1,0,0,0\n0.1,-0.7071067811865476,0,0,-0.7071067811865476\n");
  EXPECT_LT((traj.rotation(0).matrix() - so3::Mat3::Identity()).norm(), 1e-15);
  const auto q = so3::to_quaternion(traj.rotation(1));
  EXPECT_NEAR(q.w, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(q.z, std::sqrt(0.5), 1e-15);
}

TEST(TrajectoryCsv, RejectsMalformedInput) {
  EXPECT_THROW(io::parse_trajectory_csv(""), InvalidInputError);
  EXPECT_THROW(io::parse_trajectory_csv("time,qw,qx,qy,qz\n0,1,0,0,0\n"), InvalidInputError);
  EXPECT_THROW(io::parse_trajectory_csv("t,qw,qx,qy,qz\n0,1,0,0\n"), InvalidInputError);
  EXPECT_THROW(io::parse_trajectory_csv("t,qw,qx,qy,qz\n0,1,0,0,abc\n"), InvalidInputError);
  EXPECT_THROW(io::parse_trajectory_csv("t,qw,qx,qy,qz\n0,2,0,0,0\n"), InvalidInputError);
  EXPECT_THROW(io::parse_trajectory_csv("t,qw,qx,qy,qz\n0,1,0,0,0\n0,1,0,0,0\n"), InvalidInputError);
}

TEST(AtomicWrite, ReplacesContentsWithoutLeftovers) {
  const auto dir = temp_dir("atomic");
  const auto path = (dir / "out.csv").string();
  io::write_file_atomic(path, "first\n");
  io::write_file_atomic(path, "second\n");
  EXPECT_EQ(io::read_file(path), "second\n");
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1);
  io::write_file_atomic((dir / "nested" / "x.csv").string(), "x");
  EXPECT_EQ(io::read_file((dir / "nested" / "x.csv").string()), "x");
}

TEST(FormatDouble, ShortestRoundTrip) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    EXPECT_EQ(std::stod(io::format_double(x)), x);
  }
  EXPECT_EQ(io::format_double(0.1), "0.1");
}

}  // namespace
}  // namespace sgncde
