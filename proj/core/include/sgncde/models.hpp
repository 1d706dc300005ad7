#pragma once

#include "sgncde/checkpoint.hpp"
#include "sgncde/control.hpp"
#include "sgncde/nn.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sgncde::forecast {

/// History plus the future times to predict (all after the last observation).
struct ForecastRequest {
  RotationTrajectory history;
  std::vector<double> query_times;

  /// Throws InvalidInputError for empty, unordered or non-future query times.
  void validate() const;
};

/// A (history, future) pair. `future[j]` is the clean rotation at `query_times[j]`.
struct Sample {
  RotationTrajectory history;
  std::vector<double> query_times;
  std::vector<Rotation> future;
  std::uint64_t trajectory = 0;  // simulation seed the window was cut from
  int window = 0;

  ForecastRequest request() const { return {history, query_times}; }
};

struct ForecastResult {
  std::vector<Rotation> rotations;
  /// Horizon steps whose 6D decode was degenerate and fell back to the previous prediction.
  int degenerate = 0;
};

/// Decodes 6D rows into rotations. A degenerate row is replaced by the previous
/// prediction's 6D (the first row by `fallback`) and counted.
ForecastResult decode_6d(const Eigen::MatrixXd& six, const so3::Rotation6D& fallback);

class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual std::string name() const = 0;
  virtual ForecastResult forecast(const ForecastRequest& request) const = 0;
};

/// Omega from the last two observations, replayed into the future.
class ConstantVelocity final : public Forecaster {
 public:
  std::string name() const override { return "constant-velocity"; }
  ForecastResult forecast(const ForecastRequest& request) const override;
};

/// Repeats the last observation.
class Identity final : public Forecaster {
 public:
  std::string name() const override { return "identity"; }
  ForecastResult forecast(const ForecastRequest& request) const override;
};

enum class SolverMode { rk4, dopri45 };

struct SolverConfig {
  SolverMode mode = SolverMode::dopri45;
  int rk4_steps = 1;  // per piece-constant segment
  double rtol = 1e-5;
  double atol = 1e-7;
  /// Initial adaptive step; <= 0 selects a quarter of the mean history spacing.
  double initial_step = 0.0;
  double min_step = 1e-10;
  long max_steps = 1000000;
};

struct SolverStats {
  long accepted = 0;
  long rejected = 0;
  long field_evaluations = 0;
};

/// Vector field of a CDE: z -> w x 10 matrix.
using FieldFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/**
 * Integrates dz = f(z) dX along `control` from t0, recording z at each of `stops`
 * (sorted, all >= t0). Integration restarts at every control breakpoint.
 * Throws StiffnessError when the adaptive step drops below config.min_step.
 */
std::vector<Eigen::VectorXd> integrate_cde(const FieldFn& f, const Control& control, double t0,
                                           const std::vector<double>& stops, const Eigen::VectorXd& z0,
                                           const SolverConfig& config, SolverStats* stats = nullptr);

enum class ModelKind { sg_ncde, hermite_ncde, gru };

std::string_view to_string(ModelKind kind);
/// Accepts "sg-ncde", "hermite-ncde", "gru". Throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view name);

struct Architecture {
  // CDE models
  int latent = 100;
  int hidden = 100;
  int half_window = 5;  // SG window is 2n + 1 samples
  // GRU baseline
  int gru_hidden = 250;
  int gru_layers = 3;
  double time_scale = 40.0;  // dt channel = time_scale * dt
};

struct BatchLoss {
  ad::Tensor loss;  // mean over samples of the per-sample summed Frobenius loss
  Eigen::MatrixXd predictions;  // (m * B) x 9, row j * B + b
  int degenerate = 0;
  /// Must run after loss.backward() to deliver gradients computed outside the tape.
  std::function<void()> finish_backward;
};

/// A forecaster with trainable parameters.
class NeuralModel : public Forecaster {
 public:
  NeuralModel() = default;
  NeuralModel(const NeuralModel&) = delete;
  NeuralModel& operator=(const NeuralModel&) = delete;

  virtual ModelKind kind() const = 0;
  std::string name() const override { return std::string(to_string(kind())); }
  const Architecture& architecture() const { return arch_; }

  const std::vector<nn::Parameter*>& parameters() { return params_; }
  std::size_t parameter_count() const;

  /// Builds the training graph for a batch with a common horizon length.
  virtual BatchLoss batch_loss(std::span<const Sample> batch) = 0;

  ckpt::Checkpoint to_checkpoint() const;
  /// Copies values and Adam moments by name. Throws InvalidInputError on mismatch.
  void load_parameters(const ckpt::Checkpoint& c);

 protected:
  Architecture arch_;
  std::vector<nn::Parameter*> params_;
};

/// Neural CDE driven by the SG path (sg_ncde) or a Hermite spline (hermite_ncde).
class CdeModel final : public NeuralModel {
 public:
  CdeModel(ModelKind kind, const Architecture& arch, std::uint64_t seed);

  ModelKind kind() const override { return kind_; }
  ForecastResult forecast(const ForecastRequest& request) const override;
  BatchLoss batch_loss(std::span<const Sample> batch) override;

  /// Control path for a history whose times are already shifted.
  std::unique_ptr<Control> make_control(const RotationTrajectory& history) const;
  sg::Weights sg_weights() const;
  Eigen::MatrixXd field(const Eigen::VectorXd& z) const;
  Eigen::VectorXd encode(double t0, const Vec9& x0) const;
  Eigen::VectorXd decode(const Eigen::VectorXd& z) const;

  SolverConfig& inference_solver() { return inference_; }
  const SolverConfig& inference_solver() const { return inference_; }
  /// Fixed-step RK4 steps per segment used by batch_loss.
  int train_steps() const { return train_steps_; }
  void set_train_steps(int steps);

  nn::MLP& encoder() { return encoder_; }
  nn::MLP& vector_field() { return field_; }
  nn::MLP& decoder() { return decoder_; }
  /// 1 x (2n + 1) raw SG weights; undefined for the Hermite model.
  nn::Parameter& sg_raw() { return sg_raw_; }

 private:
  ModelKind kind_;
  nn::MLP encoder_;
  nn::MLP field_;
  nn::MLP decoder_;
  nn::Parameter sg_raw_;
  SolverConfig inference_;
  int train_steps_ = 1;
};

/// Stacked GRU over (9D rotation, scaled gap to the next time), autoregressive rollout.
class GruModel final : public NeuralModel {
 public:
  GruModel(const Architecture& arch, std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::gru; }
  ForecastResult forecast(const ForecastRequest& request) const override;
  BatchLoss batch_loss(std::span<const Sample> batch) override;

 private:
  nn::GRUStack gru_;
  nn::Linear head_;
};

std::unique_ptr<NeuralModel> make_model(ModelKind kind, const Architecture& arch, std::uint64_t seed);
/// Rebuilds the model recorded in a checkpoint, including its parameters.
std::unique_ptr<NeuralModel> model_from_checkpoint(const ckpt::Checkpoint& c);

}  // namespace sgncde::forecast
