#pragma once

#include "sgncde/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace sgncde::nn {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

/// A trainable leaf tensor together with its Adam moments.
struct Parameter {
  std::string name;
  Tensor tensor;
  Matrix adam_m;
  Matrix adam_v;

  Parameter() = default;
  Parameter(std::string name, Matrix value);
};

/// Uniform in [-bound, bound].
Matrix uniform_matrix(Index rows, Index cols, double bound, std::mt19937_64& rng);

/// y = x W + b with W: in x out, b: 1 x out; init uniform in +-1/sqrt(in).
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, Index in, Index out, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  Index in_features() const { return weight_.tensor.rows(); }
  Index out_features() const { return weight_.tensor.cols(); }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter weight_;
  Parameter bias_;
};

/// Linear layers with ELU between consecutive layers (none after the last).
class MLP {
 public:
  MLP() = default;
  /// widths = {in, hidden..., out}; widths.size() - 1 linear layers.
  MLP(std::string name, const std::vector<Index>& widths, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  std::vector<Index> widths() const;
  std::size_t parameter_count() const;
  Linear& layer(std::size_t i) { return layers_.at(i); }
  std::size_t layer_count() const { return layers_.size(); }
  void collect(std::vector<Parameter*>& out);

 private:
  std::vector<Linear> layers_;
};

/// Standard GRU cell:
///   r = s(x W_ir + b_ir + h W_hr + b_hr), z = s(x W_iz + b_iz + h W_hz + b_hz)
///   n = tanh(x W_in + b_in + r * (h W_hn + b_hn)), h' = (1 - z) * n + z * h
class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(std::string name, Index in, Index hidden, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, const Tensor& h) const;
  Index hidden() const { return hidden_; }
  void collect(std::vector<Parameter*>& out);

 private:
  Index hidden_ = 0;
  Linear input_;   // in -> 3 hidden, gate order r, z, n
  Linear recurrent_;  // hidden -> 3 hidden
};

/// Stacked GRU cells; layer l > 0 consumes the hidden state of layer l - 1.
class GRUStack {
 public:
  GRUStack() = default;
  GRUStack(std::string name, Index in, Index hidden, int layers, std::mt19937_64& rng);

  /// Advances every layer one step; returns the new hidden states.
  std::vector<Tensor> step(const Tensor& x, const std::vector<Tensor>& h) const;
  std::vector<Tensor> initial_state(Index batch) const;
  Index hidden() const { return hidden_; }
  int layers() const { return static_cast<int>(cells_.size()); }
  void collect(std::vector<Parameter*>& out);

 private:
  Index hidden_ = 0;
  std::vector<GRUCell> cells_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Reads gradients from each parameter's tensor.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}
  void step(const std::vector<Parameter*>& params);
  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  AdamConfig config_;
  long steps_ = 0;
};

void zero_grad(const std::vector<Parameter*>& params);
/// Global L2 norm of the current gradients.
double grad_norm(const std::vector<Parameter*>& params);

/// B x 6 (nu1 | nu2) to B x 9 row-major rotations by Gram-Schmidt.
Tensor gram_schmidt_rows(const Tensor& six);

/// Sum over rows of ||pred_row - target_row||_2 (Frobenius norm per rotation).
Tensor rotation_frobenius_loss(const Tensor& pred9, const Tensor& target9);

}  // namespace sgncde::nn
