#include "sgncde/nn.hpp"

#include "sgncde/errors.hpp"

#include <array>
#include <cmath>

namespace sgncde::nn {

Parameter::Parameter(std::string n, Matrix value)
    : name(std::move(n)),
      tensor(Tensor::leaf(value, true)),
      adam_m(Matrix::Zero(value.rows(), value.cols())),
      adam_v(Matrix::Zero(value.rows(), value.cols())) {}

Matrix uniform_matrix(Index rows, Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-bound, bound);
  Matrix m(rows, cols);
  // Fill row by row so the draw order does not depend on storage order.
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = uni(rng);
  }
  return m;
}

Linear::Linear(std::string name, Index in, Index out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Parameter(name + ".weight", uniform_matrix(in, out, bound, rng));
  bias_ = Parameter(name + ".bias", uniform_matrix(1, out, bound, rng));
}

Tensor Linear::forward(const Tensor& x) const {
  return ad::add_row(ad::matmul(x, weight_.tensor), bias_.tensor);
}

MLP::MLP(std::string name, const std::vector<Index>& widths, std::mt19937_64& rng) {
  if (widths.size() < 2) throw InvalidInputError("MLP needs at least one layer");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
  }
}

Tensor MLP::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = ad::elu(h);
  }
  return h;
}

std::vector<Index> MLP::widths() const {
  std::vector<Index> w;
  if (layers_.empty()) return w;
  w.push_back(layers_.front().in_features());
  for (const auto& l : layers_) w.push_back(l.out_features());
  return w;
}

std::size_t MLP::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>((l.in_features() + 1) * l.out_features());
  return n;
}

void MLP::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l.collect(out);
}

GRUCell::GRUCell(std::string name, Index in, Index hidden, std::mt19937_64& rng)
    : hidden_(hidden), input_(name + ".ih", in, 3 * hidden, rng), recurrent_(name + ".hh", hidden, 3 * hidden, rng) {}

Tensor GRUCell::forward(const Tensor& x, const Tensor& h) const {
  const Tensor gi = input_.forward(x);
  const Tensor gh = recurrent_.forward(h);
  const Index H = hidden_;
  const Tensor r = ad::sigmoid(ad::slice_cols(gi, 0, H) + ad::slice_cols(gh, 0, H));
  const Tensor z = ad::sigmoid(ad::slice_cols(gi, H, H) + ad::slice_cols(gh, H, H));
  const Tensor n = ad::tanh(ad::slice_cols(gi, 2 * H, H) + ad::mul(r, ad::slice_cols(gh, 2 * H, H)));
  // (1 - z) n + z h = n + z (h - n)
  return n + ad::mul(z, h - n);
}

void GRUCell::collect(std::vector<Parameter*>& out) {
  input_.collect(out);
  recurrent_.collect(out);
}

GRUStack::GRUStack(std::string name, Index in, Index hidden, int layers, std::mt19937_64& rng) : hidden_(hidden) {
  if (layers < 1) throw InvalidInputError("GRU stack needs at least one layer");
  for (int l = 0; l < layers; ++l) {
    cells_.emplace_back(name + "." + std::to_string(l), l == 0 ? in : hidden, hidden, rng);
  }
}

std::vector<Tensor> GRUStack::step(const Tensor& x, const std::vector<Tensor>& h) const {
  if (h.size() != cells_.size()) throw ShapeError("GRU stack: wrong number of hidden states");
  std::vector<Tensor> out;
  out.reserve(cells_.size());
  Tensor input = x;
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    out.push_back(cells_[l].forward(input, h[l]));
    input = out.back();
  }
  return out;
}

std::vector<Tensor> GRUStack::initial_state(Index batch) const {
  return std::vector<Tensor>(cells_.size(), Tensor::constant(Matrix::Zero(batch, hidden_)));
}

void GRUStack::collect(std::vector<Parameter*>& out) {
  for (auto& c : cells_) c.collect(out);
}

void Adam::step(const std::vector<Parameter*>& params) {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (Parameter* p : params) {
    if (!p->tensor.has_grad()) continue;
    const Matrix g = p->tensor.grad();
    if (p->adam_m.rows() != g.rows() || p->adam_m.cols() != g.cols()) {
      throw ShapeError("Adam: moment shape does not match parameter " + p->name);
    }
    p->adam_m = config_.beta1 * p->adam_m + (1.0 - config_.beta1) * g;
    p->adam_v = config_.beta2 * p->adam_v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    Matrix& w = p->tensor.mutable_value();
    w.array() -= config_.lr * (p->adam_m.array() / c1) / ((p->adam_v.array() / c2).sqrt() + config_.eps);
  }
}

void zero_grad(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->tensor.zero_grad();
}

double grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (Parameter* p : params) {
    if (p->tensor.has_grad()) s += p->tensor.grad().squaredNorm();
  }
  return std::sqrt(s);
}

Tensor gram_schmidt_rows(const Tensor& six) {
  if (six.cols() != 6) throw ShapeError("gram_schmidt_rows expects B x 6");
  const Tensor nu1 = ad::slice_cols(six, 0, 3);
  const Tensor nu2 = ad::slice_cols(six, 3, 3);
  const Tensor e1 = ad::scale_rows(nu1, ad::reciprocal(ad::row_norms(nu1)));
  const Tensor u2 = nu2 - ad::scale_rows(e1, ad::row_dot(e1, nu2));
  const Tensor e2 = ad::scale_rows(u2, ad::reciprocal(ad::row_norms(u2)));
  const Tensor e3 = ad::cross_rows(e1, e2);
  const std::array<Tensor, 3> cols{e1, e2, e3};
  const Tensor stacked = ad::concat_cols(cols);  // e1x e1y e1z e2x ... e3z
  // Row-major R with columns e1, e2, e3: R(i, j) = e_j(i) -> stacked(3 j + i).
  static constexpr std::array<Index, 9> kOrder{0, 3, 6, 1, 4, 7, 2, 5, 8};
  return ad::gather_cols(stacked, kOrder);
}

Tensor rotation_frobenius_loss(const Tensor& pred9, const Tensor& target9) {
  if (pred9.shape() != target9.shape()) throw UsageError("loss: prediction and target shapes differ");
  return ad::sum(ad::row_norms(pred9 - target9));
}

}  // namespace sgncde::nn
