#include "sgncde/models.hpp"

#include "sgncde/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

namespace sgncde::forecast {

namespace {

using ad::Tensor;
using so3::Mat3;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RotationTrajectory shifted(const RotationTrajectory& h, double offset) {
  std::vector<double> t = h.times();
  for (double& v : t) v -= offset;
  return RotationTrajectory(std::move(t), h.rotations());
}

std::vector<double> shifted(const std::vector<double>& q, double offset) {
  std::vector<double> out = q;
  for (double& v : out) v -= offset;
  return out;
}

Eigen::Matrix<double, 1, 6> six_row(const so3::Rotation6D& r) {
  Eigen::Matrix<double, 1, 6> out;
  out << r.nu1.transpose(), r.nu2.transpose();
  return out;
}

so3::Rotation6D six_of(const Eigen::MatrixXd& m, Eigen::Index row) {
  return {m.row(row).head<3>().transpose(), m.row(row).segment<3>(3).transpose()};
}

Rotation rotation_from_row(const Eigen::MatrixXd& m, Eigen::Index row) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = m(row, 3 * i + j);
  return Rotation::unchecked(r);
}

/// Replaces degenerate 6D rows on the tape. Row j * B + b falls back to row (j - 1) * B + b,
/// the first horizon step to the last observation of sample b.
Tensor guard_6d(const Tensor& six, const std::vector<so3::Rotation6D>& first_fallback, int* degenerate) {
  const Eigen::MatrixXd& v = six.value();
  const auto batch = static_cast<Eigen::Index>(first_fallback.size());
  const Eigen::Index steps = v.rows() / batch;
  Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(v.rows(), 6);
  Eigen::MatrixXd repl = Eigen::MatrixXd::Zero(v.rows(), 6);
  Eigen::MatrixXd effective = v;
  bool any = false;
  for (Eigen::Index j = 0; j < steps; ++j) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Eigen::Index r = j * batch + b;
      if (!so3::is_degenerate(six_of(v, r))) continue;
      any = true;
      ++*degenerate;
      const Eigen::Matrix<double, 1, 6> fb =
          j == 0 ? six_row(first_fallback[b]) : Eigen::Matrix<double, 1, 6>(effective.row(r - batch));
      mask.row(r).setZero();
      repl.row(r) = fb;
      effective.row(r) = fb;
    }
  }
  if (!any) return six;
  return ad::mul(six, Tensor::constant(std::move(mask))) + Tensor::constant(std::move(repl));
}

void check_batch(std::span<const Sample> batch) {
  if (batch.empty()) throw UsageError("empty batch");
  const std::size_t m = batch.front().query_times.size();
  for (const Sample& s : batch) {
    if (s.query_times.size() != m || s.future.size() != m) {
      throw UsageError("batch samples must share one horizon length with matching targets");
    }
    s.request().validate();
  }
}

Eigen::MatrixXd stacked_targets(std::span<const Sample> batch) {
  const auto batch_size = static_cast<Eigen::Index>(batch.size());
  const auto m = static_cast<Eigen::Index>(batch.front().future.size());
  Eigen::MatrixXd out(m * batch_size, 9);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index b = 0; b < batch_size; ++b) out.row(j * batch_size + b) = so3::to_9d(batch[b].future[j]).transpose();
  return out;
}

Tensor finish_loss(const Tensor& six, std::span<const Sample> batch, BatchLoss& out) {
  std::vector<so3::Rotation6D> fallback;
  fallback.reserve(batch.size());
  for (const Sample& s : batch) fallback.push_back(so3::to_6d(s.history.rotations().back()));
  const Tensor pred = nn::gram_schmidt_rows(guard_6d(six, fallback, &out.degenerate));
  out.predictions = pred.value();
  const Tensor target = Tensor::constant(stacked_targets(batch));
  return ad::scale(nn::rotation_frobenius_loss(pred, target), 1.0 / static_cast<double>(batch.size()));
}

double mean_spacing(const RotationTrajectory& h) {
  if (h.size() < 2) return 0.0;
  return (h.times().back() - h.times().front()) / static_cast<double>(h.size() - 1);
}

// Dormand-Prince 5(4) tableau.
constexpr std::array<double, 7> kC{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr std::array<std::array<double, 6>, 7> kA{{
    {0, 0, 0, 0, 0, 0},
    {1.0 / 5, 0, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
    {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
}};
constexpr std::array<double, 7> kE{71.0 / 57600, 0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

}  // namespace

void ForecastRequest::validate() const {
  if (history.empty()) throw InvalidInputError("forecast request has an empty history");
  if (query_times.empty()) throw InvalidInputError("forecast request has no query times");
  double prev = history.times().back();
  for (double q : query_times) {
    if (!std::isfinite(q) || !(q > prev)) {
      std::ostringstream os;
      os << "query time " << q << " is not after " << prev
         << " (queries must be strictly increasing and after the last observation)";
      throw InvalidInputError(os.str());
    }
    prev = q;
  }
}

ForecastResult decode_6d(const Eigen::MatrixXd& six, const so3::Rotation6D& fallback) {
  ForecastResult out;
  so3::Rotation6D prev = fallback;
  for (Eigen::Index i = 0; i < six.rows(); ++i) {
    so3::Rotation6D r = six_of(six, i);
    if (so3::is_degenerate(r)) {
      r = prev;
      ++out.degenerate;
    }
    out.rotations.push_back(so3::gram_schmidt(r));
    prev = r;
  }
  return out;
}

ForecastResult ConstantVelocity::forecast(const ForecastRequest& request) const {
  request.validate();
  const auto& h = request.history;
  if (h.size() < 2) throw InvalidInputError("constant-velocity forecast needs at least two observations");
  const std::size_t n = h.size() - 1;
  const Rotation& last = h.rotation(n);
  const so3::Vec3 omega = so3::log_so3(last * h.rotation(n - 1).inverse()) / (h.time(n) - h.time(n - 1));
  ForecastResult out;
  for (double q : request.query_times) out.rotations.push_back(so3::exp_so3((q - h.time(n)) * omega) * last);
  return out;
}

ForecastResult Identity::forecast(const ForecastRequest& request) const {
  request.validate();
  ForecastResult out;
  out.rotations.assign(request.query_times.size(), request.history.rotations().back());
  return out;
}

std::vector<Eigen::VectorXd> integrate_cde(const FieldFn& f, const Control& control, double t0,
                                           const std::vector<double>& stops, const Eigen::VectorXd& z0,
                                           const SolverConfig& config, SolverStats* stats) {
  if (!std::is_sorted(stops.begin(), stops.end())) throw InvalidInputError("integration stops must be sorted");
  SolverStats local;
  SolverStats& st = stats ? *stats : local;
  std::vector<Eigen::VectorXd> out;
  out.reserve(stops.size());
  std::size_t next_stop = 0;
  while (next_stop < stops.size() && stops[next_stop] <= t0) {
    if (stops[next_stop] < t0) throw OutOfSupportError("integration stop before the start time");
    out.push_back(z0);
    ++next_stop;
  }
  Eigen::VectorXd z = z0;
  const auto rate = [&](const Eigen::VectorXd& zz, double t, std::size_t piece) {
    ++st.field_evaluations;
    return Eigen::VectorXd(f(zz) * control.derivative(t, piece));
  };
  double h_next = config.initial_step;
  double err_prev = 1e-4;
  for (const Segment& seg : make_segments(control, t0, stops)) {
    const double len = seg.end - seg.begin;
    if (config.mode == SolverMode::rk4) {
      const int n = std::max(1, config.rk4_steps);
      const double h = len / n;
      for (int i = 0; i < n; ++i) {
        const double t = seg.begin + i * h;
        const Eigen::VectorXd k1 = rate(z, t, seg.piece);
        const Eigen::VectorXd k2 = rate(z + 0.5 * h * k1, t + 0.5 * h, seg.piece);
        const Eigen::VectorXd k3 = rate(z + 0.5 * h * k2, t + 0.5 * h, seg.piece);
        const Eigen::VectorXd k4 = rate(z + h * k3, t + h, seg.piece);
        z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        ++st.accepted;
      }
    } else {
      if (!(h_next > 0.0)) h_next = len / 4.0;
      double t = seg.begin;
      std::array<Eigen::VectorXd, 7> k;
      k[0] = rate(z, t, seg.piece);
      while (t < seg.end) {
        if (st.accepted + st.rejected >= config.max_steps) {
          throw StiffnessError("adaptive solver exceeded its step budget");
        }
        const bool last = t + h_next * (1.0 + 1e-12) >= seg.end;
        const double h = last ? seg.end - t : h_next;
        for (int s = 1; s < 7; ++s) {
          Eigen::VectorXd zs = z;
          for (int j = 0; j < s; ++j) {
            if (kA[s][j] != 0.0) zs += h * kA[s][j] * k[j];
          }
          k[s] = rate(zs, t + kC[s] * h, seg.piece);
        }
        Eigen::VectorXd z_new = z;
        for (int j = 0; j < 6; ++j) z_new += h * kA[6][j] * k[j];
        Eigen::VectorXd err = Eigen::VectorXd::Zero(z.size());
        for (int j = 0; j < 7; ++j) err += h * kE[j] * k[j];
        const Eigen::ArrayXd scale = config.atol + config.rtol * z.array().abs().max(z_new.array().abs());
        const double e = std::sqrt((err.array() / scale).square().mean());
        if (!std::isfinite(e)) throw StiffnessError("adaptive solver produced a non-finite state");
        if (e <= 1.0) {
          ++st.accepted;
          t = last ? seg.end : t + h;
          z = std::move(z_new);
          k[0] = k[6];
          const double fac = e == 0.0 ? 10.0 : 0.9 * std::pow(e, -0.7 / 5.0) * std::pow(err_prev, 0.4 / 5.0);
          err_prev = std::max(e, 1e-4);
          // Keep the unclipped proposal when the step was shortened to hit the segment end.
          h_next = (last ? std::max(h, h_next) : h) * std::clamp(fac, 0.2, 10.0);
        } else {
          ++st.rejected;
          h_next = h * std::max(0.2, 0.9 * std::pow(e, -0.2));
          if (h_next < config.min_step) {
            std::ostringstream os;
            os << "adaptive step " << h_next << " fell below " << config.min_step << " at t = " << t;
            throw StiffnessError(os.str());
          }
        }
      }
    }
    while (next_stop < stops.size() && stops[next_stop] <= seg.end) {
      out.push_back(z);
      ++next_stop;
    }
  }
  return out;
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::sg_ncde:
      return "sg-ncde";
    case ModelKind::hermite_ncde:
      return "hermite-ncde";
    case ModelKind::gru:
      return "gru";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : {ModelKind::sg_ncde, ModelKind::hermite_ncde, ModelKind::gru}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown model '" + std::string(name) + "' (valid: sg-ncde, hermite-ncde, gru)");
}

std::size_t NeuralModel::parameter_count() const {
  std::size_t n = 0;
  for (const nn::Parameter* p : params_) n += static_cast<std::size_t>(p->tensor.value().size());
  return n;
}

ckpt::Checkpoint NeuralModel::to_checkpoint() const {
  ckpt::Checkpoint c;
  c.model = name();
  c.architecture = {{"latent", arch_.latent},         {"hidden", arch_.hidden},
                    {"half_window", arch_.half_window}, {"gru_hidden", arch_.gru_hidden},
                    {"gru_layers", arch_.gru_layers}, {"time_scale", arch_.time_scale}};
  for (const nn::Parameter* p : params_) c.tensors.push_back({p->name, p->tensor.value(), p->adam_m, p->adam_v});
  if (const auto* cde = dynamic_cast<const CdeModel*>(this)) {
    c.settings["train_steps"] = std::to_string(cde->train_steps());
  }
  return c;
}

void NeuralModel::load_parameters(const ckpt::Checkpoint& c) {
  for (nn::Parameter* p : params_) {
    const ckpt::TensorRecord& r = c.tensor(p->name);
    if (r.value.rows() != p->tensor.rows() || r.value.cols() != p->tensor.cols()) {
      throw InvalidInputError("checkpoint tensor '" + p->name + "' has the wrong shape");
    }
    p->tensor.mutable_value() = r.value;
    p->adam_m = r.adam_m.size() == r.value.size() ? r.adam_m : Eigen::MatrixXd::Zero(r.value.rows(), r.value.cols());
    p->adam_v = r.adam_v.size() == r.value.size() ? r.adam_v : Eigen::MatrixXd::Zero(r.value.rows(), r.value.cols());
  }
}

// ---------------------------------------------------------------------------------------------
// CDE models

CdeModel::CdeModel(ModelKind kind, const Architecture& arch, std::uint64_t seed) : kind_(kind) {
  if (kind == ModelKind::gru) throw UsageError("CdeModel cannot be a GRU");
  if (arch.latent < 1 || arch.hidden < 1) throw ConfigError("latent and hidden widths must be positive");
  if (kind == ModelKind::sg_ncde && arch.half_window < 1) throw ConfigError("SG half window must be at least 1");
  arch_ = arch;
  std::mt19937_64 rng(seed);
  const ad::Index w = arch.latent;
  const ad::Index hid = arch.hidden;
  encoder_ = nn::MLP("encoder", {10, hid, w}, rng);
  field_ = nn::MLP("field", {w, hid, hid, hid, w * 10}, rng);
  decoder_ = nn::MLP("decoder", {w, hid, 6}, rng);
  nn::Linear& head = decoder_.layer(decoder_.layer_count() - 1);
  head.weight().tensor.mutable_value().setZero();
  head.bias().tensor.mutable_value() << 1, 0, 0, 0, 1, 0;
  encoder_.collect(params_);
  field_.collect(params_);
  decoder_.collect(params_);
  if (kind == ModelKind::sg_ncde) {
    sg_raw_ = nn::Parameter("sg.raw", sg::Weights::uniform(arch.half_window).raw().transpose());
    params_.push_back(&sg_raw_);
  }
}

void CdeModel::set_train_steps(int steps) {
  if (steps < 1) throw ConfigError("RK4 steps per segment must be at least 1");
  train_steps_ = steps;
}

sg::Weights CdeModel::sg_weights() const { return sg::Weights(sg_raw_.tensor.value().row(0).transpose()); }

std::unique_ptr<Control> CdeModel::make_control(const RotationTrajectory& history) const {
  if (kind_ == ModelKind::hermite_ncde) return std::make_unique<HermiteControl>(history);
  const sg::Weights w = sg_weights();
  return std::make_unique<SGControl>(sg::fit_path_with_systems(history, arch_.half_window, &w));
}

Eigen::MatrixXd CdeModel::field(const Eigen::VectorXd& z) const {
  ad::NoGradGuard guard;
  const Eigen::MatrixXd out = field_.forward(Tensor::constant(z.transpose())).value();
  return Eigen::Map<const RowMajor>(out.data(), arch_.latent, 10);
}

Eigen::VectorXd CdeModel::encode(double t0, const Vec9& x0) const {
  ad::NoGradGuard guard;
  Eigen::MatrixXd in(1, 10);
  in << t0, x0.transpose();
  return encoder_.forward(Tensor::constant(std::move(in))).value().row(0).transpose();
}

Eigen::VectorXd CdeModel::decode(const Eigen::VectorXd& z) const {
  ad::NoGradGuard guard;
  return decoder_.forward(Tensor::constant(z.transpose())).value().row(0).transpose();
}

ForecastResult CdeModel::forecast(const ForecastRequest& request) const {
  request.validate();
  const double t_ref = request.history.times().back();
  const RotationTrajectory h = shifted(request.history, t_ref);
  const std::vector<double> queries = shifted(request.query_times, t_ref);
  const auto control = make_control(h);
  const double t0 = h.time(0);
  SolverConfig cfg = inference_;
  if (!(cfg.initial_step > 0.0) && h.size() > 1) cfg.initial_step = mean_spacing(h) / 4.0;
  const auto zs = integrate_cde([this](const Eigen::VectorXd& z) { return field(z); }, *control, t0, queries,
                                encode(t0, control->value(t0)), cfg);
  Eigen::MatrixXd six(static_cast<Eigen::Index>(zs.size()), 6);
  for (std::size_t j = 0; j < zs.size(); ++j) six.row(static_cast<Eigen::Index>(j)) = decode(zs[j]).transpose();
  return decode_6d(six, so3::to_6d(h.rotations().back()));
}

BatchLoss CdeModel::batch_loss(std::span<const Sample> batch) {
  check_batch(batch);
  const auto batch_size = static_cast<Eigen::Index>(batch.size());
  const std::size_t m = batch.front().query_times.size();
  const bool harvest = kind_ == ModelKind::sg_ncde && ad::grad_enabled();
  const int steps = train_steps_;

  struct RowPlan {
    std::unique_ptr<Control> control;
    std::vector<Segment> segments;
    double t0 = 0.0;
  };
  std::vector<RowPlan> rows(batch.size());
  std::size_t max_segments = 0;
  Eigen::MatrixXd x0(batch_size, 10);
  for (Eigen::Index b = 0; b < batch_size; ++b) {
    const Sample& s = batch[b];
    const double t_ref = s.history.times().back();
    const RotationTrajectory h = shifted(s.history, t_ref);
    RowPlan& plan = rows[b];
    plan.control = make_control(h);
    plan.t0 = h.time(0);
    plan.segments = make_segments(*plan.control, plan.t0, shifted(s.query_times, t_ref));
    if (plan.segments.size() < m) throw UsageError("internal: fewer segments than horizon steps");
    max_segments = std::max(max_segments, plan.segments.size());
    x0(b, 0) = plan.t0;
    x0.row(b).tail<9>() = plan.control->value(plan.t0).transpose();
  }

  // Each stage input U = h * dX/dt(t_stage); padded (left) rows use h = 0 and leave z unchanged.
  struct StageRef {
    Tensor leaf;
    std::vector<double> time;  // per row, NaN for padding
    std::vector<double> step;  // per row
    std::vector<std::size_t> piece;
  };
  std::vector<StageRef> stages;
  const auto stage_input = [&](std::size_t seg_index, int sub, double frac) {
    StageRef ref;
    ref.time.assign(batch.size(), std::nan(""));
    ref.step.assign(batch.size(), 0.0);
    ref.piece.assign(batch.size(), 0);
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(batch_size, 10);
    for (Eigen::Index b = 0; b < batch_size; ++b) {
      const RowPlan& plan = rows[b];
      const std::size_t pad = max_segments - plan.segments.size();
      if (seg_index < pad) continue;
      const Segment& seg = plan.segments[seg_index - pad];
      const double h = (seg.end - seg.begin) / steps;
      const double t = seg.begin + (sub + frac) * h;
      u.row(b) = h * plan.control->derivative(t, seg.piece).transpose();
      ref.time[b] = t;
      ref.step[b] = h;
      ref.piece[b] = seg.piece;
    }
    ref.leaf = harvest ? Tensor::leaf(std::move(u), true) : Tensor::constant(std::move(u));
    if (harvest) stages.push_back(ref);
    return ref.leaf;
  };

  const Tensor x0_leaf = harvest ? Tensor::leaf(x0, true) : Tensor::constant(x0);
  const ad::Index w = arch_.latent;
  const auto f = [&](const Tensor& z, const Tensor& u) { return ad::batched_matvec(field_.forward(z), u, w, 10); };

  Tensor z = encoder_.forward(x0_leaf);
  std::vector<Tensor> outputs;
  for (std::size_t s = 0; s < max_segments; ++s) {
    for (int i = 0; i < steps; ++i) {
      const Tensor u1 = stage_input(s, i, 0.0);
      const Tensor u2 = stage_input(s, i, 0.5);
      const Tensor u4 = stage_input(s, i, 1.0);
      const Tensor k1 = f(z, u1);
      const Tensor k2 = f(z + 0.5 * k1, u2);
      const Tensor k3 = f(z + 0.5 * k2, u2);
      const Tensor k4 = f(z + k3, u4);
      z = z + (1.0 / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (s + m >= max_segments) outputs.push_back(z);
  }

  BatchLoss out;
  const Tensor six = decoder_.forward(ad::concat_rows(outputs));
  out.loss = finish_loss(six, batch, out);

  if (harvest) {
    auto shared_rows = std::make_shared<std::vector<RowPlan>>(std::move(rows));
    out.finish_backward = [this, shared_rows, stages = std::move(stages), x0_leaf]() {
      const sg::Weights weights = sg_weights();
      Eigen::VectorXd g_raw = Eigen::VectorXd::Zero(weights.raw().size());
      const Eigen::MatrixXd g_x0 = x0_leaf.grad();
      for (std::size_t b = 0; b < shared_rows->size(); ++b) {
        const auto& sgc = static_cast<const SGControl&>(*(*shared_rows)[b].control);
        const auto& coeffs = sgc.path().coefficients();
        std::vector<Vec9> g_rho(coeffs.size(), Vec9::Zero());
        const double t0 = (*shared_rows)[b].t0;
        const std::size_t a0 = sgc.piece_for(t0);
        g_rho[a0] += sg::control_jacobian(coeffs[a0], t0).value.transpose() *
                     g_x0.row(static_cast<Eigen::Index>(b)).tail<9>().transpose();
        for (const StageRef& st : stages) {
          if (std::isnan(st.time[b]) || !st.leaf.has_grad()) continue;
          const Eigen::Matrix<double, 1, 9> g = st.leaf.grad().row(static_cast<Eigen::Index>(b)).tail<9>();
          if (g.isZero(0.0)) continue;
          const std::size_t a = st.piece[b];
          g_rho[a] += st.step[b] * sg::control_jacobian(coeffs[a], st.time[b]).derivative.transpose() * g.transpose();
        }
        for (std::size_t a = 0; a < coeffs.size(); ++a) {
          if (g_rho[a].isZero(0.0)) continue;
          g_raw += sg::solve_coefficients_grad(sgc.fitted().systems[a], weights, g_rho[a]);
        }
      }
      sg_raw_.tensor.accumulate_grad(g_raw.transpose());
    };
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// GRU baseline

GruModel::GruModel(const Architecture& arch, std::uint64_t seed) {
  if (arch.gru_hidden < 1 || arch.gru_layers < 1) throw ConfigError("GRU width and depth must be positive");
  if (!(arch.time_scale > 0.0)) throw ConfigError("GRU time scale must be positive");
  arch_ = arch;
  std::mt19937_64 rng(seed);
  gru_ = nn::GRUStack("gru", 10, arch.gru_hidden, arch.gru_layers, rng);
  head_ = nn::Linear("head", arch.gru_hidden, 6, rng);
  head_.weight().tensor.mutable_value().setZero();
  head_.bias().tensor.mutable_value() << 1, 0, 0, 0, 1, 0;
  gru_.collect(params_);
  head_.collect(params_);
}

namespace {

struct GruRollout {
  Tensor six;  // (m * B) x 6 after the degenerate guard
  Tensor pred9;
  int degenerate = 0;
};

GruRollout gru_rollout(const nn::GRUStack& gru, const nn::Linear& head, double time_scale,
                       std::span<const Sample> batch) {
  const auto batch_size = static_cast<Eigen::Index>(batch.size());
  const std::size_t m = batch.front().query_times.size();
  std::size_t max_len = 0;
  for (const Sample& s : batch) max_len = std::max(max_len, s.history.size());

  std::vector<Tensor> h = gru.initial_state(batch_size);
  for (std::size_t tau = 0; tau < max_len; ++tau) {
    Eigen::MatrixXd in = Eigen::MatrixXd::Zero(batch_size, 10);
    Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(batch_size, 1);
    bool padded = false;
    for (Eigen::Index b = 0; b < batch_size; ++b) {
      const auto& hist = batch[b].history;
      const std::size_t pad = max_len - hist.size();
      if (tau < pad) {
        mask(b, 0) = 0.0;
        padded = true;
        continue;
      }
      const std::size_t k = tau - pad;
      const double next = k + 1 < hist.size() ? hist.time(k + 1) : batch[b].query_times.front();
      in.row(b).head<9>() = so3::to_9d(hist.rotation(k)).transpose();
      in(b, 9) = time_scale * (next - hist.time(k));
    }
    std::vector<Tensor> h_new = gru.step(Tensor::constant(std::move(in)), h);
    if (padded) {
      const Tensor mk = Tensor::constant(std::move(mask));
      for (std::size_t l = 0; l < h.size(); ++l) h_new[l] = h[l] + ad::scale_rows(h_new[l] - h[l], mk);
    }
    h = std::move(h_new);
  }

  GruRollout out;
  std::vector<so3::Rotation6D> fallback;
  for (const Sample& s : batch) fallback.push_back(so3::to_6d(s.history.rotations().back()));
  std::vector<Tensor> six_steps;
  std::vector<Tensor> pred_steps;
  for (std::size_t j = 0; j < m; ++j) {
    if (j > 0) {
      Eigen::MatrixXd dt(batch_size, 1);
      for (Eigen::Index b = 0; b < batch_size; ++b) {
        dt(b, 0) = time_scale * (batch[b].query_times[j] - batch[b].query_times[j - 1]);
      }
      const std::array<Tensor, 2> parts{pred_steps.back(), Tensor::constant(std::move(dt))};
      h = gru.step(ad::concat_cols(parts), h);
    }
    const Tensor six = guard_6d(head.forward(h.back()), fallback, &out.degenerate);
    for (Eigen::Index b = 0; b < batch_size; ++b) fallback[b] = six_of(six.value(), b);
    six_steps.push_back(six);
    pred_steps.push_back(nn::gram_schmidt_rows(six));
  }
  out.six = ad::concat_rows(six_steps);
  out.pred9 = ad::concat_rows(pred_steps);
  return out;
}

}  // namespace

ForecastResult GruModel::forecast(const ForecastRequest& request) const {
  request.validate();
  ad::NoGradGuard guard;
  const Sample s{request.history, request.query_times, {}};
  const GruRollout r = gru_rollout(gru_, head_, arch_.time_scale, std::span<const Sample>(&s, 1));
  ForecastResult out;
  out.degenerate = r.degenerate;
  for (Eigen::Index j = 0; j < r.pred9.rows(); ++j) out.rotations.push_back(rotation_from_row(r.pred9.value(), j));
  return out;
}

BatchLoss GruModel::batch_loss(std::span<const Sample> batch) {
  check_batch(batch);
  BatchLoss out;
  const GruRollout r = gru_rollout(gru_, head_, arch_.time_scale, batch);
  out.degenerate = r.degenerate;
  out.predictions = r.pred9.value();
  const Tensor target = Tensor::constant(stacked_targets(batch));
  out.loss = ad::scale(nn::rotation_frobenius_loss(r.pred9, target), 1.0 / static_cast<double>(batch.size()));
  return out;
}

std::unique_ptr<NeuralModel> make_model(ModelKind kind, const Architecture& arch, std::uint64_t seed) {
  if (kind == ModelKind::gru) return std::make_unique<GruModel>(arch, seed);
  return std::make_unique<CdeModel>(kind, arch, seed);
}

std::unique_ptr<NeuralModel> model_from_checkpoint(const ckpt::Checkpoint& c) {
  const ModelKind kind = parse_model_kind(c.model);
  const auto get = [&](const char* key) {
    const auto it = c.architecture.find(key);
    if (it == c.architecture.end()) throw InvalidInputError(std::string("checkpoint lacks architecture field ") + key);
    return it->second;
  };
  Architecture arch;
  arch.latent = static_cast<int>(get("latent"));
  arch.hidden = static_cast<int>(get("hidden"));
  arch.half_window = static_cast<int>(get("half_window"));
  arch.gru_hidden = static_cast<int>(get("gru_hidden"));
  arch.gru_layers = static_cast<int>(get("gru_layers"));
  arch.time_scale = get("time_scale");
  auto model = make_model(kind, arch, 0);
  model->load_parameters(c);
  if (auto* cde = dynamic_cast<CdeModel*>(model.get())) {
    if (const auto it = c.settings.find("train_steps"); it != c.settings.end()) {
      cde->set_train_steps(std::stoi(it->second));
    }
  }
  return model;
}

}  // namespace sgncde::forecast
