#include "sgncde/training.hpp"

#include "sgncde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace sgncde::train {

void TrainingConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (rk4_steps < 1) throw ConfigError("RK4 steps must be at least 1");
  if (val_every < 1) throw ConfigError("validation interval must be at least 1");
  if (!std::isfinite(grad_clip)) throw ConfigError("gradient clip must be finite");
}

double mean_rge(const forecast::Forecaster& model, std::span<const Sample> samples) {
  double total = 0.0;
  long count = 0;
  for (const Sample& s : samples) {
    try {
      const auto r = model.forecast(s.request());
      for (std::size_t j = 0; j < s.future.size(); ++j) {
        total += so3::geodesic_error(r.rotations[j], s.future[j]);
        ++count;
      }
    } catch (const Error&) {
    }
  }
  return count > 0 ? total / static_cast<double>(count) : std::nan("");
}

namespace {

double batch_rge(const Eigen::MatrixXd& pred9, std::span<const Sample> batch) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  double total = 0.0;
  for (Eigen::Index r = 0; r < pred9.rows(); ++r) {
    const Sample& s = batch[r % b];
    const so3::Vec9 target = so3::to_9d(s.future[static_cast<std::size_t>(r / b)]);
    const double d = (pred9.row(r).transpose() - target).norm();
    total += 2.0 * std::asin(std::clamp(d / (2.0 * std::sqrt(2.0)), 0.0, 1.0));
  }
  return total;
}

void clip_gradients(const std::vector<nn::Parameter*>& params, double clip) {
  const double norm = nn::grad_norm(params);
  if (!(norm > clip)) return;
  const double s = clip / norm;
  for (nn::Parameter* p : params) {
    if (!p->tensor.has_grad()) continue;
    const Eigen::MatrixXd g = p->tensor.grad() * s;
    p->tensor.zero_grad();
    p->tensor.accumulate_grad(g);
  }
}

std::vector<Eigen::MatrixXd> snapshot(const std::vector<nn::Parameter*>& params) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(params.size());
  for (const nn::Parameter* p : params) out.push_back(p->tensor.value());
  return out;
}

}  // namespace

TrainingResult train(NeuralModel& model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                     const TrainingConfig& cfg, const ckpt::Checkpoint* resume, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (auto* cde = dynamic_cast<forecast::CdeModel*>(&model)) cde->set_train_steps(cfg.rk4_steps);

  const std::vector<nn::Parameter*>& params = model.parameters();
  nn::Adam adam(nn::AdamConfig{.lr = cfg.lr});
  TrainingResult result;
  if (resume) {
    result.history = resume->history;
    adam.set_steps(resume->optimizer_steps);
  }
  const int first_epoch = static_cast<int>(result.history.size());
  double best = std::numeric_limits<double>::infinity();
  std::vector<Eigen::MatrixXd> best_params;
  for (const auto& rec : result.history) {
    if (rec.val_rge < best) {
      best = rec.val_rge;
      result.best_epoch = rec.epoch;
    }
  }

  std::vector<std::size_t> order(train_set.size());
  std::vector<Sample> batch;
  long batch_id = 0;
  bool stop = false;
  for (int epoch = first_epoch; epoch < first_epoch + cfg.epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    double rge_sum = 0.0;
    long rge_count = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);

      nn::zero_grad(params);
      forecast::BatchLoss bl;
      try {
        bl = model.batch_loss(batch);
      } catch (const Error& e) {
        // Before the first update the inputs are at fault; afterwards the parameters are.
        if (batch_id == 0 || (!dynamic_cast<const SingularWindowError*>(&e) && !dynamic_cast<const StiffnessError*>(&e)))
          throw;
        std::ostringstream os;
        os << "numerical breakdown in epoch " << epoch << ", batch " << batch_id << ": " << e.what();
        throw DivergenceError(os.str(), batch_id);
      }
      const double loss = bl.loss.item();
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite training loss in epoch " << epoch << ", batch " << batch_id;
        throw DivergenceError(os.str(), batch_id);
      }
      bl.loss.backward();
      if (bl.finish_backward) bl.finish_backward();
      if (!std::isfinite(nn::grad_norm(params))) {
        std::ostringstream os;
        os << "non-finite gradient in epoch " << epoch << ", batch " << batch_id;
        throw DivergenceError(os.str(), batch_id);
      }
      if (cfg.grad_clip > 0.0) clip_gradients(params, cfg.grad_clip);
      adam.step(params);

      loss_sum += loss * static_cast<double>(batch.size());
      rge_sum += batch_rge(bl.predictions, batch);
      rge_count += bl.predictions.rows();
      seen += batch.size();
      ++batch_id;
      if (cfg.max_steps > 0 && adam.steps() >= cfg.max_steps) {
        stop = true;
        break;
      }
    }

    ckpt::EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_rge = rge_sum / static_cast<double>(rge_count);
    const bool last = stop || epoch + 1 == first_epoch + cfg.epochs;
    const bool validate = !val_set.empty() && ((epoch - first_epoch + 1) % cfg.val_every == 0 || last);
    rec.val_rge = validate ? mean_rge(model, val_set) : std::nan("");
    if (validate && rec.val_rge < best) {
      best = rec.val_rge;
      result.best_epoch = epoch;
      if (cfg.keep_best) best_params = snapshot(params);
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  if (cfg.keep_best && !best_params.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->tensor.mutable_value() = best_params[i];
  }
  result.best_val_rge = best;
  result.optimizer_steps = adam.steps();
  return result;
}

ckpt::Checkpoint make_checkpoint(const NeuralModel& model, const TrainingResult& result, const TrainingConfig& cfg) {
  ckpt::Checkpoint c = model.to_checkpoint();
  c.optimizer_steps = result.optimizer_steps;
  c.history = result.history;
  c.settings["lr"] = std::to_string(cfg.lr);
  c.settings["batch_size"] = std::to_string(cfg.batch_size);
  c.settings["seed"] = std::to_string(cfg.seed);
  c.settings["best_epoch"] = std::to_string(result.best_epoch);
  return c;
}

}  // namespace sgncde::train
