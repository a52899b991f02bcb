#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mtscid/data.hpp"
#include "mtscid/error.hpp"
#include "mtscid/model.hpp"
#include "mtscid/random.hpp"
#include "mtscid/tape.hpp"

namespace mtscid {

struct TrainConfig {
  double lr_start = 2e-3;
  double lr_end = 5e-5;
  double poly_power = 1.0;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 20;
  std::size_t patience = 10;
  double lambda = 0.1;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void Validate() const {
    if (!(lr_end > 0.0 && lr_end <= lr_start)) throw ConfigError("need 0 < lr_end <= lr_start");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0, 1)");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(poly_power > 0.0)) throw ConfigError("poly_power must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam betas must be in [0, 1)");
    }
    if (!(adam_eps > 0.0) || !(weight_decay >= 0.0)) throw ConfigError("invalid adam eps / weight decay");
  }
};

template <typename T>
struct Losses {
  Tensor<T> total;
  Tensor<T> trec;  ///< undefined without the temporal branch
  Tensor<T> ient;  ///< undefined without the inter-variate branch
};

/// Reconstruction loss: batch mean of the squared L2 norm of x - x_hat.
template <typename T>
Tensor<T> ReconstructionLoss(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& x_hat) {
  if (x.shape() != x_hat.shape()) throw ShapeError("reconstruction shape mismatch");
  return tape.Scale(tape.SqL2(tape.Sub(x, x_hat)), static_cast<T>(1.0 / static_cast<double>(x.dim(0))));
}

/// Batch mean over samples of sum_t sum_i -w[t][i] log w[t][i].
template <typename T>
Tensor<T> EntropyLoss(Tape<T>& tape, const Tensor<T>& w) {
  return tape.Scale(tape.Sum(tape.Mul(w, tape.Log(w))),
                    static_cast<T>(-1.0 / static_cast<double>(w.dim(0))));
}

/// l_total = l_trec + lambda * l_ient. With a branch disabled only the
/// surviving term enters the total.
template <typename T>
Losses<T> ComputeLosses(Tape<T>& tape, const Tensor<T>& x, const ForwardOutput<T>& out, double lambda) {
  Losses<T> l;
  if (out.x_hat.defined()) l.trec = ReconstructionLoss(tape, x, out.x_hat);
  if (out.w.defined()) l.ient = EntropyLoss(tape, out.w);
  if (l.trec.defined() && l.ient.defined()) {
    l.total = tape.Add(l.trec, tape.Scale(l.ient, static_cast<T>(lambda)));
  } else if (l.trec.defined()) {
    l.total = l.trec;
  } else if (l.ient.defined()) {
    l.total = tape.Scale(l.ient, static_cast<T>(lambda));
  } else {
    throw ConfigError("forward output has no branch to train");
  }
  if (!std::isfinite(static_cast<double>(l.total.item()))) throw NonFiniteError("non-finite loss");
  return l;
}

/// lr = lr_end + (lr_start - lr_end) * (1 - step / total_steps)^power.
inline double PolyLr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * std::pow(1.0 - frac, cfg.poly_power);
}

/// Adam with decoupled weight decay and bias correction.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<NamedTensor<T>> params, const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  std::size_t step_count() const { return step_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

  void ZeroGrad() {
    for (auto& p : params_) p.tensor.ZeroGrad();
  }

  /// Applies one update. Throws NonFiniteError naming the parameter, without
  /// modifying anything, if any gradient is non-finite.
  void Step(double lr) {
    for (const auto& p : params_) {
      for (T g : p.tensor.grad()) {
        if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in " + p.name);
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].tensor;
      auto values = p.mutable_values();
      const auto grad = p.grad();
      for (std::size_t q = 0; q < values.size(); ++q) {
        const double g = grad.empty() ? 0.0 : static_cast<double>(grad[q]);
        double x = static_cast<double>(values[q]);
        x -= lr * cfg_.weight_decay * x;
        m_[i][q] = cfg_.beta1 * m_[i][q] + (1.0 - cfg_.beta1) * g;
        v_[i][q] = cfg_.beta2 * v_[i][q] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i][q] / bc1;
        const double vhat = v_[i][q] / bc2;
        x -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        values[q] = static_cast<T>(x);
      }
      if (!p.AllFinite()) throw NonFiniteError("non-finite value in " + params_[i].name);
    }
  }

 private:
  std::vector<NamedTensor<T>> params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  bool early_stop = false;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_loss = std::numeric_limits<double>::infinity();

  bool stopped_early() const { return !epochs.empty() && epochs.back().early_stop; }

  /// epoch,train_loss,val_loss,lr with round-trip precision.
  void WriteCsv(const std::string& path, const std::vector<std::string>& comment_lines = {}) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& c : comment_lines) out << "# " << c << '\n';
    out << "epoch,train_loss,val_loss,lr\n";
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& e : epochs) {
      out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
  }
};

/// Chronological split: the last val_fraction of windows validate.
struct WindowSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline WindowSplit SplitWindows(std::size_t count, double val_fraction) {
  if (count < 2) throw ShapeError("need at least two windows to split train/validation");
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(count)));
  n_val = std::clamp<std::size_t>(n_val, 1, count - 1);
  WindowSplit s;
  for (std::size_t i = 0; i < count - n_val; ++i) s.train.push_back(i);
  for (std::size_t i = count - n_val; i < count; ++i) s.val.push_back(i);
  return s;
}

/// Mean l_total over the given windows, evaluated without recording.
template <typename T>
double EvaluateLoss(const Model<T>& model, const WindowBatch& windows,
                    const std::vector<std::size_t>& indices, const TrainConfig& cfg) {
  double total = 0.0;
  for (std::size_t first = 0; first < indices.size(); first += cfg.batch_size) {
    const std::size_t last = std::min(indices.size(), first + cfg.batch_size);
    std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(first),
                                 indices.begin() + static_cast<std::ptrdiff_t>(last));
    Tape<T> tape(false);
    const auto x = windows.Gather<T>(idx);
    const auto losses = ComputeLosses(tape, x, model.Forward(tape, x), cfg.lambda);
    total += static_cast<double>(losses.total.item()) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(indices.size());
}

/// Optional per-epoch progress callback.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch AdamW training with validation-based early stopping. On return
/// the model holds the best-validation snapshot.
template <typename T>
TrainHistory Train(Model<T>& model, const WindowBatch& windows, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {}) {
  cfg.Validate();
  if (windows.count() == 0) throw ShapeError("empty training set");
  if (windows.window != model.config().window || windows.variates != model.config().variates) {
    throw ShapeError("windows do not match the model configuration");
  }
  const WindowSplit split = SplitWindows(windows.count(), cfg.val_fraction);
  const std::size_t steps_per_epoch = (split.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.max_epochs;

  AdamW<T> opt(model.Parameters(), cfg);
  Rng rng(cfg.seed);
  TrainHistory history;
  ModelState<T> best = model.state().Clone();
  std::size_t since_best = 0;
  std::vector<std::size_t> order = split.train;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.Shuffle(order);
    double loss_sum = 0.0;
    double lr = cfg.lr_start;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t first = b * cfg.batch_size;
      const std::size_t last = std::min(order.size(), first + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                   order.begin() + static_cast<std::ptrdiff_t>(last));
      try {
        Tape<T> tape;
        const auto x = windows.Gather<T>(idx);
        const auto losses = ComputeLosses(tape, x, model.Forward(tape, x), cfg.lambda);
        opt.ZeroGrad();
        tape.Backward(losses.total);
        lr = PolyLr(opt.step_count(), total_steps, cfg);
        opt.Step(lr);
        loss_sum += static_cast<double>(losses.total.item()) * static_cast<double>(idx.size());
      } catch (const NonFiniteError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(opt.step_count() + 1) + ": " + e.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.lr = lr;
    try {
      rec.val_loss = EvaluateLoss(model, windows, split.val, cfg);
    } catch (const NonFiniteError& e) {
      throw DivergenceError("validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (rec.val_loss < history.best_val_loss) {
      history.best_val_loss = rec.val_loss;
      history.best_epoch = epoch;
      best = model.state().Clone();
      since_best = 0;
    } else {
      ++since_best;
    }
    rec.early_stop = since_best >= cfg.patience && epoch < cfg.max_epochs;
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.early_stop) break;
  }
  model.mutable_state().AssignFrom(best);
  return history;
}

}  // namespace mtscid
