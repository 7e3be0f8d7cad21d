#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "egovit/gradcheck.hpp"
#include "egovit/model.hpp"

namespace egovit {

/// Raised when a run leaves the finite range (training divergence, failed
/// numeric verification); the CLI maps it to exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("train.optimizer must be 'sgd' or 'adam', got '" + s + "'");
}

struct TrainConfig {
  int steps = 500;
  int batch_size = 8;
  double learning_rate = 3e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 1;
  int eval_every = 25;

  void validate() const {
    detail::require(steps >= 1 && batch_size >= 1 && eval_every >= 1,
                    "train: steps, batch_size and eval_every must be positive");
    detail::require(learning_rate >= 0.0, "train: learning rate must be >= 0");
  }
};

inline TrainConfig parse_train_config(const nlohmann::json& root) {
  TrainConfig cfg;
  if (!root.contains("train")) return cfg;
  const auto& t = root.at("train");
  detail::reject_unknown_keys(
      t, "train", {"steps", "batch_size", "learning_rate", "optimizer", "seed", "eval_every"});
  cfg.steps = t.value("steps", cfg.steps);
  cfg.batch_size = t.value("batch_size", cfg.batch_size);
  cfg.learning_rate = t.value("learning_rate", cfg.learning_rate);
  if (t.contains("optimizer")) cfg.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
  cfg.seed = t.value("seed", cfg.seed);
  cfg.eval_every = t.value("eval_every", cfg.eval_every);
  cfg.validate();
  return cfg;
}

struct TrainStep {
  int step = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // full train-set accuracy at eval points, else batch accuracy
  double seconds = 0.0;   // wall time since training started
};

struct TrainLog {
  std::vector<TrainStep> steps;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;       // best of any logged accuracy (batch or eval)
  double best_eval_accuracy = 0.0;  // best full-train-set accuracy at eval points
  int first_full_accuracy_step = -1;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor dlogits;  // softmax - onehot
};

/// -log softmax(logits)[label] and its gradient in closed form.
inline CrossEntropyResult cross_entropy_loss(const Tensor& logits, int label) {
  const int k = logits.dim(logits.rank() - 1);
  detail::require(label >= 0 && label < k, "cross_entropy_loss: label out of range");
  double m = logits.at(0);
  for (int j = 1; j < k; ++j) m = std::max(m, logits.at(static_cast<std::size_t>(j)));
  double z = 0.0;
  for (int j = 0; j < k; ++j) z += std::exp(logits.at(static_cast<std::size_t>(j)) - m);
  CrossEntropyResult r;
  r.loss = m + std::log(z) - logits.at(static_cast<std::size_t>(label));
  r.dlogits = Tensor({k});
  for (int j = 0; j < k; ++j)
    r.dlogits.at(static_cast<std::size_t>(j)) =
        std::exp(logits.at(static_cast<std::size_t>(j)) - m) / z - (j == label ? 1.0 : 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// Optimizers (single-writer; fixed tensor order keeps runs reproducible)
// ---------------------------------------------------------------------------

class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerKind kind, double lr)
      : params_(std::move(params)), kind_(kind), lr_(lr) {
    if (kind_ == OptimizerKind::adam) {
      std::size_t total = tensor_list_scalar_count(params_);
      m_.assign(total, 0.0);
      v_.assign(total, 0.0);
    }
  }

  void zero_grad() {
    for (Tensor& t : params_) t.zero_grad();
  }

  void step() {
    if (kind_ == OptimizerKind::sgd) {
      for (Tensor& t : params_) {
        double* g = t.grad();
        if (!g) continue;
        for (std::size_t i = 0; i < t.size(); ++i) t.at(i) -= lr_ * g[i];
      }
      return;
    }
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    std::size_t at = 0;
    for (Tensor& t : params_) {
      double* g = t.grad();
      for (std::size_t i = 0; i < t.size(); ++i, ++at) {
        const double gi = g ? g[i] : 0.0;
        m_[at] = b1 * m_[at] + (1.0 - b1) * gi;
        v_[at] = b2 * v_[at] + (1.0 - b2) * gi * gi;
        t.at(i) -= lr_ * (m_[at] / c1) / (std::sqrt(v_[at] / c2) + eps);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation and the training loop
// ---------------------------------------------------------------------------

inline double evaluate_accuracy(const EgoViTConfig& cfg, const EgoViTParams& params,
                                const std::vector<LabeledClip>& clips) {
  detail::require(!clips.empty(), "evaluate: empty dataset");
  GradMode off(false);
  int correct = 0;
  for (const LabeledClip& clip : clips) {
    Tensor logits = egovit_forward(cfg, params, clip.video, clip.features);
    int best = 0;
    for (int j = 1; j < logits.dim(0); ++j)
      if (logits.at(static_cast<std::size_t>(j)) > logits.at(static_cast<std::size_t>(best))) best = j;
    if (best == clip.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(clips.size());
}

/// Mini-batch training with a fixed shuffle schedule derived from the seed.
/// Aborts with the failing step index if the loss leaves the finite range.
inline TrainLog train(const EgoViTConfig& cfg, EgoViTParams& params,
                      const std::vector<LabeledClip>& clips, const TrainConfig& tc) {
  tc.validate();
  detail::require(!clips.empty(), "train: empty dataset");
  for (const LabeledClip& c : clips)
    detail::require(c.label >= 0 && c.label < cfg.num_classes,
                    "train: label " + std::to_string(c.label) + " outside num_classes");

  Optimizer opt(params.all(), tc.optimizer, tc.learning_rate);
  Rng shuffle_rng(tc.seed);
  std::vector<int> order(clips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle_rng.shuffle(order);
  std::size_t cursor = 0;
  auto next_index = [&]() {
    if (cursor == order.size()) {
      shuffle_rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  TrainLog log;
  const auto t0 = std::chrono::steady_clock::now();
  for (int step = 1; step <= tc.steps; ++step) {
    opt.zero_grad();
    double batch_loss = 0.0;
    int batch_correct = 0;
    {
      GradMode on(true);
      for (int b = 0; b < tc.batch_size; ++b) {
        const LabeledClip& clip = clips[static_cast<std::size_t>(next_index())];
        Tensor logits = egovit_forward(cfg, params, clip.video, clip.features);
        Tensor loss = scale(cross_entropy(logits, clip.label), 1.0 / tc.batch_size);
        loss.backward();
        batch_loss += loss.item();
        int best = 0;
        for (int j = 1; j < logits.dim(0); ++j)
          if (logits.at(static_cast<std::size_t>(j)) > logits.at(static_cast<std::size_t>(best)))
            best = j;
        if (best == clip.label) ++batch_correct;
      }
    }
    if (!std::isfinite(batch_loss))
      throw NumericError("train: loss diverged (non-finite) at step " + std::to_string(step));
    opt.step();

    TrainStep row;
    row.step = step;
    row.loss = batch_loss;
    row.accuracy = static_cast<double>(batch_correct) / tc.batch_size;
    if (step % tc.eval_every == 0 || step == tc.steps) {
      row.accuracy = evaluate_accuracy(cfg, params, clips);
      log.best_eval_accuracy = std::max(log.best_eval_accuracy, row.accuracy);
      if (row.accuracy == 1.0 && log.first_full_accuracy_step < 0)
        log.first_full_accuracy_step = step;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.best_accuracy = std::max(log.best_accuracy, row.accuracy);
    log.steps.push_back(row);
  }
  log.final_accuracy = evaluate_accuracy(cfg, params, clips);
  log.best_accuracy = std::max(log.best_accuracy, log.final_accuracy);
  log.best_eval_accuracy = std::max(log.best_eval_accuracy, log.final_accuracy);
  if (log.final_accuracy == 1.0 && log.first_full_accuracy_step < 0)
    log.first_full_accuracy_step = tc.steps;
  return log;
}

inline std::string train_log_csv(const TrainLog& log) {
  std::string out = "step,loss,acc,seconds\n";
  char buf[96];
  for (const TrainStep& s : log.steps) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.6g,%.4f\n", s.step, s.loss, s.accuracy, s.seconds);
    out += buf;
  }
  return out;
}

}  // namespace egovit
