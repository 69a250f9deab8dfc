#pragma once
// Maximum-likelihood training with Adam and a cosine learning-rate schedule.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "flowify/model.hpp"

namespace flowify {

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 0.0;
  /// Weight of FlowModel::auxiliary_loss in the objective.
  double aux_weight = 1.0;
  /// Rows per evaluation chunk (see evaluate()).
  std::size_t eval_chunk = 250;

  /// Throws ConfigError unless every size and rate is positive.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// lr * (1 + cos(pi * step / total)) / 2, reaching zero at step == total.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, double beta1, double beta2, double eps);

  /// One update with the given per-parameter gradients.
  void step(const std::vector<std::vector<double>>& grads, double lr);

  std::size_t steps() const { return t_; }
  const std::vector<Parameter*>& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  std::vector<Parameter*> params_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double test_nll = 0.0;
  std::optional<double> bpd;
  /// Learning rate at the end of the epoch.
  double lr = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
};

class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochMetrics&, Trainer&)>;

  Trainer(FlowModel& model, TrainConfig config);

  /// Minibatch loss -mean(log p) + aux_weight * aux, with its gradient applied.
  /// Throws NonFiniteError (and leaves parameters untouched) on a bad value.
  double step(const DiffArray& batch);

  EpochMetrics run_epoch(const Dataset& train, const Dataset& test);
  /// Runs the remaining epochs, calling `on_epoch` after each one.
  std::vector<EpochMetrics> train(const Dataset& train, const Dataset& test,
                                  const EpochCallback& on_epoch = {});

  FlowModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  Adam& optimizer() { return adam_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t global_step() const { return step_; }
  void restore_progress(std::size_t epoch, std::size_t step) { epoch_ = epoch, step_ = step; }
  /// Total optimizer steps of the schedule; fixed once the training set is seen.
  std::size_t total_steps() const { return total_steps_; }

  /// Seed used for held-out evaluation.
  std::uint64_t eval_seed() const;

 private:
  FlowModel& model_;
  TrainConfig config_;
  Adam adam_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  std::size_t total_steps_ = 0;
};

}  // namespace flowify
