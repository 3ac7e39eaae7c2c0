#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "sbr/metrics.hpp"
#include "sbr/refiner.hpp"

namespace sbr {

struct TrainConfig {
  size_t epochs = 64;
  size_t batch_size = 16;
  double learning_rate = 3e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double huber_delta = 1.0;  // m
  double grad_clip = 0.0;    // global-norm clip, 0 = off
  uint64_t seed = 0;
  size_t threads = 1;
};

// Throws ConfigError naming the offending field.
void Validate(const TrainConfig& config);
nlohmann::json ToJson(const TrainConfig& config);

// Mode minimizing the mean over agents of the mean pointwise displacement;
// ties go to the smallest mode index. `truth` is single-mode.
size_t WtaMode(const ModeSet& pred, const ModeSet& truth);
// Elementwise Huber mean between the WTA mode and the truth.
double IterationLoss(const ModeSet& pred, const ModeSet& truth, double delta = 1.0);

struct LossReport {
  std::vector<double> iteration_losses;
  std::vector<size_t> selected_modes;
  double total = 0.0;
};

LossReport TotalLoss(std::span<const ModeSet> outputs, const ModeSet& truth, double delta = 1.0);

// Tape versions. `truth` is N x 2T; outputs are (K*N) x 2T. The selection is
// made on the forward values and carries no gradient.
ad::Var IterationLossVar(ad::Var output, const Tensor& truth, size_t modes, double delta,
                         size_t* selected = nullptr);
ad::Var TotalLossVar(std::span<const ad::Var> outputs, const Tensor& truth, size_t modes,
                     double delta, LossReport* report = nullptr);

// Cosine decay from `base` at step 0 to 0 at step total - 1.
double CosineLearningRate(double base, size_t step, size_t total_steps);

// Adaptive moments with decoupled weight decay.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const nn::ParameterStore& store, const TrainConfig& config);

  void Step(nn::ParameterStore& store, const std::vector<Tensor>& grads, double lr);
  size_t steps() const { return steps_; }
  // Moments are stored as "optimizer/m/<name>" and "optimizer/v/<name>".
  void AppendTo(ParameterArchive& archive, const nn::ParameterStore& store) const;

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 0.0;
  size_t steps_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainingSet {
  std::vector<PreparedScene> scenes;
  std::vector<Tensor> truth;  // N x 2T per scene
  std::vector<const Scenario*> source;
};

// Pairs scenarios with their coarse modes by id.
TrainingSet PrepareTrainingSet(std::span<const Scenario> scenarios,
                               std::span<const ModeRecord> coarse, const RefinerConfig& config,
                               size_t threads = 1);

// Final-iteration modes for every scene, in order.
std::vector<ModeRecord> RefineAll(const Refiner& refiner, const TrainingSet& set,
                                  size_t threads = 1);
MetricReport EvaluateRefiner(const Refiner& refiner, const TrainingSet& set, size_t threads = 1);

struct TrainResult {
  std::vector<nlohmann::json> log;  // one record per epoch
  AdamW optimizer;
};

// Trains `refiner` in place. `on_epoch` (optional) sees each log record as
// it is produced. Throws ConfigError on an empty dataset and NumericError
// with the step index when the loss is not finite.
TrainResult Train(Refiner& refiner, const TrainingSet& train, const TrainingSet* validation,
                  const TrainConfig& config,
                  const std::function<void(const nlohmann::json&)>& on_epoch = {});

}  // namespace sbr
