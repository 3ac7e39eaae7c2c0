#include "sbr/training.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

#include "sbr/errors.hpp"
#include "sbr/parallel.hpp"
#include "sbr/random.hpp"

namespace sbr {

namespace {

double HuberValue(double x, double delta) {
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

// Rows k*N .. k*N+N-1 of `y` against `truth` (N x 2T).
double MeanDisplacementRows(const Tensor& y, const Tensor& truth, size_t k) {
  const size_t n = truth.rows();
  const size_t steps = truth.cols() / 2;
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double agent = 0.0;
    for (size_t t = 0; t < steps; ++t) {
      const double dx = y(k * n + i, 2 * t) - truth(i, 2 * t);
      const double dy = y(k * n + i, 2 * t + 1) - truth(i, 2 * t + 1);
      agent += std::sqrt(dx * dx + dy * dy);
    }
    sum += agent / static_cast<double>(steps);
  }
  return sum / static_cast<double>(n);
}

size_t WtaRows(const Tensor& y, const Tensor& truth, size_t modes) {
  size_t best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < modes; ++k) {
    const double v = MeanDisplacementRows(y, truth, k);
    if (v < best_value) {
      best_value = v;
      best = k;
    }
  }
  return best;
}

nlohmann::json MetricsJson(const MetricReport& r) {
  return {{"avgMinFDE", r.avg_min_fde},
          {"avgMinADE", r.avg_min_ade},
          {"actorMR", r.actor_mr},
          {"minJointMR", r.min_joint_mr}};
}

}  // namespace

void Validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("learning_rate must be >= 0");
  }
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(c.adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(c.huber_delta > 0.0)) throw ConfigError("huber_delta must be > 0");
  if (!(c.grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
}

nlohmann::json ToJson(const TrainConfig& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},           {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},     {"huber_delta", c.huber_delta},
          {"grad_clip", c.grad_clip},   {"seed", c.seed}};
}

size_t WtaMode(const ModeSet& pred, const ModeSet& truth) { return AdeWorld(pred, truth); }

double IterationLoss(const ModeSet& pred, const ModeSet& truth, double delta) {
  const size_t k = WtaMode(pred, truth);
  double sum = 0.0;
  for (size_t i = 0; i < pred.agents(); ++i) {
    for (size_t t = 0; t < pred.steps(); ++t) {
      const Vec2 d = pred.at(k, i, t) - truth.at(0, i, t);
      sum += HuberValue(d.x, delta) + HuberValue(d.y, delta);
    }
  }
  return sum / static_cast<double>(2 * pred.agents() * pred.steps());
}

LossReport TotalLoss(std::span<const ModeSet> outputs, const ModeSet& truth, double delta) {
  if (outputs.empty()) throw InvalidInputError("total loss needs at least one iteration");
  LossReport r;
  for (const ModeSet& y : outputs) {
    r.selected_modes.push_back(WtaMode(y, truth));
    r.iteration_losses.push_back(IterationLoss(y, truth, delta));
    r.total += r.iteration_losses.back();
  }
  r.total /= static_cast<double>(outputs.size());
  return r;
}

ad::Var IterationLossVar(ad::Var output, const Tensor& truth, size_t modes, double delta,
                         size_t* selected) {
  const size_t n = truth.rows();
  if (output.rows() != modes * n || output.cols() != truth.cols()) {
    throw ShapeError("loss: outputs and ground truth disagree in shape");
  }
  const size_t k = WtaRows(output.value(), truth, modes);
  if (selected != nullptr) *selected = k;
  ad::Tape& tape = *output.tape();
  const ad::Var chosen = ad::Slice(output, k * n, n, 0, truth.cols());
  return ad::Mean(ad::Huber(ad::Sub(chosen, tape.Constant(truth)), delta));
}

ad::Var TotalLossVar(std::span<const ad::Var> outputs, const Tensor& truth, size_t modes,
                     double delta, LossReport* report) {
  if (outputs.empty()) throw InvalidInputError("total loss needs at least one iteration");
  ad::Var sum;
  for (const ad::Var& y : outputs) {
    size_t k = 0;
    const ad::Var l = IterationLossVar(y, truth, modes, delta, &k);
    if (report != nullptr) {
      report->selected_modes.push_back(k);
      report->iteration_losses.push_back(l.value()(0, 0));
    }
    sum = sum.valid() ? ad::Add(sum, l) : l;
  }
  const ad::Var total = ad::Scale(sum, 1.0 / static_cast<double>(outputs.size()));
  if (report != nullptr) report->total = total.value()(0, 0);
  return total;
}

double CosineLearningRate(double base, size_t step, size_t total_steps) {
  const double span = static_cast<double>(std::max<size_t>(total_steps, 2) - 1);
  const double progress = std::min(1.0, static_cast<double>(step) / span);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(const nn::ParameterStore& store, const TrainConfig& c)
    : beta1_(c.beta1),
      beta2_(c.beta2),
      eps_(c.adam_eps),
      weight_decay_(c.weight_decay),
      m_(store.ZeroLike()),
      v_(store.ZeroLike()) {}

void AdamW::Step(nn::ParameterStore& store, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != store.size() || m_.size() != store.size()) {
    throw ShapeError("optimizer state does not match the parameter store");
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (size_t p = 0; p < store.size(); ++p) {
    double* w = store[p].value.data();
    const double* g = grads[p].data();
    double* m = m_[p].data();
    double* v = v_[p].data();
    const size_t count = store[p].value.size();
    for (size_t e = 0; e < count; ++e) {
      m[e] = beta1_ * m[e] + (1.0 - beta1_) * g[e];
      v[e] = beta2_ * v[e] + (1.0 - beta2_) * g[e] * g[e];
      const double update = (m[e] / c1) / (std::sqrt(v[e] / c2) + eps_);
      w[e] = w[e] * (1.0 - lr * weight_decay_) - lr * update;
    }
  }
}

void AdamW::AppendTo(ParameterArchive& archive, const nn::ParameterStore& store) const {
  archive.metadata["optimizer"] = {{"kind", "adamw"},
                                   {"steps", steps_},
                                   {"beta1", beta1_},
                                   {"beta2", beta2_},
                                   {"eps", eps_},
                                   {"weight_decay", weight_decay_}};
  for (size_t p = 0; p < m_.size(); ++p) {
    archive.arrays.emplace_back("optimizer/m/" + store[p].name, m_[p]);
    archive.arrays.emplace_back("optimizer/v/" + store[p].name, v_[p]);
  }
}

TrainingSet PrepareTrainingSet(std::span<const Scenario> scenarios,
                               std::span<const ModeRecord> coarse, const RefinerConfig& config,
                               size_t threads) {
  std::unordered_map<int64_t, const ModeRecord*> by_id;
  for (const ModeRecord& r : coarse) by_id[r.scenario_id] = &r;
  TrainingSet set;
  set.scenes.resize(scenarios.size());
  set.truth.resize(scenarios.size());
  set.source.resize(scenarios.size());
  ParallelFor(scenarios.size(), threads, [&](size_t s) {
    const auto it = by_id.find(scenarios[s].id);
    if (it == by_id.end()) {
      throw ValidationError("no coarse modes for scenario " + std::to_string(scenarios[s].id));
    }
    set.scenes[s] = PrepareScene(scenarios[s], it->second->modes, config);
    const ModeSet gt = GroundTruthModes(scenarios[s]);
    Tensor truth = ModesToTensor(gt);
    set.truth[s] = std::move(truth);
    set.source[s] = &scenarios[s];
  });
  return set;
}

std::vector<ModeRecord> RefineAll(const Refiner& refiner, const TrainingSet& set,
                                  size_t threads) {
  std::vector<ModeRecord> out(set.scenes.size());
  ParallelFor(set.scenes.size(), threads, [&](size_t s) {
    out[s] = {set.source[s]->id, refiner.Refine(set.scenes[s]).back()};
  });
  return out;
}

MetricReport EvaluateRefiner(const Refiner& refiner, const TrainingSet& set, size_t threads) {
  std::vector<Scenario> scenarios;
  scenarios.reserve(set.source.size());
  for (const Scenario* s : set.source) scenarios.push_back(*s);
  const auto modes = RefineAll(refiner, set, threads);
  return EvaluateDataset(scenarios, modes, threads);
}

TrainResult Train(Refiner& refiner, const TrainingSet& train, const TrainingSet* validation,
                  const TrainConfig& config,
                  const std::function<void(const nlohmann::json&)>& on_epoch) {
  Validate(config);
  if (train.scenes.empty()) throw ConfigError("training set is empty");
  nn::ParameterStore& store = refiner.params();
  TrainResult result;
  result.optimizer = AdamW(store, config);

  const size_t count = train.scenes.size();
  const size_t batches = (count + config.batch_size - 1) / config.batch_size;
  const size_t total_steps = batches * config.epochs;
  std::vector<std::vector<Tensor>> slot_grads(std::min(config.batch_size, count));
  for (auto& g : slot_grads) g = store.ZeroLike();
  std::vector<double> slot_loss(slot_grads.size());
  std::vector<Tensor> grads = store.ZeroLike();
  std::vector<size_t> order(count);
  size_t step = 0;

  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t s = 0; s < count; ++s) order[s] = s;
    Rng shuffle(DeriveSeed(config.seed, epoch));
    shuffle.Shuffle(order);

    double epoch_loss = 0.0;
    double lr = 0.0;
    for (size_t b = 0; b < batches; ++b, ++step) {
      const size_t begin = b * config.batch_size;
      const size_t size = std::min(config.batch_size, count - begin);
      ParallelFor(size, config.threads, [&](size_t slot) {
        const size_t s = order[begin + slot];
        for (Tensor& g : slot_grads[slot]) g.Fill(0.0);
        // The loss and gradient norm are checked below instead of every op.
        ad::Tape tape(false);
        nn::Binding binding(tape, store, &slot_grads[slot]);
        const auto outputs = refiner.Forward(binding, train.scenes[s]);
        const ad::Var loss = TotalLossVar(outputs, train.truth[s], train.scenes[s].modes,
                                          config.huber_delta);
        slot_loss[slot] = loss.value()(0, 0);
        tape.Backward(loss);
      });

      double batch_loss = 0.0;
      for (size_t slot = 0; slot < size; ++slot) batch_loss += slot_loss[slot];
      if (!std::isfinite(batch_loss)) {
        throw NumericError("non-finite loss at step " + std::to_string(step));
      }
      epoch_loss += batch_loss;

      const double inv = 1.0 / static_cast<double>(size);
      double norm2 = 0.0;
      for (size_t p = 0; p < grads.size(); ++p) {
        auto acc = grads[p].mat();
        acc = slot_grads[0][p].mat();
        for (size_t slot = 1; slot < size; ++slot) acc += slot_grads[slot][p].mat();
        acc *= inv;
        norm2 += acc.squaredNorm();
      }
      if (!std::isfinite(norm2)) {
        throw NumericError("non-finite gradient at step " + std::to_string(step));
      }
      if (config.grad_clip > 0.0 && std::sqrt(norm2) > config.grad_clip) {
        const double scale = config.grad_clip / std::sqrt(norm2);
        for (Tensor& g : grads) g.mat() *= scale;
      }
      lr = CosineLearningRate(config.learning_rate, step, total_steps);
      result.optimizer.Step(store, grads, lr);
    }

    nlohmann::json record{{"epoch", epoch + 1},
                          {"step", step},
                          {"lr", lr},
                          {"train_loss", epoch_loss / static_cast<double>(count)},
                          {"val_metrics", nullptr}};
    if (validation != nullptr && !validation->scenes.empty()) {
      record["val_metrics"] = MetricsJson(EvaluateRefiner(refiner, *validation, config.threads));
    }
    if (on_epoch) on_epoch(record);
    result.log.push_back(std::move(record));
  }
  return result;
}

}  // namespace sbr
