#include "sbr/metrics.hpp"

#include <json.hpp>
#include <limits>
#include <unordered_map>

#include "sbr/errors.hpp"
#include "sbr/parallel.hpp"

namespace sbr {

namespace {

void CheckShapes(const ModeSet& pred, const ModeSet& truth) {
  if (truth.modes() != 1) throw ShapeError("ground truth must be a single-mode set");
  if (pred.agents() != truth.agents() || pred.steps() != truth.steps()) {
    throw ShapeError("prediction is " + std::to_string(pred.agents()) + "x" +
                     std::to_string(pred.steps()) + " agents x steps, ground truth is " +
                     std::to_string(truth.agents()) + "x" + std::to_string(truth.steps()));
  }
  if (pred.modes() < 1) throw ShapeError("prediction has no modes");
}

double EndpointError(const ModeSet& pred, const ModeSet& truth, size_t k, size_t i) {
  const size_t last = truth.steps() - 1;
  return Norm(pred.at(k, i, last) - truth.at(0, i, last));
}

double MeanDisplacement(const ModeSet& pred, const ModeSet& truth, size_t k, size_t i) {
  double sum = 0.0;
  for (size_t t = 0; t < truth.steps(); ++t) sum += Norm(pred.at(k, i, t) - truth.at(0, i, t));
  return sum / static_cast<double>(truth.steps());
}

template <typename ErrFn>
std::pair<size_t, double> BestWorld(const ModeSet& pred, const ModeSet& truth, ErrFn err) {
  CheckShapes(pred, truth);
  size_t best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < pred.modes(); ++k) {
    double sum = 0.0;
    for (size_t i = 0; i < pred.agents(); ++i) sum += err(pred, truth, k, i);
    const double mean = sum / static_cast<double>(pred.agents());
    if (mean < best_value) {
      best_value = mean;
      best = k;
    }
  }
  return {best, best_value};
}

double MissFraction(const ModeSet& pred, const ModeSet& truth, size_t world,
                    const std::vector<double>& thresholds) {
  size_t missed = 0;
  for (size_t i = 0; i < pred.agents(); ++i) {
    if (EndpointError(pred, truth, world, i) > thresholds[i]) ++missed;
  }
  return static_cast<double>(missed) / static_cast<double>(pred.agents());
}

std::vector<double> JointThresholds(const ModeSet& truth, double sample_rate) {
  std::vector<double> out(truth.agents());
  const size_t last = truth.steps() - 1;
  for (size_t i = 0; i < truth.agents(); ++i) {
    const double v = Norm(truth.at(0, i, last) - truth.at(0, i, last - 1)) * sample_rate;
    out[i] = MissThreshold(v);
  }
  return out;
}

}  // namespace

size_t FdeWorld(const ModeSet& pred, const ModeSet& truth) {
  return BestWorld(pred, truth, EndpointError).first;
}

size_t AdeWorld(const ModeSet& pred, const ModeSet& truth) {
  return BestWorld(pred, truth, MeanDisplacement).first;
}

double AvgMinFde(const ModeSet& pred, const ModeSet& truth) {
  return BestWorld(pred, truth, EndpointError).second;
}

double AvgMinAde(const ModeSet& pred, const ModeSet& truth) {
  return BestWorld(pred, truth, MeanDisplacement).second;
}

double ActorMr(const ModeSet& pred, const ModeSet& truth, double threshold) {
  const size_t world = FdeWorld(pred, truth);
  return MissFraction(pred, truth, world, std::vector<double>(pred.agents(), threshold));
}

double MinJointMr(const ModeSet& pred, const ModeSet& truth, double sample_rate) {
  const size_t world = FdeWorld(pred, truth);
  if (truth.steps() < 2) throw ShapeError("speed needs at least two ground-truth steps");
  return MissFraction(pred, truth, world, JointThresholds(truth, sample_rate));
}

double MissThreshold(double speed) {
  if (speed <= 1.4) return 1.0;
  if (speed <= 11.0) return 1.0 + (speed - 1.4) / (11.0 - 1.4);
  return 2.0;
}

ScenarioMetrics EvaluateScenario(const ModeSet& pred, const Scenario& scenario) {
  const ModeSet truth = GroundTruthModes(scenario);
  ScenarioMetrics m;
  m.scenario_id = scenario.id;
  std::tie(m.fde_world, m.avg_min_fde) = BestWorld(pred, truth, EndpointError);
  std::tie(m.ade_world, m.avg_min_ade) = BestWorld(pred, truth, MeanDisplacement);
  m.actor_mr = MissFraction(pred, truth, m.fde_world,
                            std::vector<double>(pred.agents(), kActorMissDistance));
  m.min_joint_mr =
      MissFraction(pred, truth, m.fde_world, JointThresholds(truth, scenario.sample_rate));
  return m;
}

MetricReport EvaluateDataset(std::span<const Scenario> scenarios,
                             std::span<const ModeRecord> predictions, size_t threads) {
  if (scenarios.empty()) throw InvalidInputError("no scenarios to evaluate");
  std::unordered_map<int64_t, const ModeRecord*> by_id;
  for (const ModeRecord& r : predictions) by_id[r.scenario_id] = &r;

  MetricReport report;
  report.per_scenario.resize(scenarios.size());
  ParallelFor(scenarios.size(), threads, [&](size_t s) {
    const auto it = by_id.find(scenarios[s].id);
    if (it == by_id.end()) {
      throw ValidationError("no predicted modes for scenario " + std::to_string(scenarios[s].id));
    }
    try {
      report.per_scenario[s] = EvaluateScenario(it->second->modes, scenarios[s]);
    } catch (const ShapeError& e) {
      throw ValidationError("scenario " + std::to_string(scenarios[s].id) + ": " + e.what());
    }
  });
  for (const auto& m : report.per_scenario) {
    report.avg_min_fde += m.avg_min_fde;
    report.avg_min_ade += m.avg_min_ade;
    report.actor_mr += m.actor_mr;
    report.min_joint_mr += m.min_joint_mr;
  }
  const double n = static_cast<double>(report.per_scenario.size());
  report.avg_min_fde /= n;
  report.avg_min_ade /= n;
  report.actor_mr /= n;
  report.min_joint_mr /= n;
  return report;
}

std::string ReportJson(const MetricReport& report) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : report.per_scenario) {
    per.push_back({{"scenario_id", m.scenario_id},
                   {"avgMinFDE", m.avg_min_fde},
                   {"avgMinADE", m.avg_min_ade},
                   {"actorMR", m.actor_mr},
                   {"minJointMR", m.min_joint_mr},
                   {"fde_world", m.fde_world},
                   {"ade_world", m.ade_world}});
  }
  nlohmann::json doc{{"scenarios", report.per_scenario.size()},
                     {"avgMinFDE", report.avg_min_fde},
                     {"avgMinADE", report.avg_min_ade},
                     {"actorMR", report.actor_mr},
                     {"minJointMR", report.min_joint_mr},
                     {"per_scenario", std::move(per)}};
  return doc.dump(2);
}

std::string ReportCsvRow(const MetricReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f", r.avg_min_fde, r.avg_min_ade, r.actor_mr,
                r.min_joint_mr);
  return buf;
}

}  // namespace sbr
