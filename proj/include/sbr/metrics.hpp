#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sbr/scenario.hpp"

namespace sbr {

inline constexpr double kActorMissDistance = 2.0;  // m

struct ScenarioMetrics {
  int64_t scenario_id = 0;
  double avg_min_fde = 0.0;
  double avg_min_ade = 0.0;
  double actor_mr = 0.0;
  double min_joint_mr = 0.0;
  size_t fde_world = 0;
  size_t ade_world = 0;
};

struct MetricReport {
  double avg_min_fde = 0.0;
  double avg_min_ade = 0.0;
  double actor_mr = 0.0;
  double min_joint_mr = 0.0;
  std::vector<ScenarioMetrics> per_scenario;
};

// World (mode) minimizing the mean endpoint / mean trajectory error over
// agents; ties go to the smallest index. `truth` is a single-mode set.
size_t FdeWorld(const ModeSet& pred, const ModeSet& truth);
size_t AdeWorld(const ModeSet& pred, const ModeSet& truth);

double AvgMinFde(const ModeSet& pred, const ModeSet& truth);
double AvgMinAde(const ModeSet& pred, const ModeSet& truth);
// Fraction of agents whose endpoint error in the FDE world exceeds `threshold`.
double ActorMr(const ModeSet& pred, const ModeSet& truth,
               double threshold = kActorMissDistance);
// Speed-dependent variant; the speed is the last backward difference of truth.
double MinJointMr(const ModeSet& pred, const ModeSet& truth, double sample_rate);

double MissThreshold(double speed);

ScenarioMetrics EvaluateScenario(const ModeSet& pred, const Scenario& scenario);

// Predictions are matched to scenarios by id. Aggregates are means of the
// per-scenario values in scenario order.
MetricReport EvaluateDataset(std::span<const Scenario> scenarios,
                             std::span<const ModeRecord> predictions, size_t threads = 1);

std::string ReportJson(const MetricReport& report);
std::string ReportCsvRow(const MetricReport& report);
inline constexpr const char* kReportCsvHeader = "avgMinFDE,avgMinADE,actorMR,minJointMR";

}  // namespace sbr
