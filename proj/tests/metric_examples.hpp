#pragma once

// The hand-checkable metric examples, shared by the unit suite and the
// acceptance binary. Every comparison is exact.

#include <string>
#include <vector>

#include "sbr/metrics.hpp"

namespace sbr::test {

struct MetricExample {
  std::string name;
  double got = 0.0;
  double want = 0.0;
  bool passed() const { return got == want; }
};

// One mode, agents resting at (10 * i, 0); `endpoint_error[k][i]` is the
// endpoint displacement along +y of agent i in world k. The rest of each
// trajectory matches the truth.
inline std::pair<ModeSet, ModeSet> EndpointCase(const std::vector<std::vector<Vec2>>& errors,
                                                size_t steps = 4) {
  const size_t agents = errors[0].size();
  ModeSet truth(1, agents, steps);
  ModeSet pred(errors.size(), agents, steps);
  for (size_t i = 0; i < agents; ++i) {
    for (size_t t = 0; t < steps; ++t) truth.at(0, i, t) = {10.0 * i, 0.0};
  }
  for (size_t k = 0; k < errors.size(); ++k) {
    for (size_t i = 0; i < agents; ++i) {
      for (size_t t = 0; t < steps; ++t) pred.at(k, i, t) = truth.at(0, i, t);
      pred.at(k, i, steps - 1) += errors[k][i];
    }
  }
  return {pred, truth};
}

inline std::vector<MetricExample> MetricExamples() {
  std::vector<MetricExample> out;
  {
    const auto [p, t] = EndpointCase({{{3, 4}}});
    out.push_back({"avgMinFDE 3-4-5 endpoint", AvgMinFde(p, t), 5.0});
  }
  {
    const auto [p, t] = EndpointCase({{{1, 0}, {0, 2}}, {{0, 0}, {0, 0}}});
    out.push_back({"avgMinFDE exact world", AvgMinFde(p, t), 0.0});
  }
  {
    const auto [p, t] = EndpointCase({{{2, 0}, {0, 4}}, {{3, 0}, {0, 3}}});
    out.push_back({"avgMinFDE tie takes world 0", AvgMinFde(p, t), 3.0});
    out.push_back({"avgMinFDE tie world index", static_cast<double>(FdeWorld(p, t)), 0.0});
  }
  {
    const auto [p, t] = EndpointCase({{{0, 0}, {0, 0}}});
    out.push_back({"actorMR all exact", ActorMr(p, t), 0.0});
  }
  {
    const auto [p, t] = EndpointCase({{{0, 1.9}, {0, 2.1}}});
    out.push_back({"actorMR 1.9 and 2.1", ActorMr(p, t), 0.5});
  }
  {
    const auto [p, t] = EndpointCase({{{0, 2.0}}});
    out.push_back({"actorMR exactly 2 is a hit", ActorMr(p, t), 0.0});
  }
  out.push_back({"miss threshold v=1.0", MissThreshold(1.0), 1.0});
  out.push_back({"miss threshold v=6.2", MissThreshold(6.2), 1.5});
  out.push_back({"miss threshold v=12.0", MissThreshold(12.0), 2.0});
  return out;
}

}  // namespace sbr::test
