#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sbr/scenario.hpp"

namespace sbr {

// Interaction-blind stand-in for an upstream multimodal predictor.
struct CoarseConfig {
  size_t modes = 6;
  double speed_scale = 0.2;    // fractional speed perturbation of the presets
  double heading_deg = 10.0;   // heading perturbation of the presets
  double noise_sigma = 0.2;    // m, i.i.d. per coordinate
  uint64_t seed = 0;
};

void Validate(const CoarseConfig& config);

// Mode 0 extrapolates the last history velocity. Modes k >= 1 apply
// (speed, heading) preset (k - 1) mod 8 jointly to all agents. Noise is drawn
// from a stream derived from (seed, scenario id).
ModeSet CoarsePredict(const Scenario& scenario, const CoarseConfig& config);

std::vector<ModeRecord> CoarsePredictAll(std::span<const Scenario> scenarios,
                                         const CoarseConfig& config, size_t threads = 1);

}  // namespace sbr
