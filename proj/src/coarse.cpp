#include "sbr/coarse.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "sbr/errors.hpp"
#include "sbr/parallel.hpp"
#include "sbr/random.hpp"

namespace sbr {

namespace {

struct Preset {
  double speed;    // multiples of speed_scale
  double heading;  // multiples of heading_deg
};

constexpr std::array<Preset, 8> kPresets{{{-1, 0},
                                          {1, 0},
                                          {0, 1},
                                          {0, -1},
                                          {-1, 1},
                                          {1, -1},
                                          {-1, -1},
                                          {1, 1}}};

}  // namespace

void Validate(const CoarseConfig& c) {
  if (c.modes < 1) throw InvalidInputError("coarse modes K must be >= 1");
  if (!(c.speed_scale >= 0.0 && c.speed_scale < 1.0)) {
    throw InvalidInputError("speed_scale must lie in [0, 1)");
  }
  if (!(c.noise_sigma >= 0.0) || !std::isfinite(c.heading_deg)) {
    throw InvalidInputError("noise_sigma must be >= 0 and heading_deg finite");
  }
}

ModeSet CoarsePredict(const Scenario& scenario, const CoarseConfig& config) {
  Validate(config);
  Validate(scenario);
  const size_t n = scenario.agents.size();
  const size_t steps = scenario.future_len;
  const double dt = 1.0 / scenario.sample_rate;
  ModeSet out(config.modes, n, steps);
  Rng rng(DeriveSeed(config.seed, static_cast<uint64_t>(scenario.id)));

  for (size_t k = 0; k < config.modes; ++k) {
    Preset p{0, 0};
    if (k > 0) p = kPresets[(k - 1) % kPresets.size()];
    const double speed = 1.0 + p.speed * config.speed_scale;
    const double turn = p.heading * config.heading_deg * std::numbers::pi / 180.0;
    for (size_t i = 0; i < n; ++i) {
      const auto& h = scenario.agents[i].history;
      const Vec2 last = h.back();
      const Vec2 v = Rotate((h.back() - h[h.size() - 2]) * scenario.sample_rate, turn) * speed;
      for (size_t t = 0; t < steps; ++t) {
        out.at(k, i, t) = last + v * (static_cast<double>(t + 1) * dt);
      }
    }
  }
  if (config.noise_sigma > 0.0) {
    for (size_t k = 0; k < config.modes; ++k) {
      for (size_t i = 0; i < n; ++i) {
        for (Vec2& q : out.trajectory(k, i)) {
          q.x += rng.Normal(0.0, config.noise_sigma);
          q.y += rng.Normal(0.0, config.noise_sigma);
        }
      }
    }
  }
  return out;
}

std::vector<ModeRecord> CoarsePredictAll(std::span<const Scenario> scenarios,
                                         const CoarseConfig& config, size_t threads) {
  std::vector<ModeRecord> out(scenarios.size());
  ParallelFor(scenarios.size(), threads, [&](size_t s) {
    out[s] = {scenarios[s].id, CoarsePredict(scenarios[s], config)};
  });
  return out;
}

}  // namespace sbr
