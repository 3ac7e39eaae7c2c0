#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sbr/scenario.hpp"

namespace sbr {

enum class Archetype {
  kCrossing,    // paths cross at distinct times, both keep speed
  kYielding,    // paths would conflict; the later arrival brakes and waits
  kMerging,     // a ramp joins a main road; the merger slots in behind
  kLaneFollow,  // a single agent follows a curving lane
  kPlatoon,     // car-following column reacting to a braking/accelerating leader
};

std::string_view ArchetypeName(Archetype a);
// Throws InvalidInputError for unknown names.
Archetype ParseArchetype(std::string_view name);
// Comma-separated list, e.g. "yielding,crossing".
std::vector<Archetype> ParseArchetypeList(std::string_view csv);

struct GeneratorDims {
  size_t min_agents = 2;
  size_t max_agents = 6;
  size_t history_len = 10;
  size_t future_len = 30;
  double sample_rate = 10.0;
};

// Accelerations stay within this bound (m/s^2) on every generated track.
inline constexpr double kMaxGeneratedAccel = 4.5;

// Throws InvalidInputError when the dimensions cannot hold a scenario.
void Validate(const GeneratorDims& dims);

// Scenario s uses archetype mix[s % mix.size()] and an RNG stream derived
// from (seed, s), so output is independent of generation order.
std::vector<Scenario> GenerateScenarios(const std::vector<Archetype>& mix, size_t count,
                                        uint64_t seed, const GeneratorDims& dims,
                                        size_t threads = 1);
Scenario GenerateScenario(Archetype archetype, int64_t id, uint64_t seed,
                          const GeneratorDims& dims);

// Post-condition helpers shared with the tests.
double MinSameTimeDistance(const std::vector<Vec2>& a, const std::vector<Vec2>& b);
// Speed at sample t from the backward difference (forward at t = 0).
double SpeedAt(const std::vector<Vec2>& track, size_t t, double sample_rate);

}  // namespace sbr
