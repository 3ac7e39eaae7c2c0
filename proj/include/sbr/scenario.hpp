#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sbr/geometry.hpp"

namespace sbr {

inline constexpr const char* kScenarioFormat = "sbr-scn-v1";
inline constexpr const char* kModeFormat = "sbr-mode-v1";

struct Agent {
  int64_t id = 0;
  std::vector<Vec2> history;  // T- points, m
  std::vector<Vec2> future;   // T+ points, m (ground truth)
};

struct Lane {
  int64_t id = 0;
  std::vector<Vec2> centerline;  // m
  std::string tag;
};

struct Scenario {
  int64_t id = 0;
  std::string archetype;
  double sample_rate = 10.0;  // Hz
  size_t history_len = 0;
  size_t future_len = 0;
  std::vector<Agent> agents;
  std::vector<Lane> lanes;

  size_t num_agents() const { return agents.size(); }
};

// Throws ValidationError naming the violated constraint.
void Validate(const Scenario& scenario);

// K x N x T+ predicted futures in the global frame.
class ModeSet {
 public:
  ModeSet() = default;
  ModeSet(size_t modes, size_t agents, size_t steps);

  size_t modes() const { return modes_; }
  size_t agents() const { return agents_; }
  size_t steps() const { return steps_; }

  Vec2& at(size_t k, size_t i, size_t t) { return points_[(k * agents_ + i) * steps_ + t]; }
  const Vec2& at(size_t k, size_t i, size_t t) const {
    return points_[(k * agents_ + i) * steps_ + t];
  }
  std::span<Vec2> trajectory(size_t k, size_t i) {
    return {points_.data() + (k * agents_ + i) * steps_, steps_};
  }
  std::span<const Vec2> trajectory(size_t k, size_t i) const {
    return {points_.data() + (k * agents_ + i) * steps_, steps_};
  }
  std::span<const Vec2> points() const { return points_; }

  bool operator==(const ModeSet&) const = default;

 private:
  size_t modes_ = 0;
  size_t agents_ = 0;
  size_t steps_ = 0;
  std::vector<Vec2> points_;
};

// Modes predicted for one scenario, tagged with the scenario id.
struct ModeRecord {
  int64_t scenario_id = 0;
  ModeSet modes;
};

// Throws ValidationError unless K >= 1 and every coordinate is finite.
void Validate(const ModeSet& modes);
// Ground truth of a scenario as a single-mode set.
ModeSet GroundTruthModes(const Scenario& scenario);

// Line-delimited JSON: a header record, then one record per line.
void WriteScenarios(const std::filesystem::path& path, std::span<const Scenario> scenarios);
std::vector<Scenario> ReadScenarios(const std::filesystem::path& path);
void WriteModes(const std::filesystem::path& path, std::span<const ModeRecord> records);
std::vector<ModeRecord> ReadModes(const std::filesystem::path& path);

// Serialized forms used by the writers (exposed for tests and docs).
std::string ScenarioHeaderLine(size_t count);
std::string ScenarioLine(const Scenario& scenario);

}  // namespace sbr
