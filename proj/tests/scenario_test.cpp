#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <cstring>
#include <sstream>

#include <json.hpp>
#include <unistd.h>

#include "sbr/coarse.hpp"
#include "sbr/errors.hpp"
#include "sbr/generator.hpp"
#include "sbr/metrics.hpp"
#include "sbr/scenario.hpp"
#include "sbr/topology.hpp"
#include "support.hpp"

namespace sbr {
namespace {

namespace fs = std::filesystem;

std::vector<Vec2> FullTrack(const Agent& a) {
  std::vector<Vec2> out = a.history;
  out.insert(out.end(), a.future.begin(), a.future.end());
  return out;
}

std::string ReadAll(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("sbr_scenario_test_" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

TEST(Archetypes, Names) {
  EXPECT_EQ(ParseArchetype("yielding"), Archetype::kYielding);
  EXPECT_EQ(ParseArchetypeList("crossing,lane_follow").size(), 2u);
  EXPECT_THROW(ParseArchetype("roundabout"), InvalidInputError);
  for (auto a : {Archetype::kCrossing, Archetype::kYielding, Archetype::kMerging,
                 Archetype::kLaneFollow, Archetype::kPlatoon}) {
    EXPECT_EQ(ParseArchetype(ArchetypeName(a)), a);
  }
}

TEST(Generator, EveryScenarioIsValidAndSmooth) {
  const GeneratorDims dims;
  const auto mix = ParseArchetypeList("crossing,yielding,merging,lane_follow,platoon");
  const auto scenarios = GenerateScenarios(mix, 250, 3, dims, 2);
  ASSERT_EQ(scenarios.size(), 250u);
  for (size_t s = 0; s < scenarios.size(); ++s) {
    const Scenario& sc = scenarios[s];
    ASSERT_NO_THROW(Validate(sc));
    EXPECT_EQ(sc.archetype, ArchetypeName(mix[s % mix.size()]));
    EXPECT_EQ(sc.history_len, 10u);
    EXPECT_EQ(sc.future_len, 30u);
    EXPECT_FALSE(sc.lanes.empty());
    if (sc.archetype != "lane_follow") {
      EXPECT_GE(sc.num_agents(), dims.min_agents);
    }
    EXPECT_LE(sc.num_agents(), dims.max_agents);
    for (const Agent& a : sc.agents) {
      const auto track = FullTrack(a);
      const Kinematics k = ComputeKinematics(track, sc.sample_rate);
      for (size_t t = 0; t < track.size(); ++t) {
        ASSERT_LE(Norm(k.acceleration[t]), 5.0) << "scenario " << sc.id << " agent " << a.id;
      }
    }
  }
}

TEST(Generator, CrossingPairBraids) {
  const auto scenarios = GenerateScenarios({Archetype::kCrossing}, 200, 4, {});
  for (const Scenario& s : scenarios) {
    const auto [ab, ba] = BraidCrossing(s.agents[0].future, s.agents[1].future, 2.0);
    ASSERT_TRUE(ab || ba) << "scenario " << s.id;
  }
}

TEST(Generator, YieldingPairKeepsDistanceAndBrakes) {
  const GeneratorDims dims;
  const auto scenarios = GenerateScenarios({Archetype::kYielding}, 200, 5, dims);
  const size_t now = dims.history_len - 1;
  const size_t mid = dims.history_len + dims.future_len / 2;
  for (const Scenario& s : scenarios) {
    ASSERT_GE(MinSameTimeDistance(s.agents[0].future, s.agents[1].future), 2.0);
    const auto track = FullTrack(s.agents[1]);
    const double before = SpeedAt(track, now, s.sample_rate);
    ASSERT_LE(SpeedAt(track, mid, s.sample_rate), 0.7 * before) << "scenario " << s.id;
  }
}

TEST(Generator, DeterministicAndOrderIndependent) {
  const auto mix = ParseArchetypeList("yielding,crossing,platoon");
  const auto a = GenerateScenarios(mix, 30, 9, {}, 1);
  const auto b = GenerateScenarios(mix, 30, 9, {}, 3);
  for (size_t s = 0; s < a.size(); ++s) EXPECT_EQ(ScenarioLine(a[s]), ScenarioLine(b[s]));
  const Scenario one = GenerateScenario(mix[7 % 3], 7, 9, {});
  EXPECT_EQ(ScenarioLine(one), ScenarioLine(a[7]));
  const auto c = GenerateScenarios(mix, 30, 10, {}, 1);
  EXPECT_NE(ScenarioLine(a[0]), ScenarioLine(c[0]));
}

TEST(Generator, InvalidDims) {
  GeneratorDims d;
  d.min_agents = 0;
  EXPECT_THROW(Validate(d), InvalidInputError);
  d = {};
  d.min_agents = 5;
  d.max_agents = 3;
  EXPECT_THROW(Validate(d), InvalidInputError);
  d = {};
  d.sample_rate = 0;
  EXPECT_THROW(Validate(d), InvalidInputError);
  d = {};
  d.future_len = 1;
  EXPECT_THROW(Validate(d), InvalidInputError);
}

TEST(Files, ScenarioRoundTripAndByteDeterminism) {
  TempDir dir;
  const auto scenarios = GenerateScenarios(ParseArchetypeList("crossing,merging"), 12, 11, {});
  WriteScenarios(dir / "a.jsonl", scenarios);
  WriteScenarios(dir / "b.jsonl", GenerateScenarios(ParseArchetypeList("crossing,merging"), 12,
                                                    11, {}));
  EXPECT_EQ(ReadAll(dir / "a.jsonl"), ReadAll(dir / "b.jsonl"));
  const auto back = ReadScenarios(dir / "a.jsonl");
  ASSERT_EQ(back.size(), scenarios.size());
  for (size_t s = 0; s < back.size(); ++s) {
    EXPECT_EQ(back[s].id, scenarios[s].id);
    EXPECT_EQ(back[s].archetype, scenarios[s].archetype);
    ASSERT_EQ(back[s].agents.size(), scenarios[s].agents.size());
    for (size_t i = 0; i < back[s].agents.size(); ++i) {
      EXPECT_EQ(back[s].agents[i].history, scenarios[s].agents[i].history);
      EXPECT_EQ(back[s].agents[i].future, scenarios[s].agents[i].future);
    }
    ASSERT_EQ(back[s].lanes.size(), scenarios[s].lanes.size());
    for (size_t l = 0; l < back[s].lanes.size(); ++l) {
      EXPECT_EQ(back[s].lanes[l].centerline, scenarios[s].lanes[l].centerline);
      EXPECT_EQ(back[s].lanes[l].tag, scenarios[s].lanes[l].tag);
    }
  }
}

TEST(Files, ExtremeValuesRoundTripExactly) {
  TempDir dir;
  Rng rng(12);
  ModeSet m(2, 2, 3);
  const double specials[] = {5e-324, -1.7976931348623157e308, 0.1, 1.0 / 3.0, -0.0};
  for (size_t e = 0; e < 12; ++e) {
    const size_t k = e / 6, i = (e / 3) % 2, t = e % 3;
    m.at(k, i, t) = {e < 5 ? specials[e] : rng.Normal(0, 1e6), rng.Uniform(-1, 1)};
  }
  const ModeRecord rec{42, m};
  WriteModes(dir / "m.jsonl", std::span(&rec, 1));
  const auto back = ReadModes(dir / "m.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].scenario_id, 42);
  for (size_t p = 0; p < m.points().size(); ++p) {
    EXPECT_EQ(std::memcmp(&back[0].modes.points()[p], &m.points()[p], sizeof(Vec2)), 0);
  }
}

TEST(Files, TruncatedFileIsAParseError) {
  TempDir dir;
  const auto scenarios = GenerateScenarios({Archetype::kCrossing}, 3, 13, {});
  WriteScenarios(dir / "s.jsonl", scenarios);
  const std::string text = ReadAll(dir / "s.jsonl");
  std::ofstream(dir / "cut.jsonl", std::ios::binary) << text.substr(0, text.size() - 40);
  try {
    ReadScenarios(dir / "cut.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  // Dropping a whole record is caught by the header count.
  const size_t last = text.rfind('\n', text.size() - 2);
  std::ofstream(dir / "short.jsonl", std::ios::binary) << text.substr(0, last + 1);
  EXPECT_THROW(ReadScenarios(dir / "short.jsonl"), ParseError);
  EXPECT_THROW(ReadScenarios(dir / "missing.jsonl"), ParseError);
}

TEST(Files, VersionMismatch) {
  TempDir dir;
  const auto scenarios = GenerateScenarios({Archetype::kCrossing}, 1, 14, {});
  WriteScenarios(dir / "s.jsonl", scenarios);
  std::string text = ReadAll(dir / "s.jsonl");
  text.replace(text.find("sbr-scn-v1"), 10, "sbr-scn-v9");
  std::ofstream(dir / "v9.jsonl", std::ios::binary) << text;
  EXPECT_THROW(ReadScenarios(dir / "v9.jsonl"), FormatVersionError);
  // A mode file is not a scenario file either.
  const ModeRecord rec{0, ModeSet(1, 1, 3)};
  WriteModes(dir / "m.jsonl", std::span(&rec, 1));
  EXPECT_THROW(ReadScenarios(dir / "m.jsonl"), FormatVersionError);
}

TEST(Files, EmptyAgentListNamesConstraint) {
  Scenario s = GenerateScenario(Archetype::kLaneFollow, 3, 15, {});
  s.agents.clear();
  try {
    Validate(s);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("agents"), std::string::npos);
  }
  TempDir dir;
  Scenario good = GenerateScenario(Archetype::kLaneFollow, 3, 15, {});
  WriteScenarios(dir / "s.jsonl", std::span(&good, 1));
  const std::string text = ReadAll(dir / "s.jsonl");
  const size_t split = text.find('\n') + 1;
  auto record = nlohmann::json::parse(text.substr(split));
  record["agents"] = nlohmann::json::array();
  std::ofstream(dir / "empty.jsonl", std::ios::binary)
      << text.substr(0, split) << record.dump() << '\n';
  EXPECT_THROW(ReadScenarios(dir / "empty.jsonl"), ValidationError);
}

TEST(Coarse, StaticHistoryStaysPut) {
  Scenario s = GenerateScenario(Archetype::kCrossing, 1, 16, {});
  for (Agent& a : s.agents) std::fill(a.history.begin(), a.history.end(), a.history.back());
  CoarseConfig c;
  c.noise_sigma = 0.0;
  const ModeSet m = CoarsePredict(s, c);
  for (size_t k = 0; k < m.modes(); ++k) {
    for (size_t i = 0; i < m.agents(); ++i) {
      for (const Vec2& p : m.trajectory(k, i)) EXPECT_EQ(p, s.agents[i].history.back());
    }
  }
}

TEST(Coarse, StraightLineIsExactForModeZero) {
  Scenario s;
  s.id = 5;
  s.history_len = 10;
  s.future_len = 30;
  Agent a;
  for (size_t t = 0; t < 40; ++t) {
    const Vec2 p = Vec2{3, -1} + Vec2{0.6, 0.8} * (0.9 * static_cast<double>(t));
    (t < 10 ? a.history : a.future).push_back(p);
  }
  s.agents.push_back(a);
  CoarseConfig c;
  c.noise_sigma = 0.0;
  const ModeSet m = CoarsePredict(s, c);
  ModeSet mode0(1, 1, 30);
  for (size_t t = 0; t < 30; ++t) mode0.at(0, 0, t) = m.at(0, 0, t);
  EXPECT_LT(AvgMinFde(mode0, GroundTruthModes(s)), 1e-6);
  EXPECT_GT(Norm(m.at(1, 0, 29) - a.future[29]), 1.0);
}

TEST(Coarse, YieldingScenesAreMissed) {
  CoarseConfig c;
  for (const Scenario& s : GenerateScenarios({Archetype::kYielding}, 20, 17, {})) {
    const ModeSet m = CoarsePredict(s, c);
    ModeSet mode0(1, m.agents(), m.steps());
    for (size_t i = 0; i < m.agents(); ++i) {
      for (size_t t = 0; t < m.steps(); ++t) mode0.at(0, i, t) = m.at(0, i, t);
    }
    EXPECT_GT(AvgMinFde(mode0, GroundTruthModes(s)), 0.0);
  }
}

TEST(Coarse, DeterministicAndSeeded) {
  const auto scenarios = GenerateScenarios({Archetype::kMerging}, 5, 18, {});
  CoarseConfig c;
  c.seed = 3;
  const auto a = CoarsePredictAll(scenarios, c, 1);
  const auto b = CoarsePredictAll(scenarios, c, 2);
  for (size_t s = 0; s < a.size(); ++s) EXPECT_EQ(a[s].modes, b[s].modes);
  c.seed = 4;
  EXPECT_NE(CoarsePredictAll(scenarios, c)[0].modes, a[0].modes);
  EXPECT_EQ(a[0].modes.modes(), 6u);
  c.modes = 0;
  EXPECT_THROW(CoarsePredict(scenarios[0], c), InvalidInputError);
}

}  // namespace
}  // namespace sbr
