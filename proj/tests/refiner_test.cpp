#include <gtest/gtest.h>

#include <filesystem>

#include "sbr/errors.hpp"
#include "sbr/refiner.hpp"
#include "support.hpp"

namespace sbr {
namespace {

namespace fs = std::filesystem;

RefinerConfig SmallConfig(size_t future_len) {
  RefinerConfig c;
  c.iterations = 2;
  c.dim = 16;
  c.heads = 4;
  c.future_len = future_len;
  c.lane_points = 5;
  return c;
}

struct Case {
  Scenario scenario;
  ModeSet coarse;
  explicit Case(uint64_t seed, size_t agents = 4, size_t modes = 3) {
    Rng rng(seed);
    scenario = test::TinyScenario(rng, agents, 10, 12, 10.0);
    coarse = test::NoisyModes(rng, scenario, modes);
  }
};

std::vector<ModeSet> RunRefiner(const Refiner& r, const Scenario& s, const ModeSet& m) {
  return r.Refine(PrepareScene(s, m, r.config()));
}

TEST(RefinerConfig, Validation) {
  RefinerConfig c;
  EXPECT_NO_THROW(Validate(c));
  c.iterations = 0;
  EXPECT_THROW(Validate(c), ConfigError);
  c = {};
  c.tau_a = 0;
  EXPECT_THROW(Validate(c), ConfigError);
  c = {};
  c.tau_l = -1;
  EXPECT_THROW(Validate(c), ConfigError);
  c = {};
  c.dim = 60;
  c.heads = 8;
  EXPECT_THROW(Validate(c), ConfigError);
}

TEST(RefinerConfig, JsonRoundTripAndUnknownKeys) {
  RefinerConfig c;
  c.iterations = 4;
  c.tau_a = 31.5;
  c.topology_mode = TopologyMode::kBraid;
  c.topology_update = false;
  c.encoding = PositionalEncoding::kRaw;
  c.phi_norm = true;
  const RefinerConfig back = RefinerConfigFromJson(ToJson(c));
  EXPECT_EQ(ToJson(back), ToJson(c));
  auto j = ToJson(c);
  j["bogus"] = 1;
  EXPECT_THROW(RefinerConfigFromJson(j), ConfigError);
  EXPECT_THROW(ParseTopologyMode("hard"), ConfigError);
  EXPECT_EQ(ParseTopologyMode("none"), TopologyMode::kNone);
}

TEST(Refiner, EncoderWidth) {
  RefinerConfig c;
  c.future_len = 30;
  EXPECT_EQ(EncoderInputWidth(c), 3u + 60u * 9u);
  c.encoding = PositionalEncoding::kRaw;
  EXPECT_EQ(EncoderInputWidth(c), 63u);
}

TEST(Refiner, OutputShapesAndDefaultIterations) {
  Case c(1);
  RefinerConfig config = SmallConfig(12);
  config.iterations = 3;
  const Refiner r(config, {1, false});
  const auto outs = RunRefiner(r, c.scenario, c.coarse);
  ASSERT_EQ(outs.size(), 3u);
  for (const ModeSet& m : outs) {
    EXPECT_EQ(m.modes(), 3u);
    EXPECT_EQ(m.agents(), 4u);
    EXPECT_EQ(m.steps(), 12u);
  }
  EXPECT_EQ(RefinerConfig{}.iterations, 3u);
}

TEST(Refiner, ZeroHeadIsExactIdentity) {
  Case c(2);
  const Refiner r(SmallConfig(12), {2, true});
  for (const ModeSet& m : RunRefiner(r, c.scenario, c.coarse)) EXPECT_EQ(m, c.coarse);
  Refiner nonzero(SmallConfig(12), {2, false});
  EXPECT_NE(RunRefiner(nonzero, c.scenario, c.coarse).back(), c.coarse);
  nonzero.ZeroHeads();
  EXPECT_EQ(RunRefiner(nonzero, c.scenario, c.coarse).back(), c.coarse);
}

TEST(Refiner, SingleIterationIsOneStep) {
  Case c(3);
  RefinerConfig one = SmallConfig(12);
  one.iterations = 1;
  RefinerConfig two = SmallConfig(12);
  const Refiner r1(one, {3, false});
  Refiner r2(two, {3, false});
  // Copy the shared first-iteration parameters so both models agree on step 1.
  for (auto& p : r2.params()) {
    if (auto idx = r1.params().Find(p.name)) p.value = r1.params()[*idx].value;
  }
  EXPECT_EQ(RunRefiner(r1, c.scenario, c.coarse)[0], RunRefiner(r2, c.scenario, c.coarse)[0]);
}

TEST(Refiner, TranslationEquivariance) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Case c(10 + seed);
    const Refiner r(SmallConfig(12), {seed, false});
    const test::Rigid shift{0.0, {1234.5, -876.25}};
    const auto base = RunRefiner(r, c.scenario, c.coarse);
    const auto moved =
        RunRefiner(r, test::Transform(c.scenario, shift), test::Transform(c.coarse, shift));
    for (size_t l = 0; l < base.size(); ++l) {
      const auto a = base[l].points();
      const auto b = moved[l].points();
      for (size_t p = 0; p < a.size(); ++p) {
        ASSERT_NEAR(b[p].x, a[p].x + shift.shift.x, 1e-6);
        ASSERT_NEAR(b[p].y, a[p].y + shift.shift.y, 1e-6);
      }
    }
  }
}

TEST(Refiner, ModePermutationPermutesOutputs) {
  Case c(4, 3, 4);
  const Refiner r(SmallConfig(12), {4, false});
  const size_t order[] = {2, 0, 3, 1};
  ModeSet permuted(4, 3, 12);
  for (size_t k = 0; k < 4; ++k) {
    for (size_t i = 0; i < 3; ++i) {
      for (size_t t = 0; t < 12; ++t) permuted.at(k, i, t) = c.coarse.at(order[k], i, t);
    }
  }
  const auto a = RunRefiner(r, c.scenario, c.coarse).back();
  const auto b = RunRefiner(r, c.scenario, permuted).back();
  for (size_t k = 0; k < 4; ++k) {
    for (size_t i = 0; i < 3; ++i) {
      for (size_t t = 0; t < 12; ++t) {
        ASSERT_NEAR(b.at(k, i, t).x, a.at(order[k], i, t).x, 1e-12);
        ASSERT_NEAR(b.at(k, i, t).y, a.at(order[k], i, t).y, 1e-12);
      }
    }
  }
}

// Agent 3 sits 2 km away from everything; moving its coarse futures must not
// touch the other agents' outputs at all.
TEST(Refiner, DistantAgentIsInvisible) {
  Case c(5);
  const Vec2 far{2000, 2000};
  Agent& lone = c.scenario.agents[3];
  for (Vec2& p : lone.history) p += far;
  for (Vec2& p : lone.future) p += far;
  c.scenario.lanes.erase(c.scenario.lanes.begin() + 3);
  for (size_t k = 0; k < c.coarse.modes(); ++k) {
    for (Vec2& p : c.coarse.trajectory(k, 3)) p += far;
  }
  const Refiner r(SmallConfig(12), {5, false});
  const auto base = RunRefiner(r, c.scenario, c.coarse);
  Rng rng(6);
  ModeSet moved = c.coarse;
  for (size_t k = 0; k < moved.modes(); ++k) {
    for (Vec2& p : moved.trajectory(k, 3)) p += Vec2{rng.Uniform(-3, 3), rng.Uniform(-3, 3)};
  }
  const auto other = RunRefiner(r, c.scenario, moved);
  for (size_t l = 0; l < base.size(); ++l) {
    for (size_t k = 0; k < moved.modes(); ++k) {
      for (size_t i = 0; i < 3; ++i) {
        for (size_t t = 0; t < 12; ++t) {
          ASSERT_EQ(base[l].at(k, i, t), other[l].at(k, i, t));
        }
      }
    }
  }
  EXPECT_NE(base.back().at(0, 3, 11), other.back().at(0, 3, 11));
}

TEST(Refiner, TopologyModesAreDistinguishable) {
  Case c(7);
  RefinerConfig soft = SmallConfig(12);
  RefinerConfig none = soft;
  none.topology_mode = TopologyMode::kNone;
  RefinerConfig braid = soft;
  braid.topology_mode = TopologyMode::kBraid;
  const auto a = RunRefiner(Refiner(soft, {7, false}), c.scenario, c.coarse).back();
  const auto b = RunRefiner(Refiner(none, {7, false}), c.scenario, c.coarse).back();
  const auto d = RunRefiner(Refiner(braid, {7, false}), c.scenario, c.coarse).back();
  EXPECT_NE(a, b);
  EXPECT_NE(a, d);
  EXPECT_NE(b, d);
}

TEST(Refiner, FrozenTopologyReusesInitialFeatures) {
  Case c(8);
  RefinerConfig live = SmallConfig(12);
  RefinerConfig frozen = live;
  frozen.topology_update = false;
  const Refiner rl(live, {8, false});
  const Refiner rf(frozen, {8, false});
  const PreparedScene scene = PrepareScene(c.scenario, c.coarse, live);
  const auto ol = rl.Refine(scene);
  const auto of = rf.Refine(scene);
  // Iteration 1 sees Y0 either way; iteration 2 sees different topologies.
  EXPECT_EQ(ol[0], of[0]);
  EXPECT_NE(ol[1], of[1]);
  const SceneTopology again = ComputeTopology(scene.y0, scene, live);
  EXPECT_EQ(again.tt_features, scene.topology0->tt_features);
  EXPECT_EQ(again.tl_features, scene.topology0->tl_features);
  const SceneTopology updated = ComputeTopology(ModesToTensor(ol[0]), scene, live);
  EXPECT_NE(updated.tt_features, scene.topology0->tt_features);
}

TEST(Refiner, TopologyFeaturesMatchRecords) {
  Case c(9, 3, 2);
  const RefinerConfig config = SmallConfig(12);
  const PreparedScene scene = PrepareScene(c.scenario, c.coarse, config);
  const SceneTopology& topo = *scene.topology0;
  ASSERT_EQ(topo.tt_offsets.size(), 7u);
  ASSERT_EQ(topo.tt_features.rows(), topo.tt_edges.size());
  for (size_t e = 0; e < topo.tt_edges.size(); ++e) {
    const TtEdge& edge = topo.tt_edges[e];
    const size_t k = edge.query_row / 3, a = edge.query_row % 3, b = edge.key_row % 3;
    ASSERT_EQ(edge.key_row / 3, k);
    // Records come from the ordered pair (lo, hi); the reverse direction
    // carries the negated angle.
    const size_t lo = std::min(a, b), hi = std::max(a, b);
    const auto tl = c.coarse.trajectory(k, lo);
    const auto th = c.coarse.trajectory(k, hi);
    const auto [fwd, rev] =
        SoftBraidTTPair(tl, th, ComputeKinematics(tl, 10.0), ComputeKinematics(th, 10.0),
                        scene.frames[lo], scene.frames[hi]);
    const auto want = (a < b ? fwd : rev).ToArray();
    for (size_t f = 0; f < SoftBraidTT::kDim; ++f) {
      EXPECT_NEAR(topo.tt_features(e, f), want[f] * kTtFeatureScale[f], 1e-12);
    }
    EXPECT_LE(edge.distance, config.tau_a);
  }
}

TEST(Refiner, DuplicateLaneStaysFinite) {
  Case c(11);
  const RefinerConfig config = SmallConfig(12);
  const Refiner r(config, {11, false});
  const auto base = RunRefiner(r, c.scenario, c.coarse).back();
  Scenario dup = c.scenario;
  dup.lanes.push_back(dup.lanes[0]);
  dup.lanes.back().id = 99;
  const PreparedScene scene = PrepareScene(dup, c.coarse, config);
  EXPECT_GT(scene.topology0->tl_edges.size(),
            PrepareScene(c.scenario, c.coarse, config).topology0->tl_edges.size());
  const auto out = r.Refine(scene).back();
  for (const Vec2& p : out.points()) ASSERT_TRUE(std::isfinite(p.x) && std::isfinite(p.y));
  EXPECT_NE(out, base);
}

TEST(Refiner, NoLanesAndSingleAgent) {
  Rng rng(12);
  Scenario s = test::TinyScenario(rng, 1, 10, 12);
  s.lanes.clear();
  const ModeSet m = test::NoisyModes(rng, s, 2);
  const auto out = RunRefiner(Refiner(SmallConfig(12), {12, false}), s, m).back();
  for (const Vec2& p : out.points()) ASSERT_TRUE(std::isfinite(p.x) && std::isfinite(p.y));
}

TEST(Refiner, Deterministic) {
  Case c(13);
  const auto a = RunRefiner(Refiner(SmallConfig(12), {13, false}), c.scenario, c.coarse);
  const auto b = RunRefiner(Refiner(SmallConfig(12), {13, false}), c.scenario, c.coarse);
  EXPECT_EQ(a, b);
}

TEST(Refiner, ShapeMismatchIsRejected) {
  Case c(14);
  RefinerConfig config = SmallConfig(20);
  EXPECT_THROW(PrepareScene(c.scenario, c.coarse, config), ValidationError);
  ModeSet wrong(3, 2, 12);
  EXPECT_THROW(PrepareScene(c.scenario, wrong, SmallConfig(12)), ValidationError);
}

TEST(Refiner, GradientMatchesFiniteDifferences) {
  for (uint64_t seed = 21; seed < 29; ++seed) {
    test::TinyRefinerCase tc(seed);
    Refiner r(tc.config, {seed, false});
    test::JitterBiases(r.params(), seed);
    const PreparedScene scene = PrepareScene(tc.scenario, tc.coarse, tc.config);
    EXPECT_LT(test::RefinerGradError(r, scene, tc.truth), 1e-5) << "seed " << seed;
  }
}

TEST(Refiner, PhiNormOption) {
  Case c(16);
  RefinerConfig plain = SmallConfig(12);
  RefinerConfig normed = plain;
  normed.phi_norm = true;
  const Refiner a(plain, {16, false});
  Refiner b(normed, {16, false});
  EXPECT_EQ(b.params().ScalarCount(), a.params().ScalarCount() + 2 * 2 * 2 * 16);
  EXPECT_TRUE(b.params().Find("iter1.tl_phi_norm.gain").has_value());
  EXPECT_NE(RunRefiner(a, c.scenario, c.coarse).back(), RunRefiner(b, c.scenario, c.coarse).back());
  const Refiner back = Refiner::FromArchive(b.ToArchive());
  EXPECT_EQ(RunRefiner(back, c.scenario, c.coarse), RunRefiner(b, c.scenario, c.coarse));

  test::TinyRefinerCase tc(23);
  tc.config.phi_norm = true;
  Refiner g(tc.config, {23, false});
  test::JitterBiases(g.params(), 23);
  EXPECT_LT(test::RefinerGradError(g, PrepareScene(tc.scenario, tc.coarse, tc.config), tc.truth),
            1e-5);
}

TEST(Refiner, ArchiveRoundTrip) {
  Case c(15);
  const Refiner r(SmallConfig(12), {15, false});
  const fs::path path = fs::temp_directory_path() / "sbr_refiner_test.sbr";
  r.ToArchive().Save(path);
  const Refiner back = Refiner::FromArchive(ParameterArchive::Load(path));
  EXPECT_EQ(RunRefiner(r, c.scenario, c.coarse), RunRefiner(back, c.scenario, c.coarse));

  ParameterArchive missing = r.ToArchive();
  missing.arrays.pop_back();
  EXPECT_THROW(Refiner::FromArchive(missing), ParseError);

  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 8);
  EXPECT_THROW(ParameterArchive::Load(path), ParseError);
  fs::remove(path);
}

}  // namespace
}  // namespace sbr
