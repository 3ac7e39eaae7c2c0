#include "sbr/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "sbr/errors.hpp"
#include "sbr/parallel.hpp"
#include "sbr/topology.hpp"
#include "sbr/random.hpp"

namespace sbr {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kPathStep = 0.2;      // m between dense path vertices
constexpr double kLaneSpacing = 1.0;   // m between lane centerline vertices
constexpr double kMaxAccel = kMaxGeneratedAccel;
constexpr int kMaxAttempts = 200;

double Deg(double d) { return d * kPi / 180.0; }

// Arc-length parametrized polyline built from straight and circular pieces.
class Path {
 public:
  Path(Vec2 start, double heading) : heading_(heading) {
    points_.push_back(start);
    arc_.push_back(0.0);
  }

  // curvature 0 = straight.
  Path& Piece(double length, double curvature) {
    const int steps = std::max(1, static_cast<int>(std::ceil(length / kPathStep)));
    const double h = length / steps;
    for (int n = 0; n < steps; ++n) {
      const double mid = heading_ + 0.5 * h * curvature;
      points_.push_back(points_.back() + Vec2{std::cos(mid), std::sin(mid)} * h);
      arc_.push_back(arc_.back() + h);
      heading_ += h * curvature;
    }
    return *this;
  }

  double length() const { return arc_.back(); }
  double end_heading() const { return heading_; }

  Vec2 At(double s) const {
    if (s <= 0.0) return points_.front() + Direction(0) * s;
    if (s >= length()) return points_.back() + Direction(points_.size() - 2) * (s - length());
    const size_t idx = std::min(points_.size() - 2,
                                static_cast<size_t>(std::upper_bound(arc_.begin(), arc_.end(), s) -
                                                    arc_.begin() - 1));
    const double f = (s - arc_[idx]) / (arc_[idx + 1] - arc_[idx]);
    return points_[idx] + (points_[idx + 1] - points_[idx]) * f;
  }

  double HeadingAt(double s) const {
    const double ds = 0.1;
    const Vec2 d = At(s + ds) - At(s - ds);
    return std::atan2(d.y, d.x);
  }

  void Translate(const Vec2& offset) {
    for (Vec2& p : points_) p += offset;
  }

 private:
  Vec2 Direction(size_t seg) const {
    const Vec2 d = points_[seg + 1] - points_[seg];
    const double n = Norm(d);
    return n > 0.0 ? d * (1.0 / n) : Vec2{1.0, 0.0};
  }

  std::vector<Vec2> points_;
  std::vector<double> arc_;
  double heading_;
};

// Speed moves toward the active phase's target at the phase's rate.
struct SpeedPhase {
  double t_begin;
  double target;
  double rate;
};

struct MotionPlan {
  Path path;
  double v0;                        // speed through the history window
  double s_at_zero;                 // arc length at t = 0
  std::vector<SpeedPhase> phases;   // sorted by t_begin, all >= 0
};

// Samples the plan at history + future times. Returns arc lengths.
std::vector<double> SampleArc(const MotionPlan& plan, const GeneratorDims& dims,
                              std::vector<double>* speeds = nullptr) {
  const size_t total = dims.history_len + dims.future_len;
  const double dt = 1.0 / dims.sample_rate;
  std::vector<double> s(total), v(total);
  // History: constant speed v0 ending at s_at_zero.
  for (size_t n = 0; n < dims.history_len; ++n) {
    const double t = (static_cast<double>(n) - static_cast<double>(dims.history_len - 1)) * dt;
    s[n] = plan.s_at_zero + plan.v0 * t;
    v[n] = plan.v0;
  }
  const int substeps = 20;
  const double h = dt / substeps;
  double cur_s = plan.s_at_zero;
  double cur_v = plan.v0;
  double t = 0.0;
  for (size_t n = dims.history_len; n < total; ++n) {
    for (int k = 0; k < substeps; ++k) {
      const SpeedPhase* active = nullptr;
      for (const auto& p : plan.phases) {
        if (p.t_begin <= t + 1e-12) active = &p;
      }
      double next_v = cur_v;
      if (active != nullptr) {
        const double step = std::min(active->rate, kMaxAccel) * h;
        if (cur_v < active->target) next_v = std::min(active->target, cur_v + step);
        if (cur_v > active->target) next_v = std::max(active->target, cur_v - step);
      }
      next_v = std::max(0.0, next_v);
      cur_s += 0.5 * (cur_v + next_v) * h;
      cur_v = next_v;
      t += h;
    }
    s[n] = cur_s;
    v[n] = cur_v;
  }
  if (speeds != nullptr) *speeds = std::move(v);
  return s;
}

void FillAgent(const MotionPlan& plan, const GeneratorDims& dims, Agent& agent) {
  const auto s = SampleArc(plan, dims);
  agent.history.clear();
  agent.future.clear();
  for (size_t n = 0; n < s.size(); ++n) {
    const Vec2 p = plan.path.At(s[n]);
    (n < dims.history_len ? agent.history : agent.future).push_back(p);
  }
}

// Centerline following `path` over [s_begin, s_end], shifted laterally.
std::vector<Vec2> LaneAlong(const Path& path, double s_begin, double s_end, double lateral) {
  std::vector<Vec2> out;
  for (double s = s_begin; s <= s_end + 1e-9; s += kLaneSpacing) {
    const double heading = path.HeadingAt(s);
    const Vec2 normal{-std::sin(heading), std::cos(heading)};
    out.push_back(path.At(s) + normal * lateral);
  }
  return out;
}

struct Builder {
  const GeneratorDims& dims;
  Rng& rng;
  std::vector<MotionPlan> plans;
  std::vector<int> lane_group;  // plans in one group share a lane
  std::vector<std::string> group_tags;
  std::vector<Agent> agents;

  double dt() const { return 1.0 / dims.sample_rate; }
  double horizon() const { return static_cast<double>(dims.future_len) * dt(); }

  // Starts a new lane group when `lane_tag` is non-empty, else joins the last.
  void Add(MotionPlan plan, std::string lane_tag) {
    if (!lane_tag.empty() || group_tags.empty()) {
      group_tags.push_back(lane_tag.empty() ? "through" : std::move(lane_tag));
    }
    lane_group.push_back(static_cast<int>(group_tags.size()) - 1);
    plans.push_back(std::move(plan));
    Agent& a = agents.emplace_back();
    FillAgent(plans.back(), dims, a);
  }

  std::vector<Vec2> FullTrack(size_t i) const {
    std::vector<Vec2> t = agents[i].history;
    t.insert(t.end(), agents[i].future.begin(), agents[i].future.end());
    return t;
  }

  double MinDistanceTo(const Agent& candidate) const {
    std::vector<Vec2> c = candidate.history;
    c.insert(c.end(), candidate.future.begin(), candidate.future.end());
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < agents.size(); ++i) {
      best = std::min(best, MinSameTimeDistance(FullTrack(i), c));
    }
    return best;
  }
};

MotionPlan StraightPlan(Vec2 through, double heading, double s_through, double v0,
                        double s_at_zero) {
  const Vec2 dir{std::cos(heading), std::sin(heading)};
  Path path(through - dir * s_through, heading);
  path.Piece(s_through + 150.0, 0.0);
  return {std::move(path), v0, s_at_zero, {}};
}

// Two straight paths through a common point x; arrival times are those of
// constant-velocity motion.
struct CrossingGeometry {
  Vec2 x;
  double heading_a, heading_b, speed_a, speed_b, arrival_a, arrival_b;
};

CrossingGeometry DrawCrossing(Rng& rng, double arrival_lo, double arrival_hi, double gap_lo,
                              double gap_hi) {
  CrossingGeometry g;
  g.x = {rng.Uniform(-20.0, 20.0), rng.Uniform(-20.0, 20.0)};
  g.heading_a = rng.Uniform(-kPi, kPi);
  const double sign = rng.Bernoulli(0.5) ? 1.0 : -1.0;
  g.heading_b = WrapAngle(g.heading_a + sign * Deg(rng.Uniform(60.0, 120.0)));
  g.speed_a = rng.Uniform(6.0, 12.0);
  g.speed_b = rng.Uniform(6.0, 12.0);
  g.arrival_a = rng.Uniform(arrival_lo, arrival_hi);
  g.arrival_b = g.arrival_a + rng.Uniform(gap_lo, gap_hi);
  return g;
}


bool BuildCrossing(Builder& b) {
  const double s_x = 100.0;
  const double h = b.horizon();
  const auto g = DrawCrossing(b.rng, 0.13 * h, 0.5 * h, 0.3 * h, 0.45 * h);
  b.Add(StraightPlan(g.x, g.heading_a, s_x, g.speed_a, s_x - g.speed_a * g.arrival_a), "through");
  b.Add(StraightPlan(g.x, g.heading_b, s_x, g.speed_b, s_x - g.speed_b * g.arrival_b), "through");
  if (MinSameTimeDistance(b.FullTrack(0), b.FullTrack(1)) < 2.0) return false;
  const auto [ab, ba] = BraidCrossing(b.agents[0].future, b.agents[1].future, kDefaultBraidEpsilon);
  return ab || ba;
}

bool BuildYielding(Builder& b) {
  const double s_x = 100.0;
  const double h = b.horizon();
  // Agent b would reach the conflict point shortly after a, so it gives way.
  const auto g = DrawCrossing(b.rng, 0.27 * h, 0.53 * h, 0.02 * h, 0.17 * h);
  b.Add(StraightPlan(g.x, g.heading_a, s_x, g.speed_a, s_x - g.speed_a * g.arrival_a), "through");

  MotionPlan yielder =
      StraightPlan(g.x, g.heading_b, s_x, g.speed_b, s_x - g.speed_b * g.arrival_b);
  const double brake_at = b.rng.Uniform(0.0, 0.1 * h);
  const double decel = b.rng.Uniform(3.0, kMaxAccel);
  const double floor_speed = g.speed_b * b.rng.Uniform(0.15, 0.5);
  // Resume once the priority agent is clear of the conflict point.
  const double release = g.arrival_a + 6.0 / g.speed_a + b.rng.Uniform(0.2, 0.6);
  yielder.phases = {{brake_at, floor_speed, decel}, {release, g.speed_b, 2.0}};
  b.Add(std::move(yielder), "yield");

  std::vector<double> speeds;
  SampleArc(b.plans[1], b.dims, &speeds);
  const size_t mid = b.dims.history_len + b.dims.future_len / 2;
  if (speeds[mid] > 0.7 * g.speed_b) return false;
  return MinSameTimeDistance(b.FullTrack(0), b.FullTrack(1)) >= 2.0;
}

bool BuildMerging(Builder& b) {
  const double h = b.horizon();
  const double heading = b.rng.Uniform(-kPi, kPi);
  const Vec2 merge_point{b.rng.Uniform(-20.0, 20.0), b.rng.Uniform(-20.0, 20.0)};
  const double s_merge = 100.0;
  const double v_main = b.rng.Uniform(7.0, 12.0);
  const double t_main = b.rng.Uniform(0.15 * h, 0.8 * h);
  b.Add(StraightPlan(merge_point, heading, s_merge, v_main, s_merge - v_main * t_main), "main");

  // Ramp: straight approach at an angle, an arc onto the main heading, then
  // the main road. Built at the origin and moved so the arc ends at the merge.
  const double side = b.rng.Bernoulli(0.5) ? 1.0 : -1.0;
  const double angle = Deg(b.rng.Uniform(15.0, 30.0));
  const double arc_len = b.rng.Uniform(20.0, 30.0);
  const double approach = 100.0 - arc_len;
  Path ramp({0.0, 0.0}, heading + side * angle);
  ramp.Piece(approach, 0.0).Piece(arc_len, -side * angle / arc_len);
  ramp.Translate(merge_point - ramp.At(ramp.length()));
  ramp.Piece(150.0, 0.0);

  const double v_ramp = b.rng.Uniform(5.0, 10.0);
  const double t_ramp = t_main + b.rng.Uniform(-0.4 * h, 0.4 * h);
  MotionPlan merger{std::move(ramp), v_ramp, s_merge - v_ramp * std::max(0.1, t_ramp), {}};
  if (std::abs(t_ramp - t_main) < 0.35 * h || t_ramp > t_main) {
    // Conflict or main road first: slot in behind the main-road agent.
    merger.phases = {{b.rng.Uniform(0.0, 0.1 * h), v_ramp * b.rng.Uniform(0.3, 0.6),
                      b.rng.Uniform(2.5, kMaxAccel)},
                     {t_main + 8.0 / v_main, v_main, 2.0}};
  }
  b.Add(std::move(merger), "merge");
  return MinSameTimeDistance(b.FullTrack(0), b.FullTrack(1)) >= 2.0;
}

bool BuildLaneFollow(Builder& b) {
  const double v = b.rng.Uniform(4.0, 12.0);
  const double max_curvature = std::min(0.05, 0.9 * kMaxAccel / (v * v));
  if (max_curvature < 0.01) return false;
  const double curvature = (b.rng.Bernoulli(0.5) ? 1.0 : -1.0) *
                           b.rng.Uniform(0.01, max_curvature);
  const double turn_at = b.rng.Uniform(-0.5, 0.5 * b.horizon());
  const double lead = 100.0;
  Path path({b.rng.Uniform(-20.0, 20.0), b.rng.Uniform(-20.0, 20.0)}, b.rng.Uniform(-kPi, kPi));
  path.Piece(lead, 0.0).Piece(b.rng.Uniform(30.0, 60.0), curvature).Piece(150.0, 0.0);
  MotionPlan plan{std::move(path), v, lead - v * turn_at, {}};
  plan.phases = {{b.rng.Uniform(0.0, 1.0), v * b.rng.Uniform(0.8, 1.2), 1.0}};
  b.Add(std::move(plan), "through");
  return true;
}

bool BuildPlatoon(Builder& b, size_t followers) {
  const double v = b.rng.Uniform(6.0, 12.0);
  const double heading = b.rng.Uniform(-kPi, kPi);
  const Vec2 start{b.rng.Uniform(-20.0, 20.0), b.rng.Uniform(-20.0, 20.0)};
  const double curvature = b.rng.Uniform(-0.01, 0.01);
  auto make_path = [&] {
    Path p(start, heading);
    p.Piece(150.0, 0.0).Piece(150.0, curvature);
    return p;
  };
  const double change_at = b.rng.Uniform(0.0, 0.3 * b.horizon());
  const double target = v * (b.rng.Bernoulli(0.5) ? b.rng.Uniform(0.3, 0.7) : b.rng.Uniform(1.1, 1.3));
  const double rate = b.rng.Uniform(2.0, 4.0);
  const double delay = 0.5;

  double s_front = 150.0;
  for (size_t m = 0; m <= followers; ++m) {
    MotionPlan plan{make_path(), v, s_front, {}};
    plan.phases = {{change_at + delay * static_cast<double>(m), target, rate}};
    b.Add(std::move(plan), m == 0 ? "through" : "");
    s_front -= v * b.rng.Uniform(1.2, 1.8) + 5.0;
  }
  for (size_t i = 0; i < b.agents.size(); ++i) {
    for (size_t j = i + 1; j < b.agents.size(); ++j) {
      if (MinSameTimeDistance(b.FullTrack(i), b.FullTrack(j)) < 4.0) return false;
    }
  }
  return true;
}

// Adds a lane-following agent well clear of everyone already placed.
bool AddBackgroundAgent(Builder& b, Vec2 center) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    const double radius = b.rng.Uniform(15.0, 45.0) + 0.5 * attempt;
    const double bearing = b.rng.Uniform(-kPi, kPi);
    const Vec2 anchor = center + Vec2{std::cos(bearing), std::sin(bearing)} * radius;
    const double heading = b.rng.Uniform(-kPi, kPi);
    const double v = b.rng.Uniform(2.0, 12.0);
    const double curvature = b.rng.Uniform(-1.0, 1.0) * std::min(0.02, 0.9 * kMaxAccel / (v * v));
    const Vec2 dir{std::cos(heading), std::sin(heading)};
    Path path(anchor - dir * 100.0, heading);
    path.Piece(100.0, 0.0).Piece(150.0, curvature);
    MotionPlan plan{std::move(path), v, 100.0, {}};
    Agent candidate;
    FillAgent(plan, b.dims, candidate);
    if (b.MinDistanceTo(candidate) >= 4.0) {
      b.Add(std::move(plan), "through");
      return true;
    }
  }
  return false;
}

void BuildLanes(Builder& b, Scenario& s) {
  // Lanes run a fixed distance past the last observed position so their extent
  // says nothing about where the future ends.
  const double reach = 15.0 * b.horizon() + 20.0;
  const size_t now = b.dims.history_len - 1;
  int64_t next_id = 0;
  for (size_t g = 0; g < b.group_tags.size(); ++g) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    const Path* path = nullptr;
    for (size_t i = 0; i < b.plans.size(); ++i) {
      if (b.lane_group[i] != static_cast<int>(g)) continue;
      const auto arc = SampleArc(b.plans[i], b.dims);
      lo = std::min(lo, arc.front());
      hi = std::max(hi, arc[now] + reach);
      if (path == nullptr) path = &b.plans[i].path;
    }
    const double lateral = b.rng.Uniform(-0.3, 0.3);
    s.lanes.push_back({next_id++, LaneAlong(*path, lo - 10.0, hi + 10.0, lateral), b.group_tags[g]});
    if (b.rng.Bernoulli(0.3)) {
      const double side = b.rng.Bernoulli(0.5) ? 3.5 : -3.5;
      s.lanes.push_back(
          {next_id++, LaneAlong(*path, lo - 10.0, hi + 10.0, lateral + side), "adjacent"});
    }
  }
}

size_t CoreAgents(Archetype a) {
  switch (a) {
    case Archetype::kCrossing:
    case Archetype::kYielding:
    case Archetype::kMerging:
      return 2;
    case Archetype::kLaneFollow:
    case Archetype::kPlatoon:
      return 1;
  }
  return 1;
}

bool MaxAccelWithin(const Agent& a, double sample_rate, double bound) {
  std::vector<Vec2> track = a.history;
  track.insert(track.end(), a.future.begin(), a.future.end());
  const double r2 = sample_rate * sample_rate;
  for (size_t t = 1; t + 1 < track.size(); ++t) {
    const Vec2 acc = (track[t + 1] - track[t] * 2.0 + track[t - 1]) * r2;
    if (Norm(acc) > bound) return false;
  }
  return true;
}

}  // namespace

std::string_view ArchetypeName(Archetype a) {
  switch (a) {
    case Archetype::kCrossing:
      return "crossing";
    case Archetype::kYielding:
      return "yielding";
    case Archetype::kMerging:
      return "merging";
    case Archetype::kLaneFollow:
      return "lane_follow";
    case Archetype::kPlatoon:
      return "platoon";
  }
  return "unknown";
}

Archetype ParseArchetype(std::string_view name) {
  for (Archetype a : {Archetype::kCrossing, Archetype::kYielding, Archetype::kMerging,
                      Archetype::kLaneFollow, Archetype::kPlatoon}) {
    if (name == ArchetypeName(a)) return a;
  }
  if (name == "lane-follow") return Archetype::kLaneFollow;
  throw InvalidInputError("unknown archetype '" + std::string(name) +
                          "' (expected crossing, yielding, merging, lane_follow, platoon)");
}

std::vector<Archetype> ParseArchetypeList(std::string_view csv) {
  std::vector<Archetype> out;
  size_t begin = 0;
  while (begin <= csv.size()) {
    const size_t end = std::min(csv.find(',', begin), csv.size());
    const auto item = csv.substr(begin, end - begin);
    if (!item.empty()) out.push_back(ParseArchetype(item));
    begin = end + 1;
  }
  if (out.empty()) throw InvalidInputError("archetype list is empty");
  return out;
}

void Validate(const GeneratorDims& dims) {
  if (dims.min_agents < 1) throw InvalidInputError("min_agents must be >= 1");
  if (dims.max_agents < dims.min_agents) throw InvalidInputError("max_agents must be >= min_agents");
  if (dims.history_len < 2) throw InvalidInputError("history_len must be >= 2");
  if (dims.future_len < 3) throw InvalidInputError("future_len must be >= 3");
  if (!(dims.sample_rate > 0.0) || !std::isfinite(dims.sample_rate)) {
    throw InvalidInputError("sample_rate must be > 0");
  }
}

double MinSameTimeDistance(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  if (a.size() != b.size()) throw InvalidInputError("tracks differ in length");
  double best = std::numeric_limits<double>::infinity();
  for (size_t t = 0; t < a.size(); ++t) best = std::min(best, Norm(a[t] - b[t]));
  return best;
}

double SpeedAt(const std::vector<Vec2>& track, size_t t, double sample_rate) {
  if (track.size() < 2 || t >= track.size()) throw InvalidInputError("speed index out of range");
  if (t == 0) return Norm(track[1] - track[0]) * sample_rate;
  return Norm(track[t] - track[t - 1]) * sample_rate;
}

Scenario GenerateScenario(Archetype archetype, int64_t id, uint64_t seed,
                          const GeneratorDims& dims) {
  Validate(dims);
  const size_t core = CoreAgents(archetype);
  if (dims.max_agents < core) {
    throw InvalidInputError(std::string(ArchetypeName(archetype)) + " needs max_agents >= " +
                            std::to_string(core));
  }
  Rng rng(DeriveSeed(seed, static_cast<uint64_t>(id)));
  const size_t target = dims.min_agents + rng.Index(dims.max_agents - dims.min_agents + 1);

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Builder b{dims, rng, {}, {}, {}, {}};
    bool ok = false;
    switch (archetype) {
      case Archetype::kCrossing:
        ok = BuildCrossing(b);
        break;
      case Archetype::kYielding:
        ok = BuildYielding(b);
        break;
      case Archetype::kMerging:
        ok = BuildMerging(b);
        break;
      case Archetype::kLaneFollow:
        ok = BuildLaneFollow(b);
        break;
      case Archetype::kPlatoon: {
        const size_t followers = std::min<size_t>(2 + rng.Index(3), dims.max_agents - 1);
        ok = BuildPlatoon(b, followers);
        break;
      }
    }
    if (!ok) continue;

    Vec2 center{0.0, 0.0};
    for (const Agent& a : b.agents) center += a.history.back();
    center = center * (1.0 / static_cast<double>(b.agents.size()));
    while (ok && b.agents.size() < target) ok = AddBackgroundAgent(b, center);
    if (!ok) continue;
    for (const Agent& a : b.agents) ok = ok && MaxAccelWithin(a, dims.sample_rate, kMaxAccel + 0.1);
    if (!ok) continue;

    Scenario s;
    s.id = id;
    s.archetype = std::string(ArchetypeName(archetype));
    s.sample_rate = dims.sample_rate;
    s.history_len = dims.history_len;
    s.future_len = dims.future_len;
    s.agents = b.agents;
    for (size_t i = 0; i < s.agents.size(); ++i) s.agents[i].id = static_cast<int64_t>(i);
    BuildLanes(b, s);
    return s;
  }
  throw InvalidInputError("could not generate a " + std::string(ArchetypeName(archetype)) +
                          " scenario for these dims after " + std::to_string(kMaxAttempts) +
                          " attempts");
}

std::vector<Scenario> GenerateScenarios(const std::vector<Archetype>& mix, size_t count,
                                        uint64_t seed, const GeneratorDims& dims,
                                        size_t threads) {
  if (count < 1) throw InvalidInputError("count must be >= 1");
  if (mix.empty()) throw InvalidInputError("archetype mix is empty");
  Validate(dims);
  std::vector<Scenario> out(count);
  ParallelFor(count, threads, [&](size_t s) {
    out[s] = GenerateScenario(mix[s % mix.size()], static_cast<int64_t>(s), seed, dims);
  });
  return out;
}

}  // namespace sbr
