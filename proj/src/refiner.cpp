#include "sbr/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "sbr/errors.hpp"

namespace sbr {

namespace {

constexpr std::array<double, 4> kWavelengths = {80.0, 40.0, 20.0, 10.0};  // m

std::vector<Vec2> RowTrajectory(const Tensor& y, size_t row) {
  std::vector<Vec2> out(y.cols() / 2);
  for (size_t t = 0; t < out.size(); ++t) out[t] = {y(row, 2 * t), y(row, 2 * t + 1)};
  return out;
}

std::array<double, 4> BoundingBox(std::span<const Vec2> pts) {
  std::array<double, 4> box{std::numeric_limits<double>::infinity(),
                            std::numeric_limits<double>::infinity(),
                            -std::numeric_limits<double>::infinity(),
                            -std::numeric_limits<double>::infinity()};
  for (const Vec2& p : pts) {
    box[0] = std::min(box[0], p.x);
    box[1] = std::min(box[1], p.y);
    box[2] = std::max(box[2], p.x);
    box[3] = std::max(box[3], p.y);
  }
  return box;
}

double BoxGap(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double dx = std::max({0.0, a[0] - b[2], b[0] - a[2]});
  const double dy = std::max({0.0, a[1] - b[3], b[1] - a[3]});
  return std::sqrt(dx * dx + dy * dy);
}

// d|delta| / d(delta) and d atan2(delta) / d(delta); zero at coincidence.
Vec2 DistanceGrad(const Vec2& delta, double distance) {
  if (distance < kZeroDistance) return {0.0, 0.0};
  return delta * (1.0 / distance);
}

Vec2 AngleGrad(const Vec2& delta, double distance) {
  if (distance < kZeroDistance) return {0.0, 0.0};
  const double inv = 1.0 / (distance * distance);
  return {-delta.y * inv, delta.x * inv};
}

void AddPoint(Tensor& g, size_t row, size_t t, const Vec2& v) {
  g(row, 2 * t) += v.x;
  g(row, 2 * t + 1) += v.y;
}

void AddStencil(Tensor& g, size_t row, const Stencil& stencil, const Vec2& v) {
  for (const auto& [s, w] : stencil) AddPoint(g, row, s, v * w);
}

// Differentiable view of the topology features of `y`. Values are the
// precomputed features; the backward pass routes gradients through the
// finite-difference kinematics and the distance / angle at the soft
// intersection. Neighbor sets and argmin indices are held fixed.
ad::Var TtFeatureVar(ad::Tape& tape, ad::Var y, std::shared_ptr<const SceneTopology> topo,
                     const PreparedScene& scene, const RefinerConfig& config) {
  if (config.topology_mode != TopologyMode::kSoftBraid || !tape.RequiresGrad(y)) {
    return tape.Constant(topo->tt_features);
  }
  const size_t n = scene.agents;
  const size_t steps = scene.steps;
  const double rate = scene.sample_rate;
  const std::vector<LocalFrame>* frames = &scene.frames;
  const ad::Var inputs[] = {y};
  return tape.Record(
      topo->tt_features, inputs,
      [y, topo, frames, n, steps, rate](ad::Tape& t, const Tensor& g) {
        Tensor& gy = t.GradBuffer(y);
        const auto& s = kTtFeatureScale;
        for (size_t e = 0; e < topo->tt_edges.size(); ++e) {
          const TtEdge& edge = topo->tt_edges[e];
          const LocalFrame& frame = (*frames)[edge.query_row % n];
          const auto ge = g.row(e);
          const Stencil vel = VelocityStencil(steps, edge.time_index, rate);
          const Stencil acc = AccelerationStencil(steps, edge.time_index, rate);
          AddStencil(gy, edge.query_row, vel, frame.VectorFromLocal({ge[0] * s[0], ge[1] * s[1]}));
          AddStencil(gy, edge.key_row, vel, frame.VectorFromLocal({ge[2] * s[2], ge[3] * s[3]}));
          AddStencil(gy, edge.query_row, acc, frame.VectorFromLocal({ge[4] * s[4], ge[5] * s[5]}));
          AddStencil(gy, edge.key_row, acc, frame.VectorFromLocal({ge[6] * s[6], ge[7] * s[7]}));
          const Vec2 towards_key = DistanceGrad(edge.delta, edge.distance) * (ge[8] * s[8]) +
                                   AngleGrad(edge.delta, edge.distance) *
                                       (ge[9] * s[9] * edge.angle_sign);
          AddPoint(gy, edge.key_row, edge.time_index, towards_key);
          AddPoint(gy, edge.query_row, edge.time_index, towards_key * -1.0);
        }
      },
      "tt_topology");
}

ad::Var TlFeatureVar(ad::Tape& tape, ad::Var y, std::shared_ptr<const SceneTopology> topo,
                     const PreparedScene& scene) {
  if (!tape.RequiresGrad(y)) return tape.Constant(topo->tl_features);
  const size_t n = scene.agents;
  const size_t steps = scene.steps;
  const double rate = scene.sample_rate;
  const std::vector<LocalFrame>* frames = &scene.frames;
  const ad::Var inputs[] = {y};
  return tape.Record(
      topo->tl_features, inputs,
      [y, topo, frames, n, steps, rate](ad::Tape& t, const Tensor& g) {
        Tensor& gy = t.GradBuffer(y);
        const auto& s = kTlFeatureScale;
        for (size_t e = 0; e < topo->tl_edges.size(); ++e) {
          const TlEdge& edge = topo->tl_edges[e];
          const LocalFrame& frame = (*frames)[edge.query_row % n];
          const auto ge = g.row(e);
          AddStencil(gy, edge.query_row, VelocityStencil(steps, edge.time_index, rate),
                     frame.VectorFromLocal({ge[0] * s[0], ge[1] * s[1]}));
          AddStencil(gy, edge.query_row, AccelerationStencil(steps, edge.time_index, rate),
                     frame.VectorFromLocal({ge[2] * s[2], ge[3] * s[3]}));
          const Vec2 towards_lane = DistanceGrad(edge.delta, edge.distance) * (ge[4] * s[4]) +
                                    AngleGrad(edge.delta, edge.distance) * (ge[5] * s[5]);
          AddPoint(gy, edge.query_row, edge.time_index, towards_lane * -1.0);
        }
      },
      "tl_topology");
}

void RequireKey(const nlohmann::json& j, const std::set<std::string>& known) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown refiner config key '" + key + "'");
  }
}

}  // namespace

std::string_view TopologyModeName(TopologyMode m) {
  switch (m) {
    case TopologyMode::kSoftBraid:
      return "soft_braid";
    case TopologyMode::kBraid:
      return "braid";
    case TopologyMode::kNone:
      return "none";
  }
  return "unknown";
}

TopologyMode ParseTopologyMode(std::string_view name) {
  for (auto m : {TopologyMode::kSoftBraid, TopologyMode::kBraid, TopologyMode::kNone}) {
    if (name == TopologyModeName(m)) return m;
  }
  throw ConfigError("topology_mode must be soft_braid, braid or none, got '" + std::string(name) +
                    "'");
}

std::string_view PositionalEncodingName(PositionalEncoding p) {
  return p == PositionalEncoding::kSinusoidal ? "sinusoidal" : "raw";
}

PositionalEncoding ParsePositionalEncoding(std::string_view name) {
  if (name == "sinusoidal") return PositionalEncoding::kSinusoidal;
  if (name == "raw") return PositionalEncoding::kRaw;
  throw ConfigError("encoding must be sinusoidal or raw, got '" + std::string(name) + "'");
}

void Validate(const RefinerConfig& c) {
  if (c.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(c.tau_a > 0.0)) throw ConfigError("tau_a must be > 0");
  if (!(c.tau_l > 0.0)) throw ConfigError("tau_l must be > 0");
  if (c.dim < 1) throw ConfigError("dim must be >= 1");
  if (c.heads < 1 || c.dim % c.heads != 0) {
    throw ConfigError("dim " + std::to_string(c.dim) + " is not divisible by heads " +
                      std::to_string(c.heads));
  }
  if (c.lane_points < 1) throw ConfigError("lane_points must be >= 1");
  if (c.future_len < 3) throw ConfigError("future_len must be >= 3");
  if (!(c.braid_epsilon > 0.0)) throw ConfigError("braid_epsilon must be > 0");
}

nlohmann::json ToJson(const RefinerConfig& c) {
  return {{"iterations", c.iterations},
          {"tau_a", c.tau_a},
          {"tau_l", c.tau_l},
          {"dim", c.dim},
          {"heads", c.heads},
          {"topology_mode", TopologyModeName(c.topology_mode)},
          {"topology_update", c.topology_update},
          {"lane_points", c.lane_points},
          {"residual_norm", c.residual_norm},
          {"phi_norm", c.phi_norm},
          {"encoding", PositionalEncodingName(c.encoding)},
          {"future_len", c.future_len},
          {"braid_epsilon", c.braid_epsilon}};
}

RefinerConfig RefinerConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("refiner config must be an object");
  RequireKey(j, {"iterations", "tau_a", "tau_l", "dim", "heads", "topology_mode",
                 "topology_update", "lane_points", "residual_norm", "phi_norm", "encoding", "future_len",
                 "braid_epsilon"});
  RefinerConfig c;
  try {
    c.iterations = j.value("iterations", c.iterations);
    c.tau_a = j.value("tau_a", c.tau_a);
    c.tau_l = j.value("tau_l", c.tau_l);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    if (j.contains("topology_mode")) {
      c.topology_mode = ParseTopologyMode(j["topology_mode"].get<std::string>());
    }
    c.topology_update = j.value("topology_update", c.topology_update);
    c.lane_points = j.value("lane_points", c.lane_points);
    c.residual_norm = j.value("residual_norm", c.residual_norm);
    c.phi_norm = j.value("phi_norm", c.phi_norm);
    if (j.contains("encoding")) c.encoding = ParsePositionalEncoding(j["encoding"].get<std::string>());
    c.future_len = j.value("future_len", c.future_len);
    c.braid_epsilon = j.value("braid_epsilon", c.braid_epsilon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("refiner config: ") + e.what());
  }
  Validate(c);
  return c;
}

Tensor ModesToTensor(const ModeSet& modes) {
  Tensor y(modes.modes() * modes.agents(), 2 * modes.steps());
  for (size_t k = 0; k < modes.modes(); ++k) {
    for (size_t i = 0; i < modes.agents(); ++i) {
      const size_t row = k * modes.agents() + i;
      for (size_t t = 0; t < modes.steps(); ++t) {
        y(row, 2 * t) = modes.at(k, i, t).x;
        y(row, 2 * t + 1) = modes.at(k, i, t).y;
      }
    }
  }
  return y;
}

ModeSet TensorToModes(const Tensor& y, size_t modes, size_t agents) {
  if (y.rows() != modes * agents || y.cols() % 2 != 0) {
    throw ShapeError("trajectory tensor does not hold K x N rows of (x, y) pairs");
  }
  ModeSet out(modes, agents, y.cols() / 2);
  for (size_t k = 0; k < modes; ++k) {
    for (size_t i = 0; i < agents; ++i) {
      for (size_t t = 0; t < out.steps(); ++t) {
        out.at(k, i, t) = {y(k * agents + i, 2 * t), y(k * agents + i, 2 * t + 1)};
      }
    }
  }
  return out;
}

PreparedScene PrepareScene(const Scenario& scenario, const ModeSet& coarse,
                           const RefinerConfig& config) {
  Validate(config);
  Validate(scenario);
  Validate(coarse);
  const size_t n = scenario.agents.size();
  if (coarse.agents() != n) {
    throw ValidationError("scenario " + std::to_string(scenario.id) + " has " +
                          std::to_string(n) + " agents but its modes have " +
                          std::to_string(coarse.agents()));
  }
  if (coarse.steps() != config.future_len) {
    throw ValidationError("scenario " + std::to_string(scenario.id) + ": modes have " +
                          std::to_string(coarse.steps()) + " steps, refiner expects future_len " +
                          std::to_string(config.future_len));
  }
  PreparedScene s;
  s.modes = coarse.modes();
  s.agents = n;
  s.steps = coarse.steps();
  s.sample_rate = scenario.sample_rate;

  Vec2 mean{0.0, 0.0};
  for (const Agent& a : scenario.agents) {
    s.frames.push_back(FrameFromHistory(a.history));
    mean += s.frames.back().origin();
  }
  mean = mean * (1.0 / static_cast<double>(n));
  for (const LocalFrame& f : s.frames) s.centered_origins.push_back(f.origin() - mean);
  for (size_t k = 0; k < s.modes; ++k) {
    for (size_t i = 0; i < n; ++i) s.row_angles.push_back(s.frames[i].heading());
  }

  const size_t p = config.lane_points;
  for (const Lane& lane : scenario.lanes) {
    s.lanes.push_back(lane.centerline);
    s.lane_boxes.push_back(BoundingBox(lane.centerline));
  }
  s.lane_local = Tensor(n * s.lanes.size(), 2 * p);
  for (size_t i = 0; i < n; ++i) {
    for (size_t l = 0; l < s.lanes.size(); ++l) {
      const auto& line = s.lanes[l];
      for (size_t q = 0; q < p; ++q) {
        const size_t idx =
            p == 1 ? 0
                   : static_cast<size_t>(std::llround(static_cast<double>(q) *
                                                      static_cast<double>(line.size() - 1) /
                                                      static_cast<double>(p - 1)));
        const Vec2 local = s.frames[i].ToLocal(line[idx]);
        s.lane_local(i * s.lanes.size() + l, 2 * q) = local.x * kPositionScale;
        s.lane_local(i * s.lanes.size() + l, 2 * q + 1) = local.y * kPositionScale;
      }
    }
  }
  s.y0 = ModesToTensor(coarse);
  s.topology0 = std::make_shared<const SceneTopology>(ComputeTopology(s.y0, s, config));
  return s;
}

SceneTopology ComputeTopology(const Tensor& y, const PreparedScene& scene,
                              const RefinerConfig& config) {
  const size_t n = scene.agents;
  const size_t lanes = scene.lanes.size();
  const bool soft = config.topology_mode == TopologyMode::kSoftBraid;
  SceneTopology topo;
  topo.tt_offsets.push_back(0);
  topo.tl_offsets.push_back(0);
  std::vector<std::array<double, SoftBraidTT::kDim>> tt_rows;
  std::vector<std::array<double, SoftBraidTL::kDim>> tl_rows;

  for (size_t k = 0; k < scene.modes; ++k) {
    std::vector<std::vector<Vec2>> traj(n);
    std::vector<Kinematics> kin(n);
    for (size_t i = 0; i < n; ++i) {
      traj[i] = RowTrajectory(y, k * n + i);
      kin[i] = ComputeKinematics(traj[i], scene.sample_rate);
    }

    DistanceMatrix dist(n, n, 0.0);
    std::vector<SoftIntersection> si(n * n);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        si[i * n + j] = SoftIntersectionTT(traj[i], traj[j]);
        dist(i, j) = dist(j, i) = si[i * n + j].distance;
      }
    }
    const NeighborSet omega = Neighborhoods(dist, config.tau_a, NeighborKind::kAgents);
    for (size_t a = 0; a < n; ++a) {
      for (size_t b : omega[a]) {
        const size_t lo = std::min(a, b), hi = std::max(a, b);
        const SoftIntersection& inter = si[lo * n + hi];
        TtEdge e;
        e.query_row = k * n + a;
        e.key_row = k * n + b;
        e.time_index = inter.time_index;
        e.delta = traj[b][e.time_index] - traj[a][e.time_index];
        e.distance = inter.distance;
        e.angle_sign = a < b ? 1.0 : -1.0;
        topo.tt_edges.push_back(e);

        std::array<double, SoftBraidTT::kDim> row{};
        if (soft) {
          const auto [ij, ji] =
              SoftBraidTTPairAt(inter, kin[lo], kin[hi], scene.frames[lo], scene.frames[hi]);
          row = (a < b ? ij : ji).ToArray();
          for (size_t c = 0; c < row.size(); ++c) row[c] *= kTtFeatureScale[c];
        } else if (config.topology_mode == TopologyMode::kBraid) {
          const auto [ab, ba] = BraidCrossing(traj[a], traj[b], config.braid_epsilon);
          row[0] = ab ? 1.0 : 0.0;
          row[1] = ba ? 1.0 : 0.0;
        }
        tt_rows.push_back(row);
      }
      topo.tt_offsets.push_back(topo.tt_edges.size());
    }

    DistanceMatrix lane_dist(n, lanes, std::numeric_limits<double>::infinity());
    std::vector<SoftIntersection> lsi(n * lanes);
    std::vector<size_t> vertex(n * lanes, 0);
    for (size_t i = 0; i < n; ++i) {
      const auto box = BoundingBox(traj[i]);
      for (size_t l = 0; l < lanes; ++l) {
        // No vertex can lie within tau_l when the boxes are farther apart.
        if (BoxGap(box, scene.lane_boxes[l]) > config.tau_l * (1.0 + 1e-9)) continue;
        lsi[i * lanes + l] = SoftIntersectionTL(traj[i], scene.lanes[l], &vertex[i * lanes + l]);
        lane_dist(i, l) = lsi[i * lanes + l].distance;
      }
    }
    const NeighborSet omega_l = Neighborhoods(lane_dist, config.tau_l, NeighborKind::kLanes);
    for (size_t a = 0; a < n; ++a) {
      for (size_t l : omega_l[a]) {
        const SoftIntersection& inter = lsi[a * lanes + l];
        TlEdge e;
        e.query_row = k * n + a;
        e.lane = l;
        e.time_index = inter.time_index;
        e.delta = inter.p_other - inter.p_self;
        e.distance = inter.distance;
        topo.tl_edges.push_back(e);
        auto row = SoftBraidLaneAt(inter, kin[a], scene.frames[a]).ToArray();
        for (size_t c = 0; c < row.size(); ++c) row[c] *= kTlFeatureScale[c];
        tl_rows.push_back(row);
      }
      topo.tl_offsets.push_back(topo.tl_edges.size());
    }
  }

  topo.tt_features = Tensor(tt_rows.size(), SoftBraidTT::kDim);
  for (size_t e = 0; e < tt_rows.size(); ++e) {
    std::copy(tt_rows[e].begin(), tt_rows[e].end(), topo.tt_features.row(e).begin());
  }
  topo.tl_features = Tensor(tl_rows.size(), SoftBraidTL::kDim);
  for (size_t e = 0; e < tl_rows.size(); ++e) {
    std::copy(tl_rows[e].begin(), tl_rows[e].end(), topo.tl_features.row(e).begin());
  }
  return topo;
}

size_t EncoderInputWidth(const RefinerConfig& c) {
  const size_t per_coord = c.encoding == PositionalEncoding::kSinusoidal
                               ? 1 + 2 * kWavelengths.size()
                               : 1;
  return 3 + 2 * c.future_len * per_coord;
}

Refiner::Refiner(const RefinerConfig& config, const RefinerInit& init) : config_(config) {
  Validate(config_);
  Rng rng(init.seed);
  const size_t d = config_.dim;
  const nn::MhcaConfig attention{d, config_.heads, config_.residual_norm, config_.residual_norm};
  encoder_ = nn::MakeMlp3(store_, "encoder", EncoderInputWidth(config_), d, d, rng);
  for (size_t l = 0; l < config_.iterations; ++l) {
    const std::string p = "iter" + std::to_string(l) + ".";
    Iteration it;
    it.tt_phi = nn::MakeMlp3(store_, p + "tt_phi", SoftBraidTT::kDim, d, d, rng);
    if (config_.phi_norm) it.tt_phi_norm = nn::MakeLayerNorm(store_, p + "tt_phi_norm", d);
    it.tt_key_norm = nn::MakeLayerNorm(store_, p + "tt_key_norm", d);
    it.tt_attention = nn::MakeMhca(store_, p + "tt_attention", attention, rng);
    it.tl_phi = nn::MakeMlp3(store_, p + "tl_phi", 2 * config_.lane_points + SoftBraidTL::kDim,
                             d, d, rng);
    if (config_.phi_norm) it.tl_phi_norm = nn::MakeLayerNorm(store_, p + "tl_phi_norm", d);
    it.tl_attention = nn::MakeMhca(store_, p + "tl_attention", attention, rng);
    it.head = nn::MakeMlp3(store_, p + "head", d, d, 2 * config_.future_len, rng, init.zero_head);
    iterations_.push_back(it);
  }
}

void Refiner::ZeroHeads() {
  for (const Iteration& it : iterations_) {
    store_[it.head.l3.weight].value.Fill(0.0);
    store_[it.head.l3.bias].value.Fill(0.0);
  }
}

Tensor Refiner::EncoderInput(const PreparedScene& scene) const {
  const size_t width = EncoderInputWidth(config_);
  const bool sinusoidal = config_.encoding == PositionalEncoding::kSinusoidal;
  Tensor x(scene.modes * scene.agents, width);
  for (size_t k = 0; k < scene.modes; ++k) {
    for (size_t i = 0; i < scene.agents; ++i) {
      const size_t row = k * scene.agents + i;
      auto out = x.row(row);
      size_t c = 0;
      out[c++] = scene.centered_origins[i].x * kPositionScale;
      out[c++] = scene.centered_origins[i].y * kPositionScale;
      out[c++] = scene.frames[i].heading();
      for (size_t t = 0; t < scene.steps; ++t) {
        const Vec2 local =
            scene.frames[i].ToLocal({scene.y0(row, 2 * t), scene.y0(row, 2 * t + 1)});
        for (double v : {local.x, local.y}) {
          out[c++] = v * kPositionScale;
          if (!sinusoidal) continue;
          // Bands halve the wavelength, so each follows by angle doubling.
          double sn = std::sin(2.0 * std::numbers::pi * v / kWavelengths[0]);
          double cs = std::cos(2.0 * std::numbers::pi * v / kWavelengths[0]);
          for (size_t band = 0; band < kWavelengths.size(); ++band) {
            out[c++] = sn;
            out[c++] = cs;
            const double next_sn = 2.0 * sn * cs;
            cs = cs * cs - sn * sn;
            sn = next_sn;
          }
        }
      }
    }
  }
  return x;
}

std::vector<ad::Var> Refiner::Forward(nn::Binding& b, const PreparedScene& scene) const {
  if (scene.steps != config_.future_len) {
    throw ShapeError("scene has " + std::to_string(scene.steps) + " future steps, refiner expects " +
                     std::to_string(config_.future_len));
  }
  ad::Tape& tape = b.tape();
  ad::Var f = nn::Forward(b, encoder_, tape.Constant(EncoderInput(scene)));
  ad::Var y = tape.Constant(scene.y0);
  std::shared_ptr<const SceneTopology> topo = scene.topology0;
  std::vector<ad::Var> outputs;

  for (size_t l = 0; l < iterations_.size(); ++l) {
    const Iteration& it = iterations_[l];
    // Otherwise the cached topology of the constant Y0 is reused.
    const bool live = l > 0 && config_.topology_update;
    if (live) topo = std::make_shared<const SceneTopology>(ComputeTopology(y.value(), scene, config_));

    std::vector<size_t> key_rows;
    key_rows.reserve(topo->tt_edges.size());
    for (const TtEdge& e : topo->tt_edges) key_rows.push_back(e.key_row);
    ad::Var keys = ad::GatherRows(f, key_rows);
    if (config_.topology_mode != TopologyMode::kNone) {
      const ad::Var features = live ? TtFeatureVar(tape, y, topo, scene, config_)
                                    : tape.Constant(topo->tt_features);
      ad::Var encoded = nn::Forward(b, it.tt_phi, features);
      if (it.tt_phi_norm) encoded = nn::Forward(b, *it.tt_phi_norm, encoded);
      keys = ad::Add(keys, encoded);
    }
    if (config_.residual_norm) keys = nn::Forward(b, it.tt_key_norm, keys);
    f = nn::Forward(b, it.tt_attention, f, keys, keys, topo->tt_offsets);

    Tensor lane_part(topo->tl_edges.size(), 2 * config_.lane_points);
    for (size_t e = 0; e < topo->tl_edges.size(); ++e) {
      const TlEdge& edge = topo->tl_edges[e];
      const auto src =
          scene.lane_local.row((edge.query_row % scene.agents) * scene.lanes.size() + edge.lane);
      std::copy(src.begin(), src.end(), lane_part.row(e).begin());
    }
    const ad::Var lane_features =
        live ? TlFeatureVar(tape, y, topo, scene) : tape.Constant(topo->tl_features);
    const ad::Var lane_in[] = {tape.Constant(std::move(lane_part)), lane_features};
    ad::Var lane_keys = nn::Forward(b, it.tl_phi, ad::ConcatCols(lane_in));
    if (it.tl_phi_norm) lane_keys = nn::Forward(b, *it.tl_phi_norm, lane_keys);
    f = nn::Forward(b, it.tl_attention, f, lane_keys, lane_keys, topo->tl_offsets);

    const ad::Var offsets = ad::RotatePoints(nn::Forward(b, it.head, f), scene.row_angles);
    y = ad::Add(y, offsets);
    outputs.push_back(y);
  }
  return outputs;
}

std::vector<ModeSet> Refiner::Refine(const PreparedScene& scene) const {
  ad::Tape tape;
  nn::Binding binding(tape, store_, nullptr);
  std::vector<ModeSet> out;
  for (const ad::Var& y : Forward(binding, scene)) {
    out.push_back(TensorToModes(y.value(), scene.modes, scene.agents));
  }
  return out;
}

ParameterArchive Refiner::ToArchive() const {
  ParameterArchive archive;
  archive.metadata["refiner"] = ToJson(config_);
  for (const auto& p : store_) archive.arrays.emplace_back(p.name, p.value);
  return archive;
}

Refiner Refiner::FromArchive(const ParameterArchive& archive) {
  if (!archive.metadata.contains("refiner")) {
    throw ParseError("checkpoint metadata lacks the refiner config");
  }
  RefinerConfig config;
  try {
    config = RefinerConfigFromJson(archive.metadata["refiner"]);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  Refiner refiner(config, {0, false});
  for (auto& p : refiner.store_) {
    const Tensor* stored = archive.Find(p.name);
    if (stored == nullptr) throw ParseError("checkpoint lacks parameter " + p.name);
    if (!stored->SameShape(p.value)) {
      throw ParseError("checkpoint parameter " + p.name + " has shape " +
                       std::to_string(stored->rows()) + "x" + std::to_string(stored->cols()) +
                       ", expected " + std::to_string(p.value.rows()) + "x" +
                       std::to_string(p.value.cols()));
    }
    p.value = *stored;
  }
  return refiner;
}

}  // namespace sbr
