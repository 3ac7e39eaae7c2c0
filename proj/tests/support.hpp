#pragma once

// Oracles and fixtures shared by the unit and acceptance tests. The oracles
// are deliberately naive re-derivations, not calls into the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sbr/autodiff.hpp"
#include "sbr/geometry.hpp"
#include "sbr/random.hpp"
#include "sbr/refiner.hpp"
#include "sbr/scenario.hpp"
#include "sbr/tensor.hpp"
#include "sbr/training.hpp"

namespace sbr::test {

// Relative error with a floor on the denominator so that components whose
// true gradient is ~0 are judged by absolute error instead.
inline constexpr double kGradFloor = 1e-4;

inline double RelativeError(double a, double b, double floor = kGradFloor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct BruteClosest {
  size_t t = 0;
  double distance = std::numeric_limits<double>::infinity();
};

inline BruteClosest BruteSameTime(std::span<const Vec2> a, std::span<const Vec2> b) {
  BruteClosest best;
  for (size_t t = 0; t < a.size(); ++t) {
    const double dx = b[t].x - a[t].x;
    const double dy = b[t].y - a[t].y;
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d < best.distance) best = {t, d};
  }
  return best;
}

// sigma(a <- b): some 0 < ta < tb < T with |a(ta) - b(tb)| < eps.
inline bool BruteBraid(std::span<const Vec2> a, std::span<const Vec2> b, double eps) {
  for (size_t ta = 1; ta < a.size(); ++ta) {
    for (size_t tb = ta + 1; tb < b.size(); ++tb) {
      const double dx = a[ta].x - b[tb].x;
      const double dy = a[ta].y - b[tb].y;
      if (std::sqrt(dx * dx + dy * dy) < eps) return true;
    }
  }
  return false;
}

// Random walk with bounded steps inside a box, so pairs of walks both meet
// and miss each other often.
inline std::vector<Vec2> RandomWalk(Rng& rng, size_t length, double box, double step) {
  std::vector<Vec2> out(length);
  Vec2 p{rng.Uniform(-box, box), rng.Uniform(-box, box)};
  for (auto& q : out) {
    q = p;
    p += Vec2{rng.Uniform(-step, step), rng.Uniform(-step, step)};
  }
  return out;
}

// Smooth track: constant-acceleration arc with random heading and speed.
inline std::vector<Vec2> RandomSmoothTrack(Rng& rng, size_t length, double rate, Vec2 start) {
  const double heading = rng.Uniform(-3.1, 3.1);
  const double speed = rng.Uniform(2.0, 12.0);
  const double accel = rng.Uniform(-2.0, 2.0);
  const double turn = rng.Uniform(-0.2, 0.2);
  std::vector<Vec2> out(length);
  for (size_t t = 0; t < length; ++t) {
    const double s = static_cast<double>(t) / rate;
    const double h = heading + turn * s;
    const double dist = speed * s + 0.5 * accel * s * s;
    out[t] = start + Vec2{std::cos(h), std::sin(h)} * dist;
  }
  return out;
}

struct Rigid {
  double angle = 0.0;
  Vec2 shift;
  Vec2 operator()(const Vec2& p) const { return Rotate(p, angle) + shift; }
};

inline Scenario Transform(const Scenario& s, const Rigid& r) {
  Scenario out = s;
  for (Agent& a : out.agents) {
    for (Vec2& p : a.history) p = r(p);
    for (Vec2& p : a.future) p = r(p);
  }
  for (Lane& l : out.lanes) {
    for (Vec2& p : l.centerline) p = r(p);
  }
  return out;
}

inline ModeSet Transform(const ModeSet& m, const Rigid& r) {
  ModeSet out = m;
  for (size_t k = 0; k < m.modes(); ++k) {
    for (size_t i = 0; i < m.agents(); ++i) {
      for (size_t t = 0; t < m.steps(); ++t) out.at(k, i, t) = r(m.at(k, i, t));
    }
  }
  return out;
}

// Small hand-built scene: agents on crossing straight lines near the origin
// plus straight lanes under each of them.
inline Scenario TinyScenario(Rng& rng, size_t agents, size_t history, size_t future,
                             double spread = 15.0) {
  Scenario s;
  s.id = 7;
  s.archetype = "crossing";
  s.sample_rate = 10.0;
  s.history_len = history;
  s.future_len = future;
  for (size_t i = 0; i < agents; ++i) {
    const Vec2 start{rng.Uniform(-spread, spread), rng.Uniform(-spread, spread)};
    const auto track = RandomSmoothTrack(rng, history + future, s.sample_rate, start);
    Agent a;
    a.id = static_cast<int64_t>(i);
    a.history.assign(track.begin(), track.begin() + history);
    a.future.assign(track.begin() + history, track.end());
    s.agents.push_back(a);
    Lane lane;
    lane.id = static_cast<int64_t>(i);
    lane.tag = "through";
    for (size_t t = 0; t < track.size(); t += 2) {
      lane.centerline.push_back(track[t] + Vec2{rng.Uniform(-0.5, 0.5), rng.Uniform(-0.5, 0.5)});
    }
    s.lanes.push_back(lane);
  }
  return s;
}

// Coarse-like modes: the true future plus per-mode drift and noise.
inline ModeSet NoisyModes(Rng& rng, const Scenario& s, size_t modes, double sigma = 0.5) {
  ModeSet m(modes, s.agents.size(), s.future_len);
  for (size_t k = 0; k < modes; ++k) {
    for (size_t i = 0; i < s.agents.size(); ++i) {
      const Vec2 drift{rng.Uniform(-0.3, 0.3), rng.Uniform(-0.3, 0.3)};
      for (size_t t = 0; t < s.future_len; ++t) {
        m.at(k, i, t) = s.agents[i].future[t] + drift * static_cast<double>(t) +
                        Vec2{rng.Normal(0.0, sigma), rng.Normal(0.0, sigma)};
      }
    }
  }
  return m;
}

inline Tensor RandomTensor(Rng& rng, size_t rows, size_t cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.Uniform(-scale, scale);
  return t;
}

using ScalarFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

// Max relative error between the tape gradient of fn and central differences
// with respect to every element of every input.
inline double MaxGradError(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                           double h = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.Leaf(t));
  tape.Backward(fn(tape, leaves));

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    ad::Tape t;
    std::vector<ad::Var> ls;
    for (const Tensor& x : xs) ls.push_back(t.Constant(x));
    return fn(t, ls).value()(0, 0);
  };
  double worst = 0.0;
  std::vector<Tensor> work = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& g = tape.Grad(leaves[i]);
    for (size_t e = 0; e < inputs[i].size(); ++e) {
      const double x0 = inputs[i].data()[e];
      work[i].data()[e] = x0 + h;
      const double up = evaluate(work);
      work[i].data()[e] = x0 - h;
      const double down = evaluate(work);
      work[i].data()[e] = x0;
      const double fd = (up - down) / (2.0 * h);
      const double analytic = g.empty() ? 0.0 : g.data()[e];
      worst = std::max(worst, RelativeError(analytic, fd));
    }
  }
  return worst;
}

// u^T x v with fixed pseudo-random u, v: a scalar that depends on every
// entry of x without symmetric cancellations.
inline ad::Var Bilinear(ad::Tape& tape, ad::Var x, uint64_t seed = 99) {
  Rng rng(seed);
  const ad::Var u = tape.Constant(RandomTensor(rng, 1, x.rows()));
  const ad::Var v = tape.Constant(RandomTensor(rng, x.cols(), 1));
  return ad::MatMul(ad::MatMul(u, x), v);
}

// Max relative error of d(total loss)/d(params) of the unrolled refiner
// against central differences, over every parameter scalar.
inline double RefinerGradError(Refiner& refiner, const PreparedScene& scene, const Tensor& truth,
                               double h = 1e-6) {
  nn::ParameterStore& store = refiner.params();
  auto loss = [&](nn::Binding& b) {
    const auto outputs = refiner.Forward(b, scene);
    return TotalLossVar(outputs, truth, scene.modes, 1.0);
  };
  std::vector<Tensor> grads = store.ZeroLike();
  {
    ad::Tape tape;
    nn::Binding b(tape, store, &grads);
    tape.Backward(loss(b));
  }
  auto evaluate = [&] {
    ad::Tape tape;
    nn::Binding b(tape, store, nullptr);
    return loss(b).value()(0, 0);
  };
  double worst = 0.0;
  for (size_t p = 0; p < store.size(); ++p) {
    for (size_t e = 0; e < store[p].value.size(); ++e) {
      double& x = store[p].value.data()[e];
      const double x0 = x;
      x = x0 + h;
      const double up = evaluate();
      x = x0 - h;
      const double down = evaluate();
      x = x0;
      worst = std::max(worst, RelativeError(grads[p].data()[e], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

// Zero-initialized biases put a ReLU exactly on its kink whenever a hidden
// row is all zero, where central differences see the half slope. Shifting
// every bias moves the check to a generic point.
inline void JitterBiases(nn::ParameterStore& store, uint64_t seed, double scale = 0.1) {
  Rng rng(seed);
  for (auto& p : store) {
    if (!p.name.ends_with(".bias")) continue;
    for (double& v : p.value.values()) v += rng.Uniform(-scale, scale);
  }
}

// The tiny gradient-check instance: N=3, K=2, T=10, D=8, I=2, random head.
struct TinyRefinerCase {
  Scenario scenario;
  ModeSet coarse;
  RefinerConfig config;
  Tensor truth;

  explicit TinyRefinerCase(uint64_t seed) {
    Rng rng(seed);
    scenario = TinyScenario(rng, 3, 10, 10, 6.0);
    coarse = NoisyModes(rng, scenario, 2);
    config.iterations = 2;
    config.dim = 8;
    config.heads = 2;
    config.future_len = 10;
    config.lane_points = 4;
    truth = Tensor(3, 20);
    for (size_t i = 0; i < 3; ++i) {
      for (size_t t = 0; t < 10; ++t) {
        truth(i, 2 * t) = scenario.agents[i].future[t].x;
        truth(i, 2 * t + 1) = scenario.agents[i].future[t].y;
      }
    }
  }
};

}  // namespace sbr::test
