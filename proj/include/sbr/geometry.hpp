#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace sbr {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

inline double Norm(const Vec2& v) { return std::sqrt(v.x * v.x + v.y * v.y); }
inline bool IsFinite(const Vec2& v) { return std::isfinite(v.x) && std::isfinite(v.y); }

// Wraps an angle into (-pi, pi].
double WrapAngle(double angle);

// Rotates v counter-clockwise by `angle`.
Vec2 Rotate(const Vec2& v, double angle);

// Agent-centric frame anchored at the end of the observed history.
class LocalFrame {
 public:
  LocalFrame() = default;
  LocalFrame(Vec2 origin, double heading);

  const Vec2& origin() const { return origin_; }
  double heading() const { return heading_; }

  // Row-vector form (p - O) * [[cos, -sin], [sin, cos]].
  Vec2 ToLocal(const Vec2& point) const;
  Vec2 FromLocal(const Vec2& point) const;
  // Free vectors (velocity, acceleration) rotate but do not translate.
  Vec2 VectorToLocal(const Vec2& v) const;
  Vec2 VectorFromLocal(const Vec2& v) const;
  double AngleToLocal(double angle) const { return WrapAngle(angle - heading_); }

 private:
  Vec2 origin_;
  double heading_ = 0.0;
};

// A uniformly sampled 2-D track in meters.
class Trajectory {
 public:
  Trajectory() = default;
  // Throws InvalidInputError when fewer than two points, a non-finite
  // coordinate, or a non-positive sample rate is supplied.
  Trajectory(std::vector<Vec2> points, double sample_rate);

  std::span<const Vec2> points() const { return points_; }
  size_t size() const { return points_.size(); }
  double sample_rate() const { return sample_rate_; }
  const Vec2& operator[](size_t t) const { return points_[t]; }

 private:
  std::vector<Vec2> points_;
  double sample_rate_ = 1.0;
};

struct Kinematics {
  std::vector<Vec2> velocity;      // m/s
  std::vector<Vec2> acceleration;  // m/s^2
};

// Sparse linear weights of a derivative estimate at one sample.
using Stencil = std::vector<std::pair<size_t, double>>;

// Weights w such that velocity(t) = sum_s w_s * y(s). Central differences in
// the interior, second-order one-sided differences at the endpoints (first
// order when only two samples exist). Scaled by `sample_rate`.
Stencil VelocityStencil(size_t length, size_t t, double sample_rate);
// Weights such that acceleration(t) = sum_s w_s * y(s): the velocity scheme
// applied twice.
Stencil AccelerationStencil(size_t length, size_t t, double sample_rate);

LocalFrame FrameFromHistory(std::span<const Vec2> history);
inline LocalFrame FrameFromHistory(const Trajectory& history) {
  return FrameFromHistory(history.points());
}

// Requires at least two points.
std::vector<Vec2> Velocity(std::span<const Vec2> points, double sample_rate);
// Requires at least three points.
Kinematics ComputeKinematics(std::span<const Vec2> points, double sample_rate);
inline Kinematics ComputeKinematics(const Trajectory& traj) {
  return ComputeKinematics(traj.points(), traj.sample_rate());
}

}  // namespace sbr
