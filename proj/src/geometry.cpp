#include "sbr/geometry.hpp"

#include <map>
#include <string>

#include "sbr/errors.hpp"

namespace sbr {

namespace {

constexpr double kDegenerateDisplacement = 1e-6;

void RequireLength(size_t length, size_t minimum, const char* what) {
  if (length < minimum) {
    throw InvalidInputError(std::string(what) + " needs at least " + std::to_string(minimum) +
                            " samples, got " + std::to_string(length));
  }
}

}  // namespace

double WrapAngle(double angle) {
  constexpr double kPi = std::numbers::pi;
  double wrapped = std::remainder(angle, 2.0 * kPi);  // [-pi, pi]
  if (wrapped <= -kPi) wrapped += 2.0 * kPi;
  return wrapped;
}

Vec2 Rotate(const Vec2& v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

LocalFrame::LocalFrame(Vec2 origin, double heading)
    : origin_(origin), heading_(WrapAngle(heading)) {}

Vec2 LocalFrame::ToLocal(const Vec2& point) const { return VectorToLocal(point - origin_); }

Vec2 LocalFrame::FromLocal(const Vec2& point) const { return VectorFromLocal(point) + origin_; }

Vec2 LocalFrame::VectorToLocal(const Vec2& v) const {
  const double c = std::cos(heading_);
  const double s = std::sin(heading_);
  return {v.x * c + v.y * s, -v.x * s + v.y * c};
}

Vec2 LocalFrame::VectorFromLocal(const Vec2& v) const {
  const double c = std::cos(heading_);
  const double s = std::sin(heading_);
  return {v.x * c - v.y * s, v.x * s + v.y * c};
}

Trajectory::Trajectory(std::vector<Vec2> points, double sample_rate)
    : points_(std::move(points)), sample_rate_(sample_rate) {
  RequireLength(points_.size(), 2, "trajectory");
  if (!(sample_rate_ > 0.0) || !std::isfinite(sample_rate_)) {
    throw InvalidInputError("trajectory sample_rate must be positive and finite");
  }
  for (size_t t = 0; t < points_.size(); ++t) {
    if (!IsFinite(points_[t])) {
      throw InvalidInputError("trajectory point " + std::to_string(t) + " is not finite");
    }
  }
}

Stencil VelocityStencil(size_t length, size_t t, double sample_rate) {
  RequireLength(length, 2, "velocity");
  const double r = sample_rate;
  if (length == 2) return {{0, -r}, {1, r}};
  if (t == 0) return {{0, -1.5 * r}, {1, 2.0 * r}, {2, -0.5 * r}};
  if (t == length - 1) {
    return {{length - 3, 0.5 * r}, {length - 2, -2.0 * r}, {length - 1, 1.5 * r}};
  }
  return {{t - 1, -0.5 * r}, {t + 1, 0.5 * r}};
}

Stencil AccelerationStencil(size_t length, size_t t, double sample_rate) {
  RequireLength(length, 3, "acceleration");
  std::map<size_t, double> merged;
  for (const auto& [u, wu] : VelocityStencil(length, t, sample_rate)) {
    for (const auto& [s, ws] : VelocityStencil(length, u, sample_rate)) merged[s] += wu * ws;
  }
  return {merged.begin(), merged.end()};
}

LocalFrame FrameFromHistory(std::span<const Vec2> history) {
  RequireLength(history.size(), 2, "history");
  const Vec2 origin = history.back();
  for (size_t t = history.size() - 1; t > 0; --t) {
    const Vec2 d = history[t] - history[t - 1];
    if (Norm(d) >= kDegenerateDisplacement) return LocalFrame(origin, std::atan2(d.y, d.x));
  }
  return LocalFrame(origin, 0.0);
}

namespace {

std::vector<Vec2> ApplyDerivative(std::span<const Vec2> points, double sample_rate) {
  std::vector<Vec2> out(points.size());
  for (size_t t = 0; t < points.size(); ++t) {
    Vec2 acc;
    for (const auto& [s, w] : VelocityStencil(points.size(), t, sample_rate)) acc += points[s] * w;
    out[t] = acc;
  }
  return out;
}

}  // namespace

std::vector<Vec2> Velocity(std::span<const Vec2> points, double sample_rate) {
  RequireLength(points.size(), 2, "velocity");
  return ApplyDerivative(points, sample_rate);
}

Kinematics ComputeKinematics(std::span<const Vec2> points, double sample_rate) {
  RequireLength(points.size(), 3, "kinematics");
  Kinematics k;
  k.velocity = ApplyDerivative(points, sample_rate);
  k.acceleration = ApplyDerivative(k.velocity, sample_rate);
  return k;
}

}  // namespace sbr
