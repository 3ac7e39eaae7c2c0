#include "sbr/topology.hpp"

#include <cmath>
#include <string>

#include "sbr/errors.hpp"

namespace sbr {

namespace {

double ConnectingAngle(const Vec2& from, const Vec2& to, double distance) {
  if (distance < kZeroDistance) return 0.0;
  const Vec2 d = to - from;
  return std::atan2(d.y, d.x);
}

void RequireKinematics(const Kinematics& kin, size_t length, const char* who) {
  if (kin.velocity.size() != length || kin.acceleration.size() != length) {
    throw InvalidInputError(std::string(who) + ": kinematics length does not match trajectory");
  }
}

}  // namespace

SoftIntersection SoftIntersectionTT(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j) {
  if (traj_i.size() != traj_j.size()) {
    throw InvalidInputError("soft intersection needs equal-length trajectories (" +
                            std::to_string(traj_i.size()) + " vs " +
                            std::to_string(traj_j.size()) + ")");
  }
  if (traj_i.empty()) throw InvalidInputError("soft intersection of empty trajectories");
  SoftIntersection best;
  best.distance = Norm(traj_j[0] - traj_i[0]);
  for (size_t t = 1; t < traj_i.size(); ++t) {
    const double d = Norm(traj_j[t] - traj_i[t]);
    if (d < best.distance) {
      best.distance = d;
      best.time_index = t;
    }
  }
  best.p_self = traj_i[best.time_index];
  best.p_other = traj_j[best.time_index];
  best.angle_global = ConnectingAngle(best.p_self, best.p_other, best.distance);
  return best;
}

SoftIntersection SoftIntersectionTL(std::span<const Vec2> traj, std::span<const Vec2> lane,
                                    size_t* nearest_vertex) {
  if (lane.empty()) throw InvalidInputError("lane polyline has no vertices");
  if (traj.empty()) throw InvalidInputError("soft intersection of an empty trajectory");
  // Scanned on squared distances; sqrt is monotone so the argmin is the same
  // up to ties that only exist after rounding.
  SoftIntersection best;
  size_t best_vertex = 0;
  auto sq = [](const Vec2& d) { return d.x * d.x + d.y * d.y; };
  double best_sq = sq(lane[0] - traj[0]);
  for (size_t t = 0; t < traj.size(); ++t) {
    const Vec2 p = traj[t];
    for (size_t v = 0; v < lane.size(); ++v) {
      const double d = sq(lane[v] - p);
      if (d < best_sq) {
        best_sq = d;
        best.time_index = t;
        best_vertex = v;
      }
    }
  }
  best.distance = Norm(lane[best_vertex] - traj[best.time_index]);
  best.p_self = traj[best.time_index];
  best.p_other = lane[best_vertex];
  best.angle_global = ConnectingAngle(best.p_self, best.p_other, best.distance);
  if (nearest_vertex != nullptr) *nearest_vertex = best_vertex;
  return best;
}

std::pair<SoftBraidTT, SoftBraidTT> SoftBraidTTPair(std::span<const Vec2> traj_i,
                                                    std::span<const Vec2> traj_j,
                                                    const Kinematics& kin_i,
                                                    const Kinematics& kin_j,
                                                    const LocalFrame& frame_i,
                                                    const LocalFrame& frame_j) {
  const SoftIntersection si = SoftIntersectionTT(traj_i, traj_j);
  RequireKinematics(kin_i, traj_i.size(), "soft braid");
  RequireKinematics(kin_j, traj_j.size(), "soft braid");
  return SoftBraidTTPairAt(si, kin_i, kin_j, frame_i, frame_j);
}

std::pair<SoftBraidTT, SoftBraidTT> SoftBraidTTPairAt(const SoftIntersection& si,
                                                      const Kinematics& kin_i,
                                                      const Kinematics& kin_j,
                                                      const LocalFrame& frame_i,
                                                      const LocalFrame& frame_j) {
  const size_t t = si.time_index;
  const bool degenerate = si.distance < kZeroDistance;

  SoftBraidTT ij;
  ij.v_self = frame_i.VectorToLocal(kin_i.velocity[t]);
  ij.v_other = frame_i.VectorToLocal(kin_j.velocity[t]);
  ij.a_self = frame_i.VectorToLocal(kin_i.acceleration[t]);
  ij.a_other = frame_i.VectorToLocal(kin_j.acceleration[t]);
  ij.distance = si.distance;
  ij.angle = degenerate ? 0.0 : frame_i.AngleToLocal(si.angle_global);

  SoftBraidTT ji;
  ji.v_self = frame_j.VectorToLocal(kin_j.velocity[t]);
  ji.v_other = frame_j.VectorToLocal(kin_i.velocity[t]);
  ji.a_self = frame_j.VectorToLocal(kin_j.acceleration[t]);
  ji.a_other = frame_j.VectorToLocal(kin_i.acceleration[t]);
  ji.distance = si.distance;
  ji.angle = degenerate ? 0.0 : -frame_j.AngleToLocal(si.angle_global);
  return {ij, ji};
}

SoftBraidTL SoftBraidLane(std::span<const Vec2> traj, std::span<const Vec2> lane,
                          const Kinematics& kin, const LocalFrame& frame) {
  const SoftIntersection si = SoftIntersectionTL(traj, lane);
  RequireKinematics(kin, traj.size(), "lane soft braid");
  return SoftBraidLaneAt(si, kin, frame);
}

SoftBraidTL SoftBraidLaneAt(const SoftIntersection& si, const Kinematics& kin,
                            const LocalFrame& frame) {
  SoftBraidTL out;
  out.v = frame.VectorToLocal(kin.velocity[si.time_index]);
  out.a = frame.VectorToLocal(kin.acceleration[si.time_index]);
  out.distance = si.distance;
  out.angle = si.distance < kZeroDistance ? 0.0 : frame.AngleToLocal(si.angle_global);
  return out;
}

std::pair<bool, bool> BraidCrossing(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j,
                                    double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidInputError("braid crossing epsilon must be positive");
  if (traj_i.size() != traj_j.size()) {
    throw InvalidInputError("braid crossing needs equal-length trajectories");
  }
  const size_t n = traj_i.size();
  auto first_reaches = [&](std::span<const Vec2> a, std::span<const Vec2> b) {
    for (size_t ta = 1; ta < n; ++ta) {
      for (size_t tb = ta + 1; tb < n; ++tb) {
        if (Norm(a[ta] - b[tb]) < epsilon) return true;
      }
    }
    return false;
  };
  return {first_reaches(traj_i, traj_j), first_reaches(traj_j, traj_i)};
}

NeighborSet Neighborhoods(const DistanceMatrix& distances, double tau, NeighborKind kind) {
  if (kind == NeighborKind::kAgents && distances.rows != distances.cols) {
    throw InvalidInputError("agent neighborhoods need a square distance matrix");
  }
  NeighborSet out(distances.rows);
  for (size_t i = 0; i < distances.rows; ++i) {
    for (size_t j = 0; j < distances.cols; ++j) {
      if (kind == NeighborKind::kAgents && i == j) continue;
      if (distances(i, j) <= tau) out[i].push_back(j);
    }
  }
  return out;
}

}  // namespace sbr
