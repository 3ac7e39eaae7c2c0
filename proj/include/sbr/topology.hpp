#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "sbr/geometry.hpp"

namespace sbr {

// Below this separation the connecting-line angle is defined as zero.
inline constexpr double kZeroDistance = 1e-9;
// Default vehicle-width threshold for hard braid crossings.
inline constexpr double kDefaultBraidEpsilon = 2.0;

// Closest same-time approach of two trajectories, or closest approach of a
// trajectory to a lane vertex.
struct SoftIntersection {
  size_t time_index = 0;
  Vec2 p_self;
  Vec2 p_other;
  double distance = 0.0;
  double angle_global = 0.0;
};

// Topology of trajectory j as seen from agent i, in agent i's frame.
struct SoftBraidTT {
  static constexpr size_t kDim = 10;
  Vec2 v_self;
  Vec2 v_other;
  Vec2 a_self;
  Vec2 a_other;
  double distance = 0.0;
  double angle = 0.0;

  std::array<double, kDim> ToArray() const {
    return {v_self.x, v_self.y, v_other.x, v_other.y, a_self.x,
            a_self.y, a_other.x, a_other.y, distance,  angle};
  }
};

// Topology of a lane as seen from agent i, in agent i's frame.
struct SoftBraidTL {
  static constexpr size_t kDim = 6;
  Vec2 v;
  Vec2 a;
  double distance = 0.0;
  double angle = 0.0;

  std::array<double, kDim> ToArray() const { return {v.x, v.y, a.x, a.y, distance, angle}; }
};

// Argmin over t of |a(t) - b(t)|; ties go to the smallest t. Throws
// InvalidInputError for mismatched or empty inputs.
SoftIntersection SoftIntersectionTT(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j);

// Argmin over (t, vertex) of |traj(t) - lane[vertex]|; ties go to the
// smallest t, then the smallest vertex. `nearest_vertex` receives the
// minimizing vertex index when non-null.
SoftIntersection SoftIntersectionTL(std::span<const Vec2> traj, std::span<const Vec2> lane,
                                    size_t* nearest_vertex = nullptr);

// Returns (i <- j, j <- i). The j <- i angle carries the sign flip of the
// reverse-direction record, and both share the pair distance.
std::pair<SoftBraidTT, SoftBraidTT> SoftBraidTTPair(std::span<const Vec2> traj_i,
                                                    std::span<const Vec2> traj_j,
                                                    const Kinematics& kin_i,
                                                    const Kinematics& kin_j,
                                                    const LocalFrame& frame_i,
                                                    const LocalFrame& frame_j);

SoftBraidTL SoftBraidLane(std::span<const Vec2> traj, std::span<const Vec2> lane,
                          const Kinematics& kin, const LocalFrame& frame);

// Same records from an already computed soft intersection (of i and j, or of
// the trajectory and a lane).
std::pair<SoftBraidTT, SoftBraidTT> SoftBraidTTPairAt(const SoftIntersection& si,
                                                      const Kinematics& kin_i,
                                                      const Kinematics& kin_j,
                                                      const LocalFrame& frame_i,
                                                      const LocalFrame& frame_j);
SoftBraidTL SoftBraidLaneAt(const SoftIntersection& si, const Kinematics& kin,
                            const LocalFrame& frame);

// Hard braid relation: first = sigma(i <- j), second = sigma(j <- i).
// sigma(i <- j) = 1 iff some 0 < t_i < t_j < T has |y_i(t_i) - y_j(t_j)| < eps.
std::pair<bool, bool> BraidCrossing(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j,
                                    double epsilon = kDefaultBraidEpsilon);

// Row-major dense distance matrix (queries x candidates).
struct DistanceMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> values;

  DistanceMatrix() = default;
  DistanceMatrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  double& operator()(size_t r, size_t c) { return values[r * cols + c]; }
  double operator()(size_t r, size_t c) const { return values[r * cols + c]; }
};

using NeighborSet = std::vector<std::vector<size_t>>;

enum class NeighborKind {
  kAgents,  // square matrix, self excluded
  kLanes,   // rectangular matrix, every candidate eligible
};

// For each query row, the ascending list of candidates with distance <= tau.
NeighborSet Neighborhoods(const DistanceMatrix& distances, double tau, NeighborKind kind);

}  // namespace sbr
