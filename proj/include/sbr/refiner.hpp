#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sbr/archive.hpp"
#include "sbr/autodiff.hpp"
#include "sbr/nn.hpp"
#include "sbr/scenario.hpp"
#include "sbr/topology.hpp"

namespace sbr {

enum class TopologyMode { kSoftBraid, kBraid, kNone };
enum class PositionalEncoding { kSinusoidal, kRaw };

std::string_view TopologyModeName(TopologyMode m);
TopologyMode ParseTopologyMode(std::string_view name);
std::string_view PositionalEncodingName(PositionalEncoding p);
PositionalEncoding ParsePositionalEncoding(std::string_view name);

struct RefinerConfig {
  size_t iterations = 3;
  double tau_a = 50.0;  // m
  double tau_l = 10.0;  // m
  size_t dim = 64;
  size_t heads = 8;
  TopologyMode topology_mode = TopologyMode::kSoftBraid;
  bool topology_update = true;
  size_t lane_points = 10;
  // Residual + layer norm around attention blocks and the key additions.
  bool residual_norm = true;
  // Layer norm on the phi encodings of topology features and lane keys.
  bool phi_norm = false;
  PositionalEncoding encoding = PositionalEncoding::kSinusoidal;
  size_t future_len = 30;  // parameter shapes depend on it
  double braid_epsilon = kDefaultBraidEpsilon;
};

// Throws ConfigError naming the offending field.
void Validate(const RefinerConfig& config);
nlohmann::json ToJson(const RefinerConfig& config);
// Missing keys keep their defaults; unknown keys throw ConfigError.
RefinerConfig RefinerConfigFromJson(const nlohmann::json& j);

// Directed trajectory-trajectory edge: query agent a attends to key agent b
// within one mode.
struct TtEdge {
  size_t query_row = 0;  // k * N + a
  size_t key_row = 0;    // k * N + b
  size_t time_index = 0;
  Vec2 delta;            // y_b(t) - y_a(t)
  double distance = 0.0;
  double angle_sign = 1.0;  // +1 when a < b
};

struct TlEdge {
  size_t query_row = 0;
  size_t lane = 0;
  size_t time_index = 0;
  Vec2 delta;  // lane vertex - y_a(t)
  double distance = 0.0;
};

// Neighbor graphs and (scaled) topology features of one set of trajectories.
struct SceneTopology {
  std::vector<size_t> tt_offsets;  // K*N + 1
  std::vector<TtEdge> tt_edges;
  Tensor tt_features;              // E_tt x 10, refiner input scaling applied
  std::vector<size_t> tl_offsets;
  std::vector<TlEdge> tl_edges;
  Tensor tl_features;              // E_tl x 6
};

// Input scaling of the topology records before the key encoders.
inline constexpr std::array<double, SoftBraidTT::kDim> kTtFeatureScale = {
    0.1, 0.1, 0.1, 0.1, 0.02, 0.02, 0.02, 0.02, 0.1, 0.31830988618379067};
inline constexpr std::array<double, SoftBraidTL::kDim> kTlFeatureScale = {
    0.1, 0.1, 0.02, 0.02, 0.1, 0.31830988618379067};
inline constexpr double kPositionScale = 0.1;

// Parameter-independent data of one scenario plus its coarse modes.
struct PreparedScene {
  size_t modes = 0, agents = 0, steps = 0;
  double sample_rate = 10.0;
  std::vector<LocalFrame> frames;   // per agent, from its history
  std::vector<double> row_angles;   // per row k * N + i: heading of agent i
  std::vector<Vec2> centered_origins;
  std::vector<std::vector<Vec2>> lanes;
  std::vector<std::array<double, 4>> lane_boxes;  // min x, min y, max x, max y
  Tensor lane_local;  // (N * lanes) x 2P: subsampled lane in agent frames, scaled
  Tensor y0;          // (K * N) x 2T, interleaved x, y
  std::shared_ptr<const SceneTopology> topology0;
};

PreparedScene PrepareScene(const Scenario& scenario, const ModeSet& coarse,
                           const RefinerConfig& config);

// Graphs and features for trajectories `y` ((K*N) x 2T).
SceneTopology ComputeTopology(const Tensor& y, const PreparedScene& scene,
                              const RefinerConfig& config);

Tensor ModesToTensor(const ModeSet& modes);
ModeSet TensorToModes(const Tensor& y, size_t modes, size_t agents);

struct RefinerInit {
  uint64_t seed = 0;
  bool zero_head = true;  // last head layer starts at zero: Y_l = Y_{l-1}
};

class Refiner {
 public:
  Refiner(const RefinerConfig& config, const RefinerInit& init);

  const RefinerConfig& config() const { return config_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  void ZeroHeads();

  // Y_1 .. Y_I as tape variables, each (K*N) x 2T.
  std::vector<ad::Var> Forward(nn::Binding& binding, const PreparedScene& scene) const;
  // Inference without gradients.
  std::vector<ModeSet> Refine(const PreparedScene& scene) const;

  ParameterArchive ToArchive() const;
  // Throws ParseError when parameters are missing or misshapen.
  static Refiner FromArchive(const ParameterArchive& archive);

 private:
  struct Iteration {
    nn::Mlp3 tt_phi;
    std::optional<nn::LayerNormParams> tt_phi_norm;
    nn::LayerNormParams tt_key_norm;
    nn::Mhca tt_attention;
    nn::Mlp3 tl_phi;
    std::optional<nn::LayerNormParams> tl_phi_norm;
    nn::Mhca tl_attention;
    nn::Mlp3 head;
  };

  Tensor EncoderInput(const PreparedScene& scene) const;

  RefinerConfig config_;
  nn::ParameterStore store_;
  nn::Mlp3 encoder_;
  std::vector<Iteration> iterations_;
};

size_t EncoderInputWidth(const RefinerConfig& config);

}  // namespace sbr
