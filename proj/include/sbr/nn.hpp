#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbr/autodiff.hpp"
#include "sbr/random.hpp"
#include "sbr/tensor.hpp"

namespace sbr::nn {

struct Parameter {
  std::string name;
  Tensor value;
};

// Ordered collection of named trainable arrays.
class ParameterStore {
 public:
  // Throws ConfigError on a duplicate name.
  size_t Add(std::string name, Tensor value);
  size_t size() const { return params_.size(); }
  Parameter& operator[](size_t i) { return params_[i]; }
  const Parameter& operator[](size_t i) const { return params_[i]; }
  std::optional<size_t> Find(const std::string& name) const;
  size_t ScalarCount() const;
  // One zero tensor per parameter, shaped like it.
  std::vector<Tensor> ZeroLike() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

// Lazily places parameters of a store onto a tape, once each.
class Binding {
 public:
  // `grads` may be null for inference; otherwise one sink per parameter.
  Binding(ad::Tape& tape, const ParameterStore& store, std::vector<Tensor>* grads);
  ad::Var operator()(size_t index);
  ad::Tape& tape() { return tape_; }

 private:
  ad::Tape& tape_;
  const ParameterStore& store_;
  std::vector<Tensor>* grads_;
  std::vector<ad::Var> bound_;
};

struct Linear {
  size_t weight = 0;  // in x out
  size_t bias = 0;    // 1 x out
  size_t in = 0;
  size_t out = 0;
};

enum class InitScheme {
  kKaimingUniform,  // U(+-sqrt(6 / fan_in)), for layers feeding a ReLU
  kLecunUniform,    // U(+-sqrt(3 / fan_in)), for output layers
  kZero,
};

Linear MakeLinear(ParameterStore& store, const std::string& name, size_t in, size_t out,
                  InitScheme scheme, Rng& rng);
ad::Var Forward(Binding& b, const Linear& layer, ad::Var x);

// linear -> relu -> linear -> relu -> linear, hidden width `hidden`.
struct Mlp3 {
  Linear l1, l2, l3;
  size_t in() const { return l1.in; }
  size_t out() const { return l3.out; }
};

Mlp3 MakeMlp3(ParameterStore& store, const std::string& name, size_t in, size_t hidden,
              size_t out, Rng& rng, bool zero_output_layer = false);
ad::Var Forward(Binding& b, const Mlp3& mlp, ad::Var x);

struct LayerNormParams {
  size_t gain = 0;
  size_t bias = 0;
};

LayerNormParams MakeLayerNorm(ParameterStore& store, const std::string& name, size_t dim);
ad::Var Forward(Binding& b, const LayerNormParams& ln, ad::Var x);

struct MhcaConfig {
  size_t dim = 64;
  size_t heads = 8;
  bool residual = true;
  bool norm = true;
};

// Multi-head cross-attention with residual + layer norm around the block.
struct Mhca {
  MhcaConfig config;
  Linear q, k, v, o;
  LayerNormParams norm;
};

// Throws ConfigError when dim is not divisible by heads.
Mhca MakeMhca(ParameterStore& store, const std::string& name, const MhcaConfig& config,
              Rng& rng);

// Batched form: query row r attends over keys/values rows
// [offsets[r], offsets[r + 1]). A query with no keys passes through the
// residual path (layer_norm(query) with the defaults).
ad::Var Forward(Binding& b, const Mhca& block, ad::Var queries, ad::Var keys, ad::Var values,
                std::span<const size_t> offsets);
// Single-query form: query 1 x D, keys/values n x D (n may be 0).
ad::Var Forward(Binding& b, const Mhca& block, ad::Var query, ad::Var keys, ad::Var values);

}  // namespace sbr::nn
