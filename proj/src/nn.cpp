#include "sbr/nn.hpp"

#include <cmath>

#include "sbr/errors.hpp"

namespace sbr::nn {

size_t ParameterStore::Add(std::string name, Tensor value) {
  if (Find(name)) throw ConfigError("duplicate parameter name: " + name);
  params_.push_back({std::move(name), std::move(value)});
  return params_.size() - 1;
}

std::optional<size_t> ParameterStore::Find(const std::string& name) const {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

size_t ParameterStore::ScalarCount() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<Tensor> ParameterStore::ZeroLike() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.value.rows(), p.value.cols());
  return out;
}

Binding::Binding(ad::Tape& tape, const ParameterStore& store, std::vector<Tensor>* grads)
    : tape_(tape), store_(store), grads_(grads), bound_(store.size()) {
  if (grads_ != nullptr && grads_->size() != store.size()) {
    throw ShapeError("gradient sinks do not match the parameter store");
  }
}

ad::Var Binding::operator()(size_t index) {
  if (!bound_[index].valid()) {
    bound_[index] = tape_.Param(store_[index].value,
                                grads_ != nullptr ? &(*grads_)[index] : nullptr);
  }
  return bound_[index];
}

Linear MakeLinear(ParameterStore& store, const std::string& name, size_t in, size_t out,
                  InitScheme scheme, Rng& rng) {
  Tensor w(in, out);
  if (scheme != InitScheme::kZero) {
    const double gain = scheme == InitScheme::kKaimingUniform ? 6.0 : 3.0;
    const double bound = std::sqrt(gain / static_cast<double>(in));
    for (double& v : w.values()) v = rng.Uniform(-bound, bound);
  }
  Linear layer;
  layer.in = in;
  layer.out = out;
  layer.weight = store.Add(name + ".weight", std::move(w));
  layer.bias = store.Add(name + ".bias", Tensor(1, out));
  return layer;
}

ad::Var Forward(Binding& b, const Linear& layer, ad::Var x) {
  return ad::Add(ad::MatMul(x, b(layer.weight)), b(layer.bias));
}

Mlp3 MakeMlp3(ParameterStore& store, const std::string& name, size_t in, size_t hidden,
              size_t out, Rng& rng, bool zero_output_layer) {
  Mlp3 mlp;
  mlp.l1 = MakeLinear(store, name + ".0", in, hidden, InitScheme::kKaimingUniform, rng);
  mlp.l2 = MakeLinear(store, name + ".1", hidden, hidden, InitScheme::kKaimingUniform, rng);
  mlp.l3 = MakeLinear(store, name + ".2", hidden, out,
                      zero_output_layer ? InitScheme::kZero : InitScheme::kLecunUniform, rng);
  return mlp;
}

ad::Var Forward(Binding& b, const Mlp3& mlp, ad::Var x) {
  if (x.cols() != mlp.in()) {
    throw ShapeError("mlp expects " + std::to_string(mlp.in()) + " input columns, got " +
                     std::to_string(x.cols()));
  }
  ad::Var h = ad::Relu(Forward(b, mlp.l1, x));
  h = ad::Relu(Forward(b, mlp.l2, h));
  return Forward(b, mlp.l3, h);
}

LayerNormParams MakeLayerNorm(ParameterStore& store, const std::string& name, size_t dim) {
  LayerNormParams ln;
  ln.gain = store.Add(name + ".gain", Tensor(1, dim, 1.0));
  ln.bias = store.Add(name + ".bias", Tensor(1, dim));
  return ln;
}

ad::Var Forward(Binding& b, const LayerNormParams& ln, ad::Var x) {
  return ad::LayerNorm(x, b(ln.gain), b(ln.bias));
}

Mhca MakeMhca(ParameterStore& store, const std::string& name, const MhcaConfig& config,
              Rng& rng) {
  if (config.heads == 0 || config.dim % config.heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(config.dim) +
                      " is not divisible by head count " + std::to_string(config.heads));
  }
  Mhca block;
  block.config = config;
  const size_t d = config.dim;
  block.q = MakeLinear(store, name + ".q", d, d, InitScheme::kLecunUniform, rng);
  block.k = MakeLinear(store, name + ".k", d, d, InitScheme::kLecunUniform, rng);
  block.v = MakeLinear(store, name + ".v", d, d, InitScheme::kLecunUniform, rng);
  block.o = MakeLinear(store, name + ".o", d, d, InitScheme::kLecunUniform, rng);
  block.norm = MakeLayerNorm(store, name + ".norm", d);
  return block;
}

ad::Var Forward(Binding& b, const Mhca& block, ad::Var queries, ad::Var keys, ad::Var values,
                std::span<const size_t> offsets) {
  const size_t d = block.config.dim;
  if (queries.cols() != d || keys.cols() != d || values.cols() != d) {
    throw ShapeError("attention block expects width " + std::to_string(d));
  }
  const ad::Var q = Forward(b, block.q, queries);
  const ad::Var k = Forward(b, block.k, keys);
  const ad::Var v = Forward(b, block.v, values);
  const ad::Var attended = ad::SegmentAttention(q, k, v, offsets, block.config.heads);

  std::vector<double> has_keys(queries.rows());
  for (size_t r = 0; r < has_keys.size(); ++r) has_keys[r] = offsets[r + 1] > offsets[r] ? 1.0 : 0.0;
  ad::Var out = ad::ScaleRows(Forward(b, block.o, attended), has_keys);

  if (block.config.residual) out = ad::Add(queries, out);
  if (block.config.norm) out = Forward(b, block.norm, out);
  return out;
}

ad::Var Forward(Binding& b, const Mhca& block, ad::Var query, ad::Var keys, ad::Var values) {
  if (query.rows() != 1) throw ShapeError("single-query attention expects a 1 x D query");
  const size_t offsets[] = {0, keys.rows()};
  return Forward(b, block, query, keys, values, offsets);
}

}  // namespace sbr::nn
