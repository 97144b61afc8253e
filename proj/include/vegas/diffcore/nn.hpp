#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vegas/diffcore/ops.hpp"

namespace vegas {

struct LinearParams {
  ParamId weight;
  ParamId bias;
  Eigen::Index in = 0;
  Eigen::Index out = 0;
};

struct LayerNormParams {
  ParamId gamma;
  ParamId beta;
};

/// Projections for (multi-head) scaled dot-product attention.
struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
  int heads = 1;
};

template <typename T>
LinearParams make_linear(ParamStore<T>& store, const std::string& name, const std::string& group,
                         Eigen::Index in, Eigen::Index out, RngStream& rng, double init_scale = 1.0) {
  LinearParams p;
  p.in = in;
  p.out = out;
  p.weight = store.add_normal(name + ".weight", group, in, out, init_scale / std::sqrt(static_cast<double>(in)), rng);
  p.bias = store.add_constant(name + ".bias", group, 1, out, T(0));
  return p;
}

template <typename T>
LayerNormParams make_layer_norm(ParamStore<T>& store, const std::string& name, const std::string& group,
                                Eigen::Index dim) {
  return LayerNormParams{store.add_constant(name + ".gamma", group, 1, dim, T(1)),
                         store.add_constant(name + ".beta", group, 1, dim, T(0))};
}

/// `zero_output` starts the block as an exact no-op on its residual branch.
template <typename T>
AttentionParams make_attention(ParamStore<T>& store, const std::string& name, const std::string& group,
                               Eigen::Index dim, int heads, RngStream& rng, bool zero_output = false) {
  if (heads <= 0 || dim % heads != 0)
    throw ConfigError(name + ": dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  AttentionParams p;
  p.heads = heads;
  p.query = make_linear(store, name + ".q", group, dim, dim, rng);
  p.key = make_linear(store, name + ".k", group, dim, dim, rng);
  p.value = make_linear(store, name + ".v", group, dim, dim, rng);
  p.output = make_linear(store, name + ".o", group, dim, dim, rng, zero_output ? 0.0 : 1.0);
  return p;
}

template <typename T>
Var<T> linear(Tape<T>& tape, const LinearParams& p, Var<T> x) {
  return linear(x, tape.param(p.weight), tape.param(p.bias));
}

template <typename T>
Var<T> layer_norm(Tape<T>& tape, const LayerNormParams& p, Var<T> x, T eps = T(1e-5)) {
  return layer_norm(x, tape.param(p.gamma), tape.param(p.beta), eps);
}

/// Scaled dot-product attention of `q` rows over `kv` rows with per-head
/// projections, head concatenation and an output projection.
template <typename T>
Var<T> multi_head_attention(Tape<T>& tape, const AttentionParams& p, Var<T> q, Var<T> kv) {
  const Eigen::Index dim = q.cols();
  if (kv.cols() != dim)
    throw DimensionError("attention: query dim " + std::to_string(dim) + " vs key dim " + std::to_string(kv.cols()));
  if (p.heads <= 0 || dim % p.heads != 0)
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(p.heads) +
                      " heads");
  auto qp = linear(tape, p.query, q);
  auto kp = linear(tape, p.key, kv);
  auto vp = linear(tape, p.value, kv);
  const Eigen::Index hd = dim / p.heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<Var<T>> heads;
  heads.reserve(static_cast<std::size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    auto qh = p.heads == 1 ? qp : slice_cols(qp, h * hd, hd);
    auto kh = p.heads == 1 ? kp : slice_cols(kp, h * hd, hd);
    auto vh = p.heads == 1 ? vp : slice_cols(vp, h * hd, hd);
    auto weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(matmul(weights, vh));
  }
  auto merged = p.heads == 1 ? heads.front() : concat_cols<T>(std::span<const Var<T>>(heads));
  return linear(tape, p.output, merged);
}

}  // namespace vegas
