#pragma once

#include <string>

#include "vegas/diffcore.hpp"

namespace vegas::tam {

/// Stand-in for a frozen video encoder's temporal table: only k codes, so
/// frame i receives code i mod k and positions k apart become
/// indistinguishable.
struct EncoderEmulation {
  ParamId t_enc;
  int k = 0;
};

template <typename T>
EncoderEmulation make_encoder(ParamStore<T>& store, int k, Eigen::Index d, RngStream& rng,
                              const std::string& group = "encoder") {
  if (k < 1 || d < 1) throw ConfigError("encoder emulation: k and d must be >= 1");
  return EncoderEmulation{
      store.add_normal("encoder.t_enc", group, k, d, 1.0 / std::sqrt(static_cast<double>(d)), rng, false), k};
}

template <typename T>
Matrix<T> wrapped_codes(const Matrix<T>& t_enc, Eigen::Index n) {
  Matrix<T> out(n, t_enc.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = t_enc.row(i % t_enc.rows());
  return out;
}

template <typename T>
Matrix<T> emulate_encoder(const Matrix<T>& raw, const Matrix<T>& t_enc) {
  if (raw.cols() != t_enc.cols())
    throw DimensionError("encoder emulation: frame width " + std::to_string(raw.cols()) + " vs code width " +
                         std::to_string(t_enc.cols()));
  return raw + wrapped_codes(t_enc, raw.rows());
}

template <typename T>
Var<T> emulate_encoder(Tape<T>& tape, const ParamStore<T>& store, const EncoderEmulation& enc, Var<T> raw) {
  return add(raw, tape.constant(wrapped_codes(store.value(enc.t_enc), raw.rows())));
}

struct TamParams {
  ParamId t_s;
  LayerNormParams ln;
  AttentionParams attn;
  int k = 0;
  Eigen::Index d = 0;
};

/// t_s ~ N(0, std = 1/sqrt(d)); the attention output projection starts at
/// zero so the block begins as f + t_s.
template <typename T>
TamParams init_tam(ParamStore<T>& store, int k, Eigen::Index d, int heads, RngStream& rng,
                   const std::string& group = "tam") {
  if (k < 1 || d < 1) throw ConfigError("tam: k and d must be >= 1");
  TamParams p;
  p.k = k;
  p.d = d;
  p.t_s = store.add_normal("tam.t_s", group, k, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  p.ln = make_layer_norm(store, "tam.ln", group, d);
  p.attn = make_attention(store, "tam.attn", group, d, heads, rng, true);
  return p;
}

template <typename T>
Var<T> tam_forward(Tape<T>& tape, const TamParams& p, Var<T> f_v) {
  if (f_v.rows() != p.k || f_v.cols() != p.d)
    throw DimensionError("tam: input " + shape_str(f_v.value()) + " vs params " + shape_str(p.k, p.d));
  auto f1 = add(f_v, tape.param(p.t_s));
  auto normed = layer_norm(tape, p.ln, f1);
  auto f2 = multi_head_attention(tape, p.attn, normed, normed);
  return add(f1, f2);
}

}  // namespace vegas::tam
