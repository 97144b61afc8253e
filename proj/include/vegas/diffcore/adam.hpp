#pragma once

#include <cmath>
#include <map>
#include <string>

#include "vegas/diffcore/param_store.hpp"

namespace vegas {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Leave entries without a gradient untouched instead of raising StateError
  /// (the trainer's batches do not reach every head).
  bool skip_missing = false;
};

namespace detail {

template <typename T>
void adam_update(ParamEntry<T>& e, const AdamOptions& opt, double lr, int step) {
  if (!e.has_grad) throw StateError("adam_step: no gradient for " + e.name);
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  e.m = b1 * e.m + (T(1) - b1) * e.grad;
  e.v = b2 * e.v + (T(1) - b2) * e.grad.cwiseAbs2();
  const T c1 = T(1) - static_cast<T>(std::pow(opt.beta1, step));
  const T c2 = T(1) - static_cast<T>(std::pow(opt.beta2, step));
  const T step_size = static_cast<T>(lr);
  const T eps = static_cast<T>(opt.eps);
  e.value.array() -= step_size * (e.m.array() / c1) / ((e.v.array() / c2).sqrt() + eps);
  require_finite(e.value, e.name.c_str());
  e.grad.setZero();
  e.has_grad = false;
}

}  // namespace detail

/// One bias-corrected Adam update of every trainable entry; `step` is 1-based.
template <typename T>
void adam_step(ParamStore<T>& store, const AdamOptions& opt, int step) {
  if (step < 1) throw ConfigError("adam_step: step must be >= 1");
  for (auto& e : store) {
    if (!e.trainable || (opt.skip_missing && !e.has_grad)) continue;
    detail::adam_update(e, opt, opt.lr, step);
  }
}

/// Adam with a learning rate per parameter group. Groups missing from
/// `group_lr` are frozen: neither their values nor their moments move.
template <typename T>
void adam_step(ParamStore<T>& store, const AdamOptions& opt, int step,
               const std::map<std::string, double>& group_lr) {
  if (step < 1) throw ConfigError("adam_step: step must be >= 1");
  for (auto& e : store) {
    if (!e.trainable) continue;
    auto it = group_lr.find(e.group);
    if (it == group_lr.end()) {
      e.grad.setZero();
      e.has_grad = false;
      continue;
    }
    if (opt.skip_missing && !e.has_grad) continue;
    detail::adam_update(e, opt, it->second, step);
  }
}

}  // namespace vegas
