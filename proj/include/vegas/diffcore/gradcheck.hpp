#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "vegas/diffcore/tape.hpp"

namespace vegas {

struct GradcheckResult {
  double max_rel_err = 0.0;
  /// false when two evaluations at the same point disagreed; the error value is then meaningless
  bool deterministic = true;
  std::string worst_param;
  std::size_t coordinates = 0;

  bool passed(double tol) const { return deterministic && max_rel_err <= tol; }
};

/// Compares the tape gradient of a scalar `fn` against central differences
/// (f(p+eps) - f(p-eps)) / (2 eps) for every coordinate of every trainable
/// entry of `store`.
///
/// Relative error per tensor is max|analytic - numeric| divided by the larger
/// of the two gradients' max magnitudes, floored at 1e-3 of the largest
/// numeric gradient seen anywhere so exactly-zero gradients (e.g. attention
/// key biases) do not divide rounding noise by zero. `corrupt` scales the
/// analytic gradient and exists to prove the checker can fail.
template <typename T>
GradcheckResult finite_diff_gradcheck(const std::function<Var<T>(Tape<T>&)>& fn, ParamStore<T>& store,
                                      T eps, T corrupt = T(1)) {
  auto evaluate = [&]() {
    Tape<T> tape(store);
    return fn(tape).value()(0, 0);
  };

  GradSet<T> analytic = store.make_grad_set();
  T base;
  {
    Tape<T> tape(store);
    auto loss = fn(tape);
    base = loss.value()(0, 0);
    tape.backward(loss);
    tape.accumulate(analytic);
  }

  GradcheckResult result;
  if (evaluate() != base) {
    result.deterministic = false;
    return result;
  }

  std::vector<Matrix<T>> numeric(store.size());
  double global = 0.0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& e = store.at(p);
    if (!e.trainable) continue;
    numeric[p].resize(e.value.rows(), e.value.cols());
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      T saved = e.value.data()[i];
      e.value.data()[i] = saved + eps;
      T plus = evaluate();
      e.value.data()[i] = saved - eps;
      T minus = evaluate();
      e.value.data()[i] = saved;
      numeric[p].data()[i] = (plus - minus) / (T(2) * eps);
      ++result.coordinates;
    }
    if (numeric[p].size() > 0) global = std::max(global, static_cast<double>(numeric[p].cwiseAbs().maxCoeff()));
  }

  const double floor = std::max(1e-3 * global, 1e-300);
  for (std::size_t p = 0; p < store.size(); ++p) {
    const auto& e = store.at(p);
    if (!e.trainable || numeric[p].size() == 0) continue;
    Matrix<T> a = analytic.grads[p].size() ? Matrix<T>(analytic.grads[p] * corrupt)
                                           : Matrix<T>::Zero(e.value.rows(), e.value.cols());
    double diff = static_cast<double>((a - numeric[p]).cwiseAbs().maxCoeff());
    double scale = std::max({static_cast<double>(a.cwiseAbs().maxCoeff()),
                             static_cast<double>(numeric[p].cwiseAbs().maxCoeff()), floor});
    double rel = diff / scale;
    if (result.worst_param.empty() || rel > result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst_param = e.name;
    }
  }
  return result;
}

}  // namespace vegas
