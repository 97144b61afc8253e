#pragma once

#include "vegas/diffcore.hpp"

namespace vegas::testing {

template <typename T = double>
Matrix<T> random_matrix(RngStream& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
  return m;
}

/// Contracts an arbitrary-shaped output with fixed random weights to get a
/// scalar loss with a generic (non-symmetric) upstream gradient.
template <typename T>
Var<T> contract(Var<T> out, const Matrix<T>& weights) {
  auto w = out.tape->constant(weights);
  return sum(mul(out, w));
}

}  // namespace vegas::testing
