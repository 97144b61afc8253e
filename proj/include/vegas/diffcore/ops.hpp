#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "vegas/diffcore/tape.hpp"

namespace vegas {

namespace detail {

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw StateError("vars belong to different tapes");
}

template <typename T>
void check_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dims disagree " + shape_str(a.value()) + " * " +
                         shape_str(b.value()));
  auto& tape = *a.tape;
  Matrix<T> y = a.value() * b.value();
  return tape.push(std::move(y), a.requires_grad() || b.requires_grad(),
                   [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
                     const auto& g = t.grad(self);
                     if (t.requires_grad(ia)) t.add_grad(ia, g * t.value(ib).transpose());
                     if (t.requires_grad(ib)) t.add_grad(ib, t.value(ia).transpose() * g);
                   });
}

/// a * b^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner dims disagree " + shape_str(a.value()) + " * " +
                         shape_str(b.value()) + "^T");
  auto& tape = *a.tape;
  Matrix<T> y = a.value() * b.value().transpose();
  return tape.push(std::move(y), a.requires_grad() || b.requires_grad(),
                   [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
                     const auto& g = t.grad(self);
                     if (t.requires_grad(ia)) t.add_grad(ia, g * t.value(ib));
                     if (t.requires_grad(ib)) t.add_grad(ib, g.transpose() * t.value(ia));
                   });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Matrix<T> y = a.value().transpose();
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id](Tape<T>& t, std::size_t self) {
    t.add_grad(ia, t.grad(self).transpose());
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  Matrix<T> y = a.value() + b.value();
  return a.tape->push(std::move(y), a.requires_grad() || b.requires_grad(),
                      [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
                        t.add_grad(ia, t.grad(self));
                        t.add_grad(ib, t.grad(self));
                      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  Matrix<T> y = a.value() - b.value();
  return a.tape->push(std::move(y), a.requires_grad() || b.requires_grad(),
                      [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
                        t.add_grad(ia, t.grad(self));
                        t.add_grad(ib, -t.grad(self));
                      });
}

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "mul");
  Matrix<T> y = a.value().cwiseProduct(b.value());
  return a.tape->push(std::move(y), a.requires_grad() || b.requires_grad(),
                      [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
                        const auto& g = t.grad(self);
                        if (t.requires_grad(ia)) t.add_grad(ia, g.cwiseProduct(t.value(ib)));
                        if (t.requires_grad(ib)) t.add_grad(ib, g.cwiseProduct(t.value(ia)));
                      });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Matrix<T> y = a.value() * s;
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id, s](Tape<T>& t, std::size_t self) {
    t.add_grad(ia, t.grad(self) * s);
  });
}

/// a + row, with `row` (1 x c) broadcast over every row of `a`.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  detail::check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                         shape_str(row.value()));
  Matrix<T> y = a.value().rowwise() + row.value().row(0);
  return a.tape->push(std::move(y), a.requires_grad() || row.requires_grad(),
                      [ia = a.id, ir = row.id](Tape<T>& t, std::size_t self) {
                        const auto& g = t.grad(self);
                        t.add_grad(ia, g);
                        if (t.requires_grad(ir)) t.add_grad(ir, g.colwise().sum());
                      });
}

/// y = x * w + bias, bias broadcast over rows.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, bias);
  if (x.cols() != w.rows())
    throw DimensionError("linear: input " + shape_str(x.value()) + " vs weight " + shape_str(w.value()));
  if (bias.rows() != 1 || bias.cols() != w.cols())
    throw DimensionError("linear: bias " + shape_str(bias.value()) + " vs weight " + shape_str(w.value()));
  Matrix<T> y = (x.value() * w.value()).rowwise() + bias.value().row(0);
  return x.tape->push(std::move(y), x.requires_grad() || w.requires_grad() || bias.requires_grad(),
                      [ix = x.id, iw = w.id, ib = bias.id](Tape<T>& t, std::size_t self) {
                        const auto& g = t.grad(self);
                        if (t.requires_grad(ix)) t.add_grad(ix, g * t.value(iw).transpose());
                        if (t.requires_grad(iw)) t.add_grad(iw, t.value(ix).transpose() * g);
                        if (t.requires_grad(ib)) t.add_grad(ib, g.colwise().sum());
                      });
}

/// tanh-approximated GELU (smooth, so finite differences behave everywhere).
template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  const auto& x = a.value();
  Matrix<T> y = x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v))); });
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id](Tape<T>& t, std::size_t self) {
    Matrix<T> d = t.value(ia).unaryExpr([](T v) {
      T u = c * (v + k * v * v * v);
      T th = std::tanh(u);
      return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * k * v * v);
    });
    t.add_grad(ia, t.grad(self).cwiseProduct(d));
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  const auto& x = a.value();
  Matrix<T> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    T mx = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - mx).exp();
    y.row(i) /= y.row(i).sum();
  }
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id](Tape<T>& t, std::size_t self) {
    const auto& s = t.value(self);
    const auto& g = t.grad(self);
    Matrix<T> dx(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      T dot = g.row(i).dot(s.row(i));
      dx.row(i) = s.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    t.add_grad(ia, dx);
  });
}

/// Per-row normalization to zero mean / unit variance, then gamma * . + beta.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const Eigen::Index n = xv.rows(), d = xv.cols();
  if (d == 0) throw DimensionError("layer_norm: feature dim is 0");
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
    throw DimensionError("layer_norm: affine params must be 1x" + std::to_string(d));
  Matrix<T> xhat(n, d);
  Matrix<T> inv_std(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    T mu = xv.row(i).mean();
    T var = (xv.row(i).array() - mu).square().mean();
    T is = T(1) / std::sqrt(var + eps);
    inv_std(i, 0) = is;
    xhat.row(i) = (xv.row(i).array() - mu) * is;
  }
  Matrix<T> y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return x.tape->push(
      std::move(y), rg,
      [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const Eigen::Index d = g.cols();
        if (t.requires_grad(ig)) t.add_grad(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ib)) t.add_grad(ib, g.colwise().sum());
        if (t.requires_grad(ix)) {
          Matrix<T> gx = g.array().rowwise() * t.value(ig).row(0).array();
          Matrix<T> dx(g.rows(), d);
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            T mean_g = gx.row(i).mean();
            T mean_gx = gx.row(i).dot(xhat.row(i)) / T(d);
            dx.row(i) = (inv_std(i, 0) * (gx.row(i).array() - mean_g - xhat.row(i).array() * mean_gx)).matrix();
          }
          t.add_grad(ix, dx);
        }
      });
}

/// Mean of all elements, as a 1x1.
template <typename T>
Var<T> mean(Var<T> a) {
  const T count = static_cast<T>(a.value().size());
  Matrix<T> y(1, 1);
  y(0, 0) = a.value().sum() / count;
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id, count](Tape<T>& t, std::size_t self) {
    const auto& v = t.value(ia);
    t.add_grad(ia, Matrix<T>::Constant(v.rows(), v.cols(), t.grad(self)(0, 0) / count));
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Matrix<T> y(1, 1);
  y(0, 0) = a.value().sum();
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id](Tape<T>& t, std::size_t self) {
    const auto& v = t.value(ia);
    t.add_grad(ia, Matrix<T>::Constant(v.rows(), v.cols(), t.grad(self)(0, 0)));
  });
}

/// Column-wise mean over rows: [n x c] -> [1 x c].
template <typename T>
Var<T> mean_rows(Var<T> a) {
  if (a.rows() == 0) throw DimensionError("mean_rows: no rows");
  const T count = static_cast<T>(a.rows());
  Matrix<T> y = a.value().colwise().sum() / count;
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id, count](Tape<T>& t, std::size_t self) {
    const auto rows = t.value(ia).rows();
    Matrix<T> g = t.grad(self).replicate(rows, 1) / count;
    t.add_grad(ia, g);
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  auto* tape = parts.front().tape;
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    if (p.tape != tape) throw StateError("vars belong to different tapes");
    if (p.cols() != cols) throw DimensionError("concat_rows: column count mismatch");
    rows += p.rows();
    rg = rg || p.requires_grad();
    ids.push_back(p.id);
  }
  Matrix<T> y(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return tape->push(std::move(y), rg, [ids = std::move(ids)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Eigen::Index r = 0;
    for (auto id : ids) {
      auto n = t.value(id).rows();
      if (t.requires_grad(id)) t.add_grad(id, g.middleRows(r, n));
      r += n;
    }
  });
}

template <typename T>
Var<T> concat_rows(std::initializer_list<Var<T>> parts) {
  std::vector<Var<T>> v(parts);
  return concat_rows<T>(std::span<const Var<T>>(v));
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  auto* tape = parts.front().tape;
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    if (p.tape != tape) throw StateError("vars belong to different tapes");
    if (p.rows() != rows) throw DimensionError("concat_cols: row count mismatch");
    cols += p.cols();
    rg = rg || p.requires_grad();
    ids.push_back(p.id);
  }
  Matrix<T> y(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return tape->push(std::move(y), rg, [ids = std::move(ids)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Eigen::Index c = 0;
    for (auto id : ids) {
      auto n = t.value(id).cols();
      if (t.requires_grad(id)) t.add_grad(id, g.middleCols(c, n));
      c += n;
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw DimensionError("slice_rows: out of range");
  Matrix<T> y = a.value().middleRows(start, count);
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id, start, count](Tape<T>& t, std::size_t self) {
    const auto& v = t.value(ia);
    Matrix<T> g = Matrix<T>::Zero(v.rows(), v.cols());
    g.middleRows(start, count) = t.grad(self);
    t.add_grad(ia, g);
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw DimensionError("slice_cols: out of range");
  Matrix<T> y = a.value().middleCols(start, count);
  return a.tape->push(std::move(y), a.requires_grad(), [ia = a.id, start, count](Tape<T>& t, std::size_t self) {
    const auto& v = t.value(ia);
    Matrix<T> g = Matrix<T>::Zero(v.rows(), v.cols());
    g.middleCols(start, count) = t.grad(self);
    t.add_grad(ia, g);
  });
}

/// Mean over rows of -log softmax(logits)[target]. Gradient (softmax - onehot) / n.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> targets) {
  const auto& z = logits.value();
  const Eigen::Index n = z.rows(), classes = z.cols();
  if (static_cast<Eigen::Index>(targets.size()) != n)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  if (n == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  Matrix<T> probs(n, classes);
  T loss = 0;
  std::vector<int> tgt(targets.begin(), targets.end());
  for (Eigen::Index i = 0; i < n; ++i) {
    int c = tgt[static_cast<std::size_t>(i)];
    if (c < 0 || c >= classes)
      throw IndexError("softmax_cross_entropy: target " + std::to_string(c) + " outside [0, " +
                       std::to_string(classes) + ")");
    T mx = z.row(i).maxCoeff();
    probs.row(i) = (z.row(i).array() - mx).exp();
    T denom = probs.row(i).sum();
    probs.row(i) /= denom;
    loss += -(z(i, c) - mx - std::log(denom));
  }
  Matrix<T> y(1, 1);
  y(0, 0) = loss / static_cast<T>(n);
  return logits.tape->push(std::move(y), logits.requires_grad(),
                           [il = logits.id, probs = std::move(probs), tgt = std::move(tgt)](Tape<T>& t,
                                                                                             std::size_t self) {
                             Matrix<T> g = probs;
                             for (std::size_t i = 0; i < tgt.size(); ++i) g(static_cast<Eigen::Index>(i), tgt[i]) -= T(1);
                             g *= t.grad(self)(0, 0) / static_cast<T>(tgt.size());
                             t.add_grad(il, g);
                           });
}

/// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets.
template <typename T>
Var<T> sigmoid_cross_entropy(Var<T> logits, const Matrix<T>& targets) {
  const auto& z = logits.value();
  if (z.rows() != targets.rows() || z.cols() != targets.cols())
    throw DimensionError("sigmoid_cross_entropy: target shape mismatch");
  const T count = static_cast<T>(z.size());
  // log(1 + exp(z)) - t z, stable form
  T loss = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    T v = z.data()[i];
    loss += std::max(v, T(0)) - v * targets.data()[i] + std::log1p(std::exp(-std::abs(v)));
  }
  Matrix<T> y(1, 1);
  y(0, 0) = loss / count;
  return logits.tape->push(std::move(y), logits.requires_grad(),
                           [il = logits.id, targets, count](Tape<T>& t, std::size_t self) {
                             const auto& z = t.value(il);
                             Matrix<T> sig = z.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
                             t.add_grad(il, (sig - targets) * (t.grad(self)(0, 0) / count));
                           });
}

}  // namespace vegas
