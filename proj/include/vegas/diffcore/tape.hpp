#pragma once

#include <cstddef>
#include <functional>
#include <unordered_map>
#include <vector>

#include "vegas/diffcore/param_store.hpp"
#include "vegas/diffcore/tensor.hpp"

namespace vegas {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(*this); }
  const Matrix<T>& grad() const { return tape->grad(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

/// Static reverse-mode tape. Nodes are appended in evaluation order and
/// replayed backwards; each op registers a closure that pushes its output
/// gradient into its inputs.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  explicit Tape(const ParamStore<T>& store) : store_(&store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value) { return push(std::move(value), false, nullptr); }

  /// Leaf that collects a gradient (used by tests and gradcheck).
  Var<T> variable(Matrix<T> value) { return push(std::move(value), true, nullptr); }

  /// Leaf bound to a store entry; one leaf per entry per tape.
  Var<T> param(ParamId id) {
    if (!store_) throw StateError("tape has no parameter store");
    auto it = param_leaves_.find(id.index);
    if (it != param_leaves_.end()) return Var<T>{this, it->second};
    const auto& e = (*store_)[id];
    auto v = push(e.value, true, nullptr);
    param_leaves_.emplace(id.index, v.id);
    return v;
  }

  Var<T> push(Matrix<T> value, bool requires_grad, Backward backward) {
    require_finite(value, "forward pass");
    nodes_.push_back(Node{std::move(value), Matrix<T>(), requires_grad, std::move(backward)});
    return Var<T>{this, nodes_.size() - 1};
  }

  const Matrix<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const Matrix<T>& grad(Var<T> v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix<T>& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Accumulates `g` into the gradient of node `id` (no-op for constants).
  template <typename Derived>
  void add_grad(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = 1 (root must be 1x1) and replays the tape.
  void backward(Var<T> root) {
    if (root.rows() != 1 || root.cols() != 1)
      throw DimensionError("backward root must be scalar, got " + shape_str(root.value()));
    backward(root, Matrix<T>::Ones(1, 1));
  }

  void backward(Var<T> root, const Matrix<T>& seed) {
    auto& r = nodes_.at(root.id);
    if (seed.rows() != r.value.rows() || seed.cols() != r.value.cols())
      throw DimensionError("backward seed shape mismatch");
    if (!r.requires_grad) return;
    r.grad = seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      require_finite(n.grad, "backward pass");
      if (n.backward) n.backward(*this, i);
    }
  }

  /// Adds every parameter leaf's gradient into `out` at the leaf's store index.
  void accumulate(GradSet<T>& out) const {
    for (const auto& [index, node] : param_leaves_) {
      const auto& g = nodes_[node].grad;
      if (g.size() != 0) out.add(index, g);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const ParamStore<T>* store() const noexcept { return store_; }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  const ParamStore<T>* store_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_leaves_;
};

}  // namespace vegas
