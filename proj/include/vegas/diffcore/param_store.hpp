#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "vegas/diffcore/tensor.hpp"
#include "vegas/rng.hpp"

namespace vegas {

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

template <typename T>
struct ParamEntry {
  std::string name;
  std::string group;
  Matrix<T> value;
  Matrix<T> grad;
  // Adam moments, persisted with the checkpoint
  Matrix<T> m;
  Matrix<T> v;
  bool has_grad = false;
  bool trainable = true;
};

/// Per-sample gradient buffer indexed like the store it was made for.
/// Empty slots mean "no gradient reached this parameter".
template <typename T>
struct GradSet {
  std::vector<Matrix<T>> grads;

  explicit GradSet(std::size_t n = 0) : grads(n) {}

  void add(std::size_t index, const Matrix<T>& g) {
    auto& slot = grads[index];
    if (slot.size() == 0) {
      slot = g;
    } else {
      slot += g;
    }
  }

  void add(const GradSet& other) {
    for (std::size_t i = 0; i < other.grads.size(); ++i) {
      if (other.grads[i].size() != 0) add(i, other.grads[i]);
    }
  }

  void scale(T s) {
    for (auto& g : grads) {
      if (g.size() != 0) g *= s;
    }
  }
};

/// Ordered name -> parameter map. Iteration follows insertion order.
template <typename T>
class ParamStore {
 public:
  ParamId add(std::string name, std::string group, Matrix<T> init, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    ParamEntry<T> e;
    e.name = std::move(name);
    e.group = std::move(group);
    e.m = Matrix<T>::Zero(init.rows(), init.cols());
    e.v = Matrix<T>::Zero(init.rows(), init.cols());
    e.grad = Matrix<T>::Zero(init.rows(), init.cols());
    e.value = std::move(init);
    e.trainable = trainable;
    index_.emplace(e.name, entries_.size());
    entries_.push_back(std::move(e));
    return ParamId{entries_.size() - 1};
  }

  /// Gaussian init with the given standard deviation.
  ParamId add_normal(std::string name, std::string group, Eigen::Index rows, Eigen::Index cols,
                     double stddev, RngStream& rng, bool trainable = true) {
    Matrix<T> init(rows, cols);
    for (Eigen::Index i = 0; i < init.size(); ++i) init.data()[i] = static_cast<T>(stddev * rng.normal());
    return add(std::move(name), std::move(group), std::move(init), trainable);
  }

  ParamId add_constant(std::string name, std::string group, Eigen::Index rows, Eigen::Index cols,
                       T value, bool trainable = true) {
    return add(std::move(name), std::move(group), Matrix<T>::Constant(rows, cols, value), trainable);
  }

  std::size_t size() const noexcept { return entries_.size(); }

  ParamEntry<T>& operator[](ParamId id) { return entries_.at(id.index); }
  const ParamEntry<T>& operator[](ParamId id) const { return entries_.at(id.index); }
  ParamEntry<T>& at(std::size_t i) { return entries_.at(i); }
  const ParamEntry<T>& at(std::size_t i) const { return entries_.at(i); }

  const Matrix<T>& value(ParamId id) const { return entries_.at(id.index).value; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ParamId find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return ParamId{it->second};
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Installs an accumulated gradient. Slots with no gradient leave has_grad false.
  void set_grads(const GradSet<T>& g) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& e = entries_[i];
      if (i < g.grads.size() && g.grads[i].size() != 0) {
        if (g.grads[i].rows() != e.value.rows() || g.grads[i].cols() != e.value.cols())
          throw DimensionError("gradient shape mismatch for " + e.name);
        require_finite(g.grads[i], e.name.c_str());
        e.grad = g.grads[i];
        e.has_grad = true;
      } else {
        e.grad.setZero();
        e.has_grad = false;
      }
    }
  }

  void zero_grad() {
    for (auto& e : entries_) {
      e.grad.setZero();
      e.has_grad = false;
    }
  }

  GradSet<T> make_grad_set() const { return GradSet<T>(entries_.size()); }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vegas
