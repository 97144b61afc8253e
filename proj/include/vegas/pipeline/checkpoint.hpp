#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "vegas/pipeline/model.hpp"

namespace vegas::pipeline {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

/// One named tensor as stored on disk; data holds the raw little-endian bytes.
struct StoredTensor {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t element_count() const;
};

struct CheckpointMeta {
  std::string stage;
  int step = 0;
  std::uint64_t seed = 0;
  /// 16 lowercase hex digits.
  std::string config_hash;
};

struct Checkpoint {
  std::vector<StoredTensor> tensors;
  CheckpointMeta meta;

  const StoredTensor* find(const std::string& name) const;
};

/// "VGCK", u32 version, u32 count, tensors, then length-prefixed JSON metadata.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on any inconsistency; nothing is returned half-read.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string hash_hex(std::uint64_t h);

namespace detail {

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "checkpoint tensors are f32 or f64");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <typename T>
StoredTensor store_matrix(const std::string& name, const Matrix<T>& m) {
  StoredTensor t;
  t.name = name;
  t.dtype = dtype_of<T>();
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()) * sizeof(T));
  // row-major storage; bytes written least significant first
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits;
    std::memcpy(&bits, m.data() + i, sizeof(T));
    for (std::size_t b = 0; b < sizeof(T); ++b)
      t.data[static_cast<std::size_t>(i) * sizeof(T) + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return t;
}

template <typename T>
Matrix<T> load_matrix(const StoredTensor& t) {
  if (t.dtype != dtype_of<T>()) throw FormatError("tensor " + t.name + ": dtype differs from the model");
  if (t.dims.size() != 2) throw FormatError("tensor " + t.name + ": expected rank 2");
  Matrix<T> m(t.dims[0], t.dims[1]);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b)
      bits |= static_cast<U>(t.data[static_cast<std::size_t>(i) * sizeof(T) + b]) << (8 * b);
    std::memcpy(m.data() + i, &bits, sizeof(T));
  }
  return m;
}

}  // namespace detail

/// Every parameter plus its Adam moments (opt.m.<name>, opt.v.<name>).
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const CheckpointMeta& meta) {
  Checkpoint c;
  c.meta = meta;
  for (const auto& e : model.store) c.tensors.push_back(detail::store_matrix(e.name, e.value));
  for (const auto& e : model.store) c.tensors.push_back(detail::store_matrix("opt.m." + e.name, e.m));
  for (const auto& e : model.store) c.tensors.push_back(detail::store_matrix("opt.v." + e.name, e.v));
  return c;
}

/// Copies values and moments into `model`. All names, dtypes and shapes are
/// checked before the first write, so a mismatch leaves the model untouched.
template <typename T>
void apply_checkpoint(Model<T>& model, const Checkpoint& ckpt) {
  std::vector<std::array<Matrix<T>, 3>> staged;
  for (const auto& e : model.store) {
    std::array<Matrix<T>, 3> slot;
    const std::array<std::string, 3> names{e.name, "opt.m." + e.name, "opt.v." + e.name};
    for (std::size_t j = 0; j < 3; ++j) {
      const auto* t = ckpt.find(names[j]);
      if (!t) throw FormatError("checkpoint lacks tensor " + names[j]);
      slot[j] = detail::load_matrix<T>(*t);
      if (slot[j].rows() != e.value.rows() || slot[j].cols() != e.value.cols())
        throw FormatError("tensor " + names[j] + ": shape " + shape_str(slot[j]) + " vs model " + shape_str(e.value));
    }
    staged.push_back(std::move(slot));
  }
  if (ckpt.tensors.size() != 3 * model.store.size())
    throw FormatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                      std::to_string(3 * model.store.size()));
  std::size_t i = 0;
  for (auto& e : model.store) {
    e.value = std::move(staged[i][0]);
    e.m = std::move(staged[i][1]);
    e.v = std::move(staged[i][2]);
    ++i;
  }
}

}  // namespace vegas::pipeline
