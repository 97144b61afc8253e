#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include "vegas/diffcore.hpp"

namespace vegas::topk {

enum class Mode { train, eval };

struct TopKConfig {
  int k = 8;
  /// Perturbation scale; scores are O(1) after the scorer's output head.
  double sigma = 0.05;
  /// Monte-Carlo draws M per forward pass.
  int num_samples = 500;
  Mode mode = Mode::train;

  void validate(Eigen::Index n) const {
    if (k < 1) throw ConfigError("top-k: k must be >= 1");
    if (k > n)
      throw DimensionError("top-k: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
    if (mode == Mode::train) {
      if (!(sigma > 0.0)) throw ConfigError("top-k: sigma must be > 0 in train mode");
      if (num_samples < 1) throw ConfigError("top-k: num_samples must be >= 1");
    }
  }
};

/// Output of a selection. Rows of `indicator` follow ascending frame index.
template <typename T>
struct SelectionResult {
  Matrix<T> indicator;  // k x n
  std::vector<int> indices;  // hard selections only
  Matrix<T> features;  // k x d when frames were supplied
  std::optional<Matrix<T>> saved_noise;  // M x n standard-normal draws
  std::vector<int> saved_selection;  // M * k chosen indices, ascending per draw
  double sigma = 0.0;
};

/// Indices of the k largest scores, ties to the lower index, returned ascending.
template <typename T>
void topk_indices(const T* scores, int n, int k, int* out, std::vector<int>& scratch) {
  scratch.resize(static_cast<std::size_t>(n));
  std::iota(scratch.begin(), scratch.end(), 0);
  auto better = [scores](int a, int b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  if (k < n) std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end(), better);
  std::sort(scratch.begin(), scratch.begin() + k);
  std::copy(scratch.begin(), scratch.begin() + k, out);
}

template <typename T>
SelectionResult<T> hard_topk_indicator(const Matrix<T>& scores, int k) {
  if (scores.rows() != 1) throw DimensionError("top-k: scores must be a 1xn row, got " + shape_str(scores));
  const auto n = static_cast<int>(scores.cols());
  if (k < 1) throw ConfigError("top-k: k must be >= 1");
  if (k > n) throw DimensionError("top-k: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  SelectionResult<T> r;
  r.indices.resize(static_cast<std::size_t>(k));
  std::vector<int> scratch;
  topk_indices(scores.data(), n, k, r.indices.data(), scratch);
  r.indicator = Matrix<T>::Zero(k, n);
  for (int row = 0; row < k; ++row) r.indicator(row, r.indices[static_cast<std::size_t>(row)]) = T(1);
  return r;
}

/// Indicator built from an explicit ascending index list (uniform and oracle selectors).
template <typename T>
SelectionResult<T> indicator_from_indices(std::vector<int> indices, int n) {
  SelectionResult<T> r;
  std::sort(indices.begin(), indices.end());
  r.indicator = Matrix<T>::Zero(static_cast<Eigen::Index>(indices.size()), n);
  for (std::size_t row = 0; row < indices.size(); ++row) r.indicator(static_cast<Eigen::Index>(row), indices[row]) = T(1);
  r.indices = std::move(indices);
  return r;
}

/// Monte-Carlo expectation of the hard indicator under Gaussian score
/// perturbations: (1/M) sum_m Y(s + sigma Z_m). Draws come in antithetic
/// pairs (Z, -Z); each pair uses its own child stream so the result does not
/// depend on evaluation order.
template <typename T>
SelectionResult<T> perturbed_topk_forward(const Matrix<T>& scores, const TopKConfig& cfg, const RngStream& rng) {
  if (scores.rows() != 1) throw DimensionError("top-k: scores must be a 1xn row, got " + shape_str(scores));
  if (cfg.mode != Mode::train) throw ConfigError("perturbed_topk_forward requires train mode");
  const auto n = static_cast<int>(scores.cols());
  cfg.validate(n);
  const int M = cfg.num_samples, k = cfg.k;
  const T sigma = static_cast<T>(cfg.sigma);

  Matrix<T> noise(M, n);
  for (int m = 0; m < M; m += 2) {
    auto stream = rng.child(static_cast<std::uint64_t>(m / 2));
    for (int j = 0; j < n; ++j) noise(m, j) = static_cast<T>(stream.normal());
    if (m + 1 < M) noise.row(m + 1) = -noise.row(m);
  }

  SelectionResult<T> r;
  r.sigma = cfg.sigma;
  r.saved_selection.resize(static_cast<std::size_t>(M) * static_cast<std::size_t>(k));
  r.indicator = Matrix<T>::Zero(k, n);
  std::vector<T> perturbed(static_cast<std::size_t>(n));
  std::vector<int> scratch;
  for (int m = 0; m < M; ++m) {
    for (int j = 0; j < n; ++j) perturbed[static_cast<std::size_t>(j)] = scores(0, j) + sigma * noise(m, j);
    int* sel = r.saved_selection.data() + static_cast<std::size_t>(m) * static_cast<std::size_t>(k);
    topk_indices(perturbed.data(), n, k, sel, scratch);
    for (int row = 0; row < k; ++row) r.indicator(row, sel[row]) += T(1);
  }
  r.indicator /= static_cast<T>(M);
  r.saved_noise = std::move(noise);
  return r;
}

/// Score gradient of <upstream, E[Y(s + sigma Z)]>, estimated with the saved
/// draws: (1 / (M sigma)) sum_m <upstream, Y_m> Z_m.
template <typename T>
Matrix<T> perturbed_topk_backward(const Matrix<T>& upstream, const SelectionResult<T>& saved, const TopKConfig& cfg) {
  if (!saved.saved_noise) throw StateError("perturbed_topk_backward: forward noise was not saved");
  const auto& noise = *saved.saved_noise;
  const auto M = static_cast<int>(noise.rows());
  const auto n = noise.cols();
  const int k = cfg.k;
  if (M != cfg.num_samples) throw StateError("perturbed_topk_backward: draw count differs from forward");
  if (upstream.rows() != k || upstream.cols() != n)
    throw DimensionError("perturbed_topk_backward: upstream " + shape_str(upstream) + " vs indicator " +
                         shape_str(k, n));
  Matrix<T> grad = Matrix<T>::Zero(1, n);
  for (int m = 0; m < M; ++m) {
    const int* sel = saved.saved_selection.data() + static_cast<std::size_t>(m) * static_cast<std::size_t>(k);
    T w = 0;
    for (int row = 0; row < k; ++row) w += upstream(row, sel[row]);
    if (w != T(0)) grad += w * noise.row(m);
  }
  grad /= static_cast<T>(M) * static_cast<T>(saved.sigma);
  return grad;
}

template <typename T>
Matrix<T> select_features(const Matrix<T>& indicator, const Matrix<T>& frames) {
  if (indicator.cols() != frames.rows())
    throw DimensionError("select_features: indicator " + shape_str(indicator) + " vs frames " + shape_str(frames));
  return indicator * frames;
}

/// Tape node for the selector. Train mode yields the soft indicator with the
/// Monte-Carlo gradient; eval mode yields the hard indicator as a constant.
/// `info`, when given, receives the indices / indicator of this call.
template <typename T>
Var<T> perturbed_topk(Var<T> scores, const TopKConfig& cfg, const RngStream& rng,
                      SelectionResult<T>* info = nullptr) {
  auto& tape = *scores.tape;
  if (cfg.mode == Mode::eval) {
    auto hard = hard_topk_indicator(scores.value(), cfg.k);
    auto v = tape.constant(hard.indicator);
    if (info) *info = std::move(hard);
    return v;
  }
  auto fwd = std::make_shared<SelectionResult<T>>(perturbed_topk_forward(scores.value(), cfg, rng));
  Matrix<T> indicator = fwd->indicator;
  if (info) {
    info->indicator = fwd->indicator;
    info->indices.clear();
    info->sigma = fwd->sigma;
  }
  return tape.push(std::move(indicator), scores.requires_grad(),
                   [is = scores.id, fwd, cfg](Tape<T>& t, std::size_t self) {
                     t.add_grad(is, perturbed_topk_backward(t.grad(self), *fwd, cfg));
                   });
}

}  // namespace vegas::topk
