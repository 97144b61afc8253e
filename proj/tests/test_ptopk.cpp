#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "test_helpers.hpp"
#include "vegas/ptopk.hpp"

using namespace vegas;
using namespace vegas::topk;
using vegas::testing::random_matrix;

namespace {

Matrix<double> row(std::initializer_list<double> v) {
  Matrix<double> m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

TopKConfig train_cfg(int k, double sigma, int M) { return TopKConfig{k, sigma, M, Mode::train}; }

}  // namespace

// ------------------------------------------------------------- hard top-k

TEST(HardTopK, HandSort) {
  auto r = hard_topk_indicator(row({0.1, 0.9, 0.5}), 2);
  EXPECT_EQ(r.indices, (std::vector<int>{1, 2}));
  EXPECT_EQ(r.indicator(0, 1), 1.0);
  EXPECT_EQ(r.indicator(1, 2), 1.0);
  EXPECT_EQ(r.indicator.sum(), 2.0);
}

TEST(HardTopK, KEqualsNIsIdentity) {
  auto r = hard_topk_indicator(row({3, 1, 2, 0}), 4);
  EXPECT_EQ(r.indicator, (Matrix<double>::Identity(4, 4)));
}

TEST(HardTopK, TieGoesToLowerIndex) {
  auto r = hard_topk_indicator(row({0.5, 0.5, 0.1}), 1);
  EXPECT_EQ(r.indices, std::vector<int>{0});
}

TEST(HardTopK, KGreaterThanNIsDimensionError) {
  EXPECT_THROW(hard_topk_indicator(row({1, 2}), 3), DimensionError);
}

TEST(PerturbedTopK, NonPositiveSigmaIsConfigError) {
  RngStream rng(1, {});
  EXPECT_THROW(perturbed_topk_forward(row({1, 2}), train_cfg(1, 0.0, 10), rng), ConfigError);
  EXPECT_THROW(perturbed_topk_forward(row({1, 2}), train_cfg(1, -1.0, 10), rng), ConfigError);
}

// ----------------------------------------------------------------- forward

TEST(PerturbedTopK, SymmetricScoresSplitEvenly) {
  RngStream rng(2, {});
  auto r = perturbed_topk_forward(row({0, 0}), train_cfg(1, 1.0, 10000), rng);
  // 3 standard errors of a Bernoulli(0.5) mean over 10^4 draws
  EXPECT_NEAR(r.indicator(0, 0), 0.5, 3 * 0.5 / 100.0);
  EXPECT_NEAR(r.indicator(0, 1), 0.5, 3 * 0.5 / 100.0);
}

TEST(PerturbedTopK, VanishingNoiseMatchesHard) {
  RngStream rng(3, {});
  auto r = perturbed_topk_forward(row({1, 0, -1}), train_cfg(1, 1e-6, 100), rng);
  auto hard = hard_topk_indicator(row({1, 0, -1}), 1);
  EXPECT_LE((r.indicator - hard.indicator).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(PerturbedTopK, MatchesBruteForceOracle) {
  // Independent oracle: its own generator stream, plain argmax loop, 10^6 draws.
  RngStream oracle_rng(999, {7, 7, 7});
  const double s[3] = {1, 0, -1};
  std::array<double, 3> counts{};
  const int n_oracle = 1000000;
  for (int m = 0; m < n_oracle; ++m) {
    double best = -1e300;
    int arg = 0;
    for (int j = 0; j < 3; ++j) {
      double v = s[j] + oracle_rng.normal();
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    counts[static_cast<std::size_t>(arg)] += 1;
  }
  RngStream rng(4, {});
  auto r = perturbed_topk_forward(row({1, 0, -1}), train_cfg(1, 1.0, 10000), rng);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.indicator(0, j), counts[static_cast<std::size_t>(j)] / n_oracle, 0.02);
}

TEST(SelectFeatures, IdentityGatherAndConvexCombination) {
  RngStream rng(5, {});
  auto frames = random_matrix(rng, 4, 3);
  EXPECT_EQ(select_features<double>(Matrix<double>::Identity(4, 4), frames), frames);
  auto hard = hard_topk_indicator(row({0.1, 0.7, 0.3, 0.9}), 2);
  auto g = select_features(hard.indicator, frames);
  EXPECT_EQ(g.row(0), frames.row(1));
  EXPECT_EQ(g.row(1), frames.row(3));
  Matrix<double> soft = Matrix<double>::Zero(1, 4);
  soft(0, 0) = soft(0, 1) = 0.5;
  EXPECT_LT((select_features(soft, frames) - 0.5 * (frames.row(0) + frames.row(1))).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(select_features<double>(Matrix<double>::Identity(3, 3), frames), DimensionError);
}

// ---------------------------------------------------------------- backward

TEST(PerturbedTopKBackward, TwoFrameClosedForm) {
  // P(select 0) = Phi((s0 - s1) / (sigma sqrt 2)); derivative at 0 is phi(0)/sqrt 2.
  const double expected = 1.0 / std::sqrt(2.0 * std::numbers::pi) / std::sqrt(2.0);
  RngStream rng(6, {});
  auto cfg = train_cfg(1, 1.0, 100000);
  auto fwd = perturbed_topk_forward(row({0, 0}), cfg, rng);
  Matrix<double> up = row({1, 0});
  auto g = perturbed_topk_backward(up, fwd, cfg);
  EXPECT_NEAR(expected, 0.2821, 1e-4);
  EXPECT_NEAR(g(0, 0), expected, 0.01);
  EXPECT_NEAR(g(0, 1), -expected, 0.01);
}

TEST(PerturbedTopKBackward, ZeroUpstreamGivesZero) {
  RngStream rng(7, {});
  auto cfg = train_cfg(2, 0.5, 1000);
  auto fwd = perturbed_topk_forward(row({0.3, -0.2, 0.8, 0.1}), cfg, rng);
  auto g = perturbed_topk_backward<double>(Matrix<double>::Zero(2, 4), fwd, cfg);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PerturbedTopKBackward, MissingNoiseIsStateError) {
  auto cfg = train_cfg(1, 1.0, 10);
  auto hard = hard_topk_indicator(row({1, 2}), 1);
  EXPECT_THROW(perturbed_topk_backward<double>(Matrix<double>::Zero(1, 2), hard, cfg), StateError);
  RngStream rng(8, {});
  auto fwd = perturbed_topk_forward(row({1, 2}), cfg, rng);
  EXPECT_THROW(perturbed_topk_backward<double>(Matrix<double>::Zero(1, 2), fwd, train_cfg(1, 1.0, 20)), StateError);
}

namespace {

/// Forward expectation of <c, E[Y] F> evaluated on an explicit noise matrix.
double chain_value(const Matrix<double>& scores, const Matrix<double>& noise, double sigma, int k,
                   const Matrix<double>& cf) {
  const int n = static_cast<int>(scores.cols());
  std::vector<double> perturbed(static_cast<std::size_t>(n));
  std::vector<int> sel(static_cast<std::size_t>(k)), scratch;
  double total = 0;
  for (Eigen::Index m = 0; m < noise.rows(); ++m) {
    for (int j = 0; j < n; ++j) perturbed[static_cast<std::size_t>(j)] = scores(0, j) + sigma * noise(m, j);
    topk_indices(perturbed.data(), n, k, sel.data(), scratch);
    for (int r = 0; r < k; ++r) total += cf(r, sel[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(noise.rows());
}

}  // namespace

TEST(PerturbedTopKBackward, FullChainMatchesFiniteDifferencesOfExpectation) {
  // Loss = <c, indicator F> for fixed c (k x d) and F (n x d); its upstream on
  // the indicator is c F^T. The oracle differentiates the Monte-Carlo forward
  // expectation by central differences with common random numbers: the
  // estimator's own 10^4 draws extended by further draws from the same
  // generator so the reference is tight.
  const int M = 10000;
  const double sigma = 1.0;
  std::vector<double> est_all, fd_all;
  for (int inst = 0; inst < 10; ++inst) {
    RngStream gen(2024, {1, 0, static_cast<std::uint64_t>(inst)});
    const int n = 2 + static_cast<int>(gen.below(7));
    const int k = 1 + static_cast<int>(gen.below(static_cast<std::uint64_t>(std::min(3, n - 1))));
    Matrix<double> s = random_matrix(gen, 1, n, 0.5);
    Matrix<double> c = random_matrix(gen, k, 3);
    Matrix<double> F = random_matrix(gen, n, 3);
    Matrix<double> cf = c * F.transpose();

    auto cfg = train_cfg(k, sigma, M);
    RngStream sel_rng(77, {1, 1, static_cast<std::uint64_t>(inst)});
    auto fwd = perturbed_topk_forward(s, cfg, sel_rng);
    auto g = perturbed_topk_backward(cf, fwd, cfg);

    auto big_cfg = train_cfg(k, sigma, 21 * M);
    auto big = perturbed_topk_forward(s, big_cfg, sel_rng);
    ASSERT_EQ(big.saved_noise->topRows(M), *fwd.saved_noise);
    const double eps = 0.2 * sigma;
    for (int j = 0; j < n; ++j) {
      Matrix<double> sp = s, sm = s;
      sp(0, j) += eps;
      sm(0, j) -= eps;
      double fd = (chain_value(sp, *big.saved_noise, sigma, k, cf) - chain_value(sm, *big.saved_noise, sigma, k, cf)) /
                  (2 * eps);
      est_all.push_back(g(0, j));
      fd_all.push_back(fd);
    }
  }
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < est_all.size(); ++i) {
    diff += (est_all[i] - fd_all[i]) * (est_all[i] - fd_all[i]);
    ref += fd_all[i] * fd_all[i];
  }
  double rel = std::sqrt(diff / ref);
  std::cout << "aggregate rel-err over 10 instances: " << rel << "\n";
  EXPECT_LE(rel, 5e-2);
}

// --------------------------------------------------------------- tape node

TEST(PerturbedTopKNode, EvalModeIsConstantHardIndicator) {
  Tape<double> t;
  auto s = t.variable(row({0.2, 0.9, -0.3, 0.4}));
  SelectionResult<double> info;
  auto y = perturbed_topk(s, TopKConfig{2, 0.05, 10, Mode::eval}, RngStream(1, {}), &info);
  EXPECT_EQ(info.indices, (std::vector<int>{1, 3}));
  EXPECT_FALSE(y.requires_grad());
}

TEST(PerturbedTopKNode, TrainModeBackpropagatesEstimator) {
  Tape<double> t;
  auto s = t.variable(row({0, 0}));
  RngStream rng(11, {});
  auto cfg = train_cfg(1, 1.0, 20000);
  auto y = perturbed_topk(s, cfg, rng);
  auto loss = sum(mul(y, t.constant(row({1, 0}))));
  t.backward(loss);
  auto direct = perturbed_topk_backward(row({1, 0}), perturbed_topk_forward(row({0, 0}), cfg, rng), cfg);
  EXPECT_LT((s.grad() - direct).cwiseAbs().maxCoeff(), 1e-12);
}

// -------------------------------------------------------------- properties

TEST(PerturbedTopKProperty, RowStochasticAndMassK) {
  RngStream gen(31, {});
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + static_cast<int>(gen.below(64));
    const int k = 1 + static_cast<int>(gen.below(static_cast<std::uint64_t>(std::min(16, n))));
    const double sigma = std::exp(-6.0 + 8.0 * gen.uniform());
    const int M = 1 + static_cast<int>(gen.below(300));
    Matrix<double> s = random_matrix(gen, 1, n);
    auto r = perturbed_topk_forward(s, train_cfg(k, sigma, M), gen.child(static_cast<std::uint64_t>(trial)));
    ASSERT_EQ(r.indicator.rows(), k);
    for (int i = 0; i < k; ++i) EXPECT_NEAR(r.indicator.row(i).sum(), 1.0, 1e-5);
    for (int j = 0; j < n; ++j) {
      EXPECT_GE(r.indicator.col(j).sum(), 0.0);
      EXPECT_LE(r.indicator.col(j).sum(), 1.0 + 1e-5);
    }
    EXPECT_NEAR(r.indicator.sum(), k, 1e-4);
  }
}

TEST(PerturbedTopKProperty, VanishingNoiseRelativeToGap) {
  RngStream gen(32, {});
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(gen.below(30));
    const int k = 1 + static_cast<int>(gen.below(static_cast<std::uint64_t>(std::min(16, n))));
    Matrix<double> s = random_matrix(gen, 1, n);
    std::vector<double> sorted(s.data(), s.data() + n);
    std::sort(sorted.begin(), sorted.end());
    double gap = 1e300;
    for (int i = 1; i < n; ++i) gap = std::min(gap, sorted[static_cast<std::size_t>(i)] - sorted[static_cast<std::size_t>(i - 1)]);
    auto r = perturbed_topk_forward(s, train_cfg(k, 1e-6 * gap, 200), gen.child(static_cast<std::uint64_t>(trial)));
    EXPECT_LE((r.indicator - hard_topk_indicator(s, k).indicator).cwiseAbs().maxCoeff(), 1e-3);
  }
}

TEST(HardTopKProperty, ChronologicalAndPermutationEquivariant) {
  RngStream gen(33, {});
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(gen.below(64));
    const int k = 1 + static_cast<int>(gen.below(static_cast<std::uint64_t>(std::min(16, n))));
    Matrix<double> s = random_matrix(gen, 1, n);
    auto r = hard_topk_indicator(s, k);
    for (std::size_t i = 1; i < r.indices.size(); ++i) EXPECT_LT(r.indices[i - 1], r.indices[i]);

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    gen.shuffle(perm.begin(), perm.end());
    Matrix<double> ps(1, n);
    for (int j = 0; j < n; ++j) ps(0, perm[static_cast<std::size_t>(j)]) = s(0, j);
    auto pr = hard_topk_indicator(ps, k);
    std::vector<int> mapped;
    for (int idx : r.indices) mapped.push_back(perm[static_cast<std::size_t>(idx)]);
    std::sort(mapped.begin(), mapped.end());
    EXPECT_EQ(pr.indices, mapped);
  }
}
