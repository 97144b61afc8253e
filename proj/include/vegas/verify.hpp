#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vegas::verify {

struct CheckResult {
  std::string module;
  std::string op;
  double max_rel_err = 0;
  double tol = 0;
  int trials = 0;
  bool passed = false;
  std::string detail;
};

struct SuiteOptions {
  /// Random trials per exact op; instances / directions for the Monte-Carlo checks.
  int trials = 20;
  /// Scale every analytic gradient by 2 so the suites must fail.
  bool corrupt = false;
  std::uint64_t seed = 2024;
};

/// Every differentiable tape op in f64 against central differences, tolerance 1e-5.
std::vector<CheckResult> check_diffcore(const SuiteOptions& opt);
/// n=2 closed form at M=1e5 (absolute 0.01) and the stacked full-chain
/// finite-difference check at M=1e4 (relative 5e-2).
std::vector<CheckResult> check_ptopk(const SuiteOptions& opt);
/// n=3, k=1, s=(1,0,-1), sigma=1: forward at M=1e4 against a 1e6-draw
/// brute-force argmax on an unrelated generator, absolute 0.02 per index.
CheckResult check_topk_forward_oracle(std::uint64_t seed);
/// Row sums, total mass, ascending eval indices, tie-break, sigma -> 0 limit
/// and permutation equivariance over random n <= 64, k <= 16. max_rel_err
/// holds the number of violated cases.
CheckResult check_topk_properties(std::uint64_t seed, int trials = 200);
/// tam_forward w.r.t. t_s, attention, layer norm and the input, tolerance 1e-5.
std::vector<CheckResult> check_tam(const SuiteOptions& opt);
/// score_frames exactly (1e-5), then the answer loss through reader, TAM and
/// the perturbed selector w.r.t. the scorer (Monte-Carlo, 5e-2).
std::vector<CheckResult> check_lgs(const SuiteOptions& opt);

/// module: diffcore, ptopk, tam, lgs or all. Throws ConfigError otherwise.
std::vector<CheckResult> run_suites(const std::string& module, const SuiteOptions& opt);

}  // namespace vegas::verify
