#include "vegas/verify.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>

#include "vegas/diffcore.hpp"
#include "vegas/lgs.hpp"
#include "vegas/pipeline/model.hpp"
#include "vegas/ptopk.hpp"
#include "vegas/tam.hpp"

namespace vegas::verify {

namespace {

constexpr double kExactTol = 1e-5;
constexpr double kMcTol = 5e-2;

Matrix<double> random_matrix(RngStream& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

// generic upstream: contract the output with fixed random weights
Var<double> contract(Var<double> out, const Matrix<double>& w) { return sum(mul(out, out.tape->constant(w))); }

using Builder = std::function<std::function<Var<double>(Tape<double>&)>(ParamStore<double>&, RngStream&)>;

// Worst relative error over `trials` fresh random problems.
CheckResult exact_check(const std::string& module, const std::string& op, const Builder& build, std::uint64_t stream,
                        const SuiteOptions& opt) {
  CheckResult r{module, op, 0, kExactTol, opt.trials, true, ""};
  for (int trial = 0; trial < opt.trials; ++trial) {
    RngStream rng(opt.seed, {stream, 0, static_cast<std::uint64_t>(trial)});
    ParamStore<double> store;
    auto fn = build(store, rng);
    auto g = finite_diff_gradcheck<double>(fn, store, 1e-5, opt.corrupt ? 2.0 : 1.0);
    if (!g.deterministic) {
      r.passed = false;
      r.detail = "non-deterministic at trial " + std::to_string(trial);
      r.max_rel_err = std::numeric_limits<double>::infinity();
      return r;
    }
    if (g.max_rel_err >= r.max_rel_err) {
      r.max_rel_err = g.max_rel_err;
      r.detail = "worst " + g.worst_param + " (trial " + std::to_string(trial) + ")";
    }
  }
  r.passed = r.max_rel_err <= r.tol;
  return r;
}

double stacked_rel_err(const std::vector<double>& est, const std::vector<double>& ref) {
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    diff += (est[i] - ref[i]) * (est[i] - ref[i]);
    norm += ref[i] * ref[i];
  }
  return std::sqrt(diff / norm);
}

// <cf, mean over draws of Y(scores + sigma Z)> for an explicit noise matrix
double chain_value(const Matrix<double>& scores, const Matrix<double>& noise, double sigma, int k,
                   const Matrix<double>& cf) {
  const int n = static_cast<int>(scores.cols());
  std::vector<double> perturbed(static_cast<std::size_t>(n));
  std::vector<int> sel(static_cast<std::size_t>(k)), scratch;
  double total = 0;
  for (Eigen::Index m = 0; m < noise.rows(); ++m) {
    for (int j = 0; j < n; ++j) perturbed[static_cast<std::size_t>(j)] = scores(0, j) + sigma * noise(m, j);
    topk::topk_indices(perturbed.data(), n, k, sel.data(), scratch);
    for (int r = 0; r < k; ++r) total += cf(r, sel[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(noise.rows());
}

}  // namespace

std::vector<CheckResult> check_diffcore(const SuiteOptions& opt) {
  std::vector<CheckResult> out;
  out.push_back(exact_check("diffcore", "linear", [](ParamStore<double>& s, RngStream& rng) {
    auto x = s.add("x", "g", random_matrix(rng, 4, 3));
    auto w = s.add("w", "g", random_matrix(rng, 3, 2));
    auto b = s.add("b", "g", random_matrix(rng, 1, 2));
    Matrix<double> c = random_matrix(rng, 4, 2);
    return std::function<Var<double>(Tape<double>&)>(
        [=](Tape<double>& t) { return contract(linear(t.param(x), t.param(w), t.param(b)), c); });
  }, 1, opt));
  out.push_back(exact_check("diffcore", "layer_norm", [](ParamStore<double>& s, RngStream& rng) {
    auto x = s.add("x", "g", random_matrix(rng, 3, 5));
    auto g = s.add("gamma", "g", random_matrix(rng, 1, 5));
    auto b = s.add("beta", "g", random_matrix(rng, 1, 5));
    Matrix<double> c = random_matrix(rng, 3, 5);
    return std::function<Var<double>(Tape<double>&)>(
        [=](Tape<double>& t) { return contract(layer_norm(t.param(x), t.param(g), t.param(b)), c); });
  }, 2, opt));
  out.push_back(exact_check("diffcore", "self_attention", [](ParamStore<double>& s, RngStream& rng) {
    auto p = make_attention<double>(s, "attn", "g", 8, 2, rng);
    auto x = s.add("x", "g", random_matrix(rng, 4, 8));
    Matrix<double> c = random_matrix(rng, 4, 8);
    return std::function<Var<double>(Tape<double>&)>([=](Tape<double>& t) {
      auto xv = t.param(x);
      return contract(multi_head_attention(t, p, xv, xv), c);
    });
  }, 3, opt));
  out.push_back(exact_check("diffcore", "cross_attention", [](ParamStore<double>& s, RngStream& rng) {
    auto p = make_attention<double>(s, "attn", "g", 4, 4, rng);
    auto q = s.add("q", "g", random_matrix(rng, 3, 4));
    auto kv = s.add("kv", "g", random_matrix(rng, 5, 4));
    Matrix<double> c = random_matrix(rng, 3, 4);
    return std::function<Var<double>(Tape<double>&)>(
        [=](Tape<double>& t) { return contract(multi_head_attention(t, p, t.param(q), t.param(kv)), c); });
  }, 4, opt));
  out.push_back(exact_check("diffcore", "softmax_cross_entropy", [](ParamStore<double>& s, RngStream& rng) {
    auto z = s.add("logits", "g", random_matrix(rng, 5, 4, 2.0));
    std::vector<int> target;
    for (int i = 0; i < 5; ++i) target.push_back(static_cast<int>(rng.below(4)));
    return std::function<Var<double>(Tape<double>&)>(
        [=](Tape<double>& t) { return softmax_cross_entropy(t.param(z), std::span<const int>(target)); });
  }, 5, opt));
  out.push_back(exact_check("diffcore", "elementwise", [](ParamStore<double>& s, RngStream& rng) {
    auto a = s.add("a", "g", random_matrix(rng, 3, 4));
    auto b = s.add("b", "g", random_matrix(rng, 3, 4));
    auto r1 = s.add("row", "g", random_matrix(rng, 1, 4));
    Matrix<double> c = random_matrix(rng, 3, 4);
    return std::function<Var<double>(Tape<double>&)>([=](Tape<double>& t) {
      auto av = t.param(a), bv = t.param(b);
      auto y = add(mul(av, bv), scale(sub(av, bv), 0.5));
      return contract(add_row(gelu(y), t.param(r1)), c);
    });
  }, 6, opt));
  out.push_back(exact_check("diffcore", "matmul_mean", [](ParamStore<double>& s, RngStream& rng) {
    auto a = s.add("a", "g", random_matrix(rng, 3, 4));
    auto m = s.add("m", "g", random_matrix(rng, 4, 2));
    auto b = s.add("b", "g", random_matrix(rng, 2, 4));
    return std::function<Var<double>(Tape<double>&)>([=](Tape<double>& t) {
      auto av = t.param(a);
      auto mm = matmul(softmax_rows(av), t.param(m));
      auto nt = matmul_nt(av, t.param(b));
      return add(sum(mean_rows(mm)), mean(mul(nt, nt)));
    });
  }, 7, opt));
  out.push_back(exact_check("diffcore", "structural", [](ParamStore<double>& s, RngStream& rng) {
    auto a = s.add("a", "g", random_matrix(rng, 3, 4));
    auto b = s.add("b", "g", random_matrix(rng, 2, 4));
    Matrix<double> targets = (random_matrix(rng, 5, 3).array() > 0).cast<double>();
    Matrix<double> c = random_matrix(rng, 4, 4);
    Matrix<double> w = random_matrix(rng, 2, 8);
    return std::function<Var<double>(Tape<double>&)>([=](Tape<double>& t) {
      auto both = concat_rows<double>({t.param(a), t.param(b)});
      auto y = transpose(slice_cols(both, 0, 3));
      auto z = slice_rows(both, 1, 4);
      const std::array<Var<double>, 2> parts{t.param(b), slice_rows(t.param(a), 0, 2)};
      auto side = concat_cols<double>(std::span<const Var<double>>(parts));
      return add(add(sigmoid_cross_entropy(transpose(y), targets), contract(transpose(z), c)), contract(side, w));
    });
  }, 8, opt));
  return out;
}

std::vector<CheckResult> check_ptopk(const SuiteOptions& opt) {
  std::vector<CheckResult> out;
  const double fudge = opt.corrupt ? 2.0 : 1.0;
  {
    // P(select 0) = Phi((s0 - s1) / (sigma sqrt 2)), slope phi(0)/sqrt 2 at s = 0
    const double expected = 1.0 / std::sqrt(2.0 * std::numbers::pi) / std::sqrt(2.0);
    topk::TopKConfig cfg{1, 1.0, 100000, topk::Mode::train};
    Matrix<double> s = Matrix<double>::Zero(1, 2);
    auto fwd = topk::perturbed_topk_forward(s, cfg, RngStream(opt.seed, {10, 0, 0}));
    Matrix<double> up(1, 2);
    up << 1, 0;
    Matrix<double> g = fudge * topk::perturbed_topk_backward(up, fwd, cfg);
    CheckResult r{"ptopk", "two_frame_closed_form", 0, 0.01, 1, false, "absolute error, M=1e5"};
    r.max_rel_err = std::max(std::abs(g(0, 0) - expected), std::abs(g(0, 1) + expected));
    r.passed = r.max_rel_err <= r.tol;
    out.push_back(r);
  }
  out.push_back(check_topk_forward_oracle(opt.seed));
  out.push_back(check_topk_properties(opt.seed));
  {
    // loss = <c, indicator F>; the reference differentiates the MC forward
    // expectation with the estimator's own draws extended 21-fold
    const int M = 10000;
    const double sigma = 1.0;
    const int instances = std::max(opt.trials, 10);
    std::vector<double> est, ref;
    for (int inst = 0; inst < instances; ++inst) {
      RngStream gen(opt.seed, {1, 0, static_cast<std::uint64_t>(inst)});
      const int n = 2 + static_cast<int>(gen.below(7));
      const int k = 1 + static_cast<int>(gen.below(static_cast<std::uint64_t>(std::min(3, n - 1))));
      Matrix<double> s = random_matrix(gen, 1, n, 0.5);
      Matrix<double> c = random_matrix(gen, k, 3);
      Matrix<double> F = random_matrix(gen, n, 3);
      Matrix<double> cf = c * F.transpose();
      RngStream sel(77, {1, 1, static_cast<std::uint64_t>(inst)});
      topk::TopKConfig cfg{k, sigma, M, topk::Mode::train};
      auto fwd = topk::perturbed_topk_forward(s, cfg, sel);
      Matrix<double> g = fudge * topk::perturbed_topk_backward(cf, fwd, cfg);
      auto big = topk::perturbed_topk_forward(s, topk::TopKConfig{k, sigma, 21 * M, topk::Mode::train}, sel);
      const double eps = 0.2 * sigma;
      for (int j = 0; j < n; ++j) {
        Matrix<double> sp = s, sm = s;
        sp(0, j) += eps;
        sm(0, j) -= eps;
        ref.push_back((chain_value(sp, *big.saved_noise, sigma, k, cf) - chain_value(sm, *big.saved_noise, sigma, k, cf)) /
                      (2 * eps));
        est.push_back(g(0, j));
      }
    }
    CheckResult r{"ptopk", "full_chain", stacked_rel_err(est, ref), kMcTol, instances, false,
                  "stacked over " + std::to_string(instances) + " instances, M=1e4"};
    r.passed = r.max_rel_err <= r.tol;
    out.push_back(r);
  }
  return out;
}

CheckResult check_topk_forward_oracle(std::uint64_t seed) {
  const double s[3] = {1, 0, -1};
  std::array<double, 3> counts{};
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  const int draws = 1000000;
  for (int m = 0; m < draws; ++m) {
    int arg = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < 3; ++j) {
      const double v = s[j] + z(gen);
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    counts[static_cast<std::size_t>(arg)] += 1;
  }
  Matrix<double> scores(1, 3);
  scores << 1, 0, -1;
  auto r = topk::perturbed_topk_forward(scores, topk::TopKConfig{1, 1.0, 10000, topk::Mode::train},
                                        RngStream(seed, {11, 0, 0}));
  CheckResult out{"ptopk", "forward_oracle", 0, 0.02, 1, false, "absolute, M=1e4 vs 1e6 brute force"};
  for (int j = 0; j < 3; ++j)
    out.max_rel_err = std::max(out.max_rel_err, std::abs(r.indicator(0, j) - counts[static_cast<std::size_t>(j)] / draws));
  out.passed = out.max_rel_err <= out.tol;
  return out;
}

CheckResult check_topk_properties(std::uint64_t seed, int trials) {
  int bad = 0;
  std::string first;
  auto fail = [&](const std::string& what, int trial) {
    if (!bad++) first = what + " (trial " + std::to_string(trial) + ")";
  };
  RngStream gen(seed, {12, 0, 0});
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 1 + static_cast<int>(gen.below(64));
    const int k = 1 + static_cast<int>(gen.below(static_cast<std::uint64_t>(std::min(16, n))));
    Matrix<double> s = random_matrix(gen, 1, n);

    const double sigma = std::exp(-6.0 + 8.0 * gen.uniform());
    const int M = 1 + static_cast<int>(gen.below(300));
    auto soft = topk::perturbed_topk_forward(s, topk::TopKConfig{k, sigma, M, topk::Mode::train},
                                             gen.child(static_cast<std::uint64_t>(trial)));
    for (int i = 0; i < k; ++i)
      if (std::abs(soft.indicator.row(i).sum() - 1.0) > 1e-5) fail("row sum", trial);
    for (int j = 0; j < n; ++j)
      if (soft.indicator.col(j).sum() < 0 || soft.indicator.col(j).sum() > 1.0 + 1e-5) fail("column sum", trial);
    if (std::abs(soft.indicator.sum() - k) > 1e-4) fail("total mass", trial);

    auto hard = topk::hard_topk_indicator(s, k);
    for (std::size_t i = 1; i < hard.indices.size(); ++i)
      if (hard.indices[i - 1] >= hard.indices[i]) fail("eval indices not ascending", trial);

    // permutation equivariance of the selected set
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    gen.shuffle(perm.begin(), perm.end());
    Matrix<double> ps(1, n);
    for (int j = 0; j < n; ++j) ps(0, perm[static_cast<std::size_t>(j)]) = s(0, j);
    std::vector<int> mapped;
    for (int idx : hard.indices) mapped.push_back(perm[static_cast<std::size_t>(idx)]);
    std::sort(mapped.begin(), mapped.end());
    if (topk::hard_topk_indicator(ps, k).indices != mapped) fail("permutation equivariance", trial);

    // sigma -> 0 at 1e-6 of the smallest score gap
    if (n >= 2) {
      std::vector<double> sorted(s.data(), s.data() + n);
      std::sort(sorted.begin(), sorted.end());
      double gap = std::numeric_limits<double>::infinity();
      for (int i = 1; i < n; ++i)
        gap = std::min(gap, sorted[static_cast<std::size_t>(i)] - sorted[static_cast<std::size_t>(i - 1)]);
      auto limit = topk::perturbed_topk_forward(s, topk::TopKConfig{k, 1e-6 * gap, 100, topk::Mode::train},
                                                gen.child(1000 + static_cast<std::uint64_t>(trial)));
      if ((limit.indicator - hard.indicator).cwiseAbs().maxCoeff() > 1e-3) fail("vanishing-noise limit", trial);
    }

    // ties go to the lower index
    if (n >= 2) {
      Matrix<double> tied = Matrix<double>::Constant(1, n, 0.5);
      auto t = topk::hard_topk_indicator(tied, k);
      for (int i = 0; i < k; ++i)
        if (t.indices[static_cast<std::size_t>(i)] != i) fail("tie-break", trial);
    }
  }
  CheckResult out{"ptopk", "structural_invariants", static_cast<double>(bad), 0, trials, bad == 0,
                  bad ? "first violation: " + first : "n <= 64, k <= 16"};
  return out;
}

std::vector<CheckResult> check_tam(const SuiteOptions& opt) {
  std::vector<CheckResult> out;
  out.push_back(exact_check("tam", "tam_forward", [](ParamStore<double>& s, RngStream& rng) {
    auto p = tam::init_tam<double>(s, 4, 8, 2, rng);
    // the zero-initialized output projection would hide the attention path
    s[p.attn.output.weight].value = random_matrix(rng, 8, 8, 0.5);
    s[p.ln.gamma].value = random_matrix(rng, 1, 8);
    auto f = s.add("f_v", "input", random_matrix(rng, 4, 8));
    Matrix<double> c = random_matrix(rng, 4, 8);
    return std::function<Var<double>(Tape<double>&)>(
        [=](Tape<double>& t) { return contract(tam::tam_forward(t, p, t.param(f)), c); });
  }, 20, opt));
  return out;
}

namespace {

struct SmallSetup {
  synth::PrototypeBank bank;
  pipeline::Model<double> model;
};

SmallSetup small_setup(std::uint64_t seed) {
  synth::BankConfig bc;
  bc.P = 8;
  bc.d_raw = 8;
  bc.d_text = 8;
  pipeline::ModelDims dims;
  dims.n = 9;
  dims.k = 3;
  dims.d_raw = dims.d_text = dims.d = dims.d_model = 8;
  dims.heads = 2;
  dims.P = 8;
  return {synth::gen_prototypes(bc, seed), pipeline::build_model<double>(dims, seed)};
}

std::vector<std::size_t> scorer_entries(const ParamStore<double>& store) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store.at(i).group == "scorer") idx.push_back(i);
  return idx;
}

}  // namespace

std::vector<CheckResult> check_lgs(const SuiteOptions& opt) {
  std::vector<CheckResult> out;
  out.push_back(exact_check("lgs", "score_frames", [](ParamStore<double>& s, RngStream& rng) {
    auto p = lgs::make_scorer<double>(s, 6, 5, 8, 2, rng);
    auto frames = s.add("frames", "input", random_matrix(rng, 7, 6));
    Matrix<double> q = random_matrix(rng, 2, 5), a = random_matrix(rng, 1, 5);
    auto hint = lgs::fuse_hint<double>(q, &a);
    Matrix<double> c = random_matrix(rng, 1, 7);
    return std::function<Var<double>(Tape<double>&)>(
        [=](Tape<double>& t) { return contract(lgs::score_frames(t, p, t.param(frames), hint), c); });
  }, 30, opt));

  // Answer loss through reader, projector, TAM and the perturbed selector.
  // Directional derivatives along random scorer-space directions: the
  // estimator (M = 1e4, sigma as in stage lgs) against central differences of
  // the Monte-Carlo forward with 1e6 draws (common random numbers, the first
  // 1e4 shared). Step moves the scores by about 0.2 sigma, Richardson
  // extrapolated to remove the second-order step bias.
  const int M = 10000;
  const double sigma = 2.0;
  const int directions = std::max(opt.trials, 10);
  std::vector<double> est, ref;
  for (int dir = 0; dir < directions; ++dir) {
    auto setup = small_setup(opt.seed + static_cast<std::uint64_t>(dir));
    auto& model = setup.model;
    auto& store = model.store;
    synth::GenConfig gc;
    gc.n = model.dims.n;
    gc.k = model.dims.k;
    auto scenario =
        synth::gen_descriptive_composite(setup.bank, gc, synth::SeedKey{opt.seed, 40, static_cast<std::uint64_t>(dir)});
    pipeline::ForwardOptions fo;
    fo.mask = pipeline::Mask::QAV;
    fo.sampler_mode = topk::Mode::train;
    fo.sigma = sigma;
    fo.num_samples = M;
    const RngStream rng(opt.seed, {41, 0, static_cast<std::uint64_t>(dir)});
    const std::vector<int> target{scenario.answer_idx};
    auto loss_at = [&](int draws) {
      auto o = fo;
      o.num_samples = draws;
      Tape<double> tape(store);
      auto logits = pipeline::forward_answer(tape, model, scenario, o, rng);
      return softmax_cross_entropy(logits, std::span<const int>(target)).value()(0, 0);
    };
    auto scores_now = [&]() {
      Tape<double> tape(store);
      auto f = tam::emulate_encoder(tape, store, model.encoder, tape.constant(scenario.frames.cast<double>()));
      return Matrix<double>(lgs::score_frames(tape, model.scorer, f, lgs::fuse_hint<double>(scenario.hint.cast<double>())).value());
    };

    GradSet<double> grads = store.make_grad_set();
    {
      Tape<double> tape(store);
      auto logits = pipeline::forward_answer(tape, model, scenario, fo, rng);
      auto loss = softmax_cross_entropy(logits, std::span<const int>(target));
      tape.backward(loss);
      tape.accumulate(grads);
    }
    RngStream vr(opt.seed, {42, 0, static_cast<std::uint64_t>(dir)});
    const auto idx = scorer_entries(store);
    std::vector<Matrix<double>> v;
    double vnorm = 0;
    for (auto i : idx) {
      v.push_back(random_matrix(vr, store.at(i).value.rows(), store.at(i).value.cols()));
      vnorm += v.back().squaredNorm();
    }
    double directional = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      v[j] /= std::sqrt(vnorm);
      if (grads.grads[idx[j]].size()) directional += (grads.grads[idx[j]].array() * v[j].array()).sum();
    }
    auto shift = [&](double h) {
      for (std::size_t j = 0; j < idx.size(); ++j) store.at(idx[j]).value += h * v[j];
    };
    // step size from the score-space motion per unit step
    const double probe = 1e-6;
    shift(probe);
    Matrix<double> up = scores_now();
    shift(-2 * probe);
    Matrix<double> down = scores_now();
    shift(probe);
    const double motion = (up - down).cwiseAbs().maxCoeff() / (2 * probe);
    const double eps = motion > 0 ? 0.2 * sigma / motion : 1e-3;
    const int RM = 1000000;
    auto central = [&](double h) {
      shift(h);
      const double lp = loss_at(RM);
      shift(-2 * h);
      const double lm = loss_at(RM);
      shift(h);
      return (lp - lm) / (2 * h);
    };
    const double d1 = central(eps);
    const double fd = (4 * central(eps / 2) - d1) / 3;
    est.push_back((opt.corrupt ? 2.0 : 1.0) * directional);
    ref.push_back(fd);
  }
  CheckResult r{"lgs", "end_to_end_scorer", stacked_rel_err(est, ref), kMcTol, directions, false,
                "stacked over " + std::to_string(directions) + " directions, M=1e4"};
  r.passed = r.max_rel_err <= r.tol;
  out.push_back(r);
  return out;
}

std::vector<CheckResult> run_suites(const std::string& module, const SuiteOptions& opt) {
  if (opt.trials < 1) throw ConfigError("gradcheck: trials must be >= 1");
  std::vector<CheckResult> out;
  auto append = [&](std::vector<CheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  const bool all = module == "all";
  if (!all && module != "diffcore" && module != "ptopk" && module != "tam" && module != "lgs")
    throw ConfigError("unknown gradcheck module: " + module);
  if (all || module == "diffcore") append(check_diffcore(opt));
  if (all || module == "ptopk") append(check_ptopk(opt));
  if (all || module == "tam") append(check_tam(opt));
  if (all || module == "lgs") append(check_lgs(opt));
  return out;
}

}  // namespace vegas::verify
