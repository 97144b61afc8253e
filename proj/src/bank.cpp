#include "vegas/synthworld/bank.hpp"

#include <cmath>

#include "vegas/rng.hpp"

namespace vegas::synth {

namespace {

// Gaussian rows normalized to unit length; normalization in double so the
// float result is within rounding of 1.
Matrix<float> unit_rows(RngStream& rng, int rows, int cols) {
  Matrix<float> out(rows, cols);
  Eigen::VectorXd v(cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) v(j) = rng.normal();
    v /= v.norm();
    for (int j = 0; j < cols; ++j) out(i, j) = static_cast<float>(v(j));
  }
  return out;
}

Matrix<float> noisy_copies(const Matrix<float>& protos, const Eigen::MatrixXd& lift, double noise, RngStream& rng) {
  Matrix<float> out(protos.rows(), lift.cols());
  for (Eigen::Index i = 0; i < protos.rows(); ++i) {
    Eigen::RowVectorXd v = protos.row(i).cast<double>() * lift;
    v /= v.norm();
    Eigen::RowVectorXd z(v.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
    v += noise * z / z.norm();
    v /= v.norm();
    out.row(i) = v.cast<float>();
  }
  return out;
}

}  // namespace

PrototypeBank gen_prototypes(const BankConfig& cfg, std::uint64_t seed) {
  if (cfg.P < 8) throw ConfigError("prototype bank needs P >= 8");
  if (cfg.d_raw < 1 || cfg.d_text < 1) throw ConfigError("prototype bank dims must be >= 1");
  if (cfg.text_noise < 0) throw ConfigError("prototype bank text_noise must be >= 0");
  if (cfg.num_emotions < 2) throw ConfigError("prototype bank needs num_emotions >= 2");
  if (cfg.P > cfg.d_raw) throw ConfigError("prototype bank needs P <= d_raw for the least-squares captioner");

  PrototypeBank b;
  b.cfg = cfg;
  b.seed = seed;
  RngStream root(seed, {1, 0, 0});
  auto s_protos = root.child(0), s_words = root.child(1), s_dialog = root.child(2), s_special = root.child(3),
       s_bias = root.child(4);
  b.protos = unit_rows(s_protos, cfg.P, cfg.d_raw);
  Eigen::MatrixXd lift = Eigen::MatrixXd::Identity(cfg.d_raw, cfg.d_text);
  if (cfg.d_text != cfg.d_raw) {
    auto s_lift = root.child(5);
    for (Eigen::Index i = 0; i < lift.size(); ++i) lift.data()[i] = s_lift.normal() / std::sqrt(static_cast<double>(cfg.d_raw));
  }
  b.words = noisy_copies(b.protos, lift, cfg.text_noise, s_words);
  b.dialog = noisy_copies(b.protos, lift, cfg.text_noise, s_dialog);
  b.specials = unit_rows(s_special, static_cast<int>(QType::count), cfg.d_text);
  b.bias_direction = unit_rows(s_bias, 1, cfg.d_text);
  b.emotion_labels.resize(static_cast<std::size_t>(cfg.P));
  for (int c = 0; c < cfg.P; ++c) b.emotion_labels[static_cast<std::size_t>(c)] = c % cfg.num_emotions;

  Eigen::MatrixXd basis = b.protos.cast<double>().transpose();  // d_raw x P
  Eigen::MatrixXd gram = basis.transpose() * basis;
  b.decoder = (gram.ldlt().solve(basis.transpose())).cast<float>();
  return b;
}

double max_pairwise_cosine(const PrototypeBank& bank) {
  Eigen::MatrixXd p = bank.protos.cast<double>();
  Eigen::MatrixXd g = p * p.transpose();
  double worst = 0;
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = i + 1; j < g.cols(); ++j) worst = std::max(worst, std::abs(g(i, j)));
  return worst;
}

}  // namespace vegas::synth
