#include "cvsim/telegates.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "test_util.hpp"

namespace cvsim::tele {
namespace {

constexpr double kPi = std::numbers::pi;

TEST(Teleport, NearlyIdealAtHugeSqueezing) {
  const GaussianState in = coherent(0.8, -1.3);
  const GaussianTeleReport rep = teleport(in, 20.0, 1.0, 1);
  EXPECT_GE(rep.fidelity_vs_ideal, 0.999999);
  EXPECT_LT((rep.output.mean() - in.mean()).norm(), 1e-12);
}

TEST(Teleport, ClassicalLimitWithoutSqueezing) {
  const GaussianTeleReport rep = teleport(coherent(0.3, 0.4), 0.0, 1.0, 2);
  EXPECT_NEAR(rep.output.cov()(0, 0), 1.5, 1e-12);
  EXPECT_NEAR(rep.output.cov()(1, 1), 1.5, 1e-12);
  EXPECT_NEAR(rep.fidelity_vs_ideal, 0.5, 1e-12);
}

TEST(Teleport, CoherentFidelityCurve) {
  for (double r : {0.1, 0.35, 0.7, 1.15, 1.7, 2.3}) {
    const GaussianTeleReport rep = teleport(coherent(-0.5, 0.9), r, 1.0, 3);
    EXPECT_NEAR(rep.fidelity_vs_ideal, 1.0 / (1.0 + std::exp(-2 * r)), 1e-9) << r;
    EXPECT_NEAR(rep.added_noise_x, std::exp(-2 * r), 1e-12);
    EXPECT_NEAR(rep.added_noise_p, std::exp(-2 * r), 1e-12);
  }
}

TEST(Teleport, UnitGainIsCovarianceAffine) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const GaussianState in = test::random_gaussian_state(1, seed, 1.0);
    const double r = 0.1 + 0.05 * static_cast<double>(seed % 20);
    const GaussianTeleReport rep = teleport(in, r, 1.0, seed);
    const Matrix expect = in.cov() + std::exp(-2 * r) * Matrix::Identity(2, 2);
    EXPECT_LT((rep.output.cov() - expect).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((rep.output.mean() - in.mean()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(rep.outcomes.size(), 2u);
  }
}

TEST(Teleport, AddedNoiseNonNegativeAcrossGain) {
  const GaussianState in = squeeze(coherent(0.2, 0.1), 0, 0.6);
  for (double g = 0.0; g <= 2.0; g += 0.25) {
    const GaussianTeleReport rep = teleport(in, 0.8, g, 4);
    EXPECT_GE(rep.added_noise_x, -1e-12) << g;
    EXPECT_GE(rep.added_noise_p, -1e-12) << g;
    EXPECT_LT((rep.output.mean() - g * in.mean()).norm(), 1e-12);
  }
  EXPECT_THROW(teleport(in, 0.8, 2.5, 0), std::invalid_argument);
  EXPECT_THROW(teleport(vacuum(2), 0.8, 1.0, 0), std::invalid_argument);
}

TEST(Teleport, EnsembleMatchesMonteCarloOverShots) {
  // Law of total variance: ensemble cov = E[conditional cov] + Cov[shot means].
  const GaussianState in = squeeze(coherent(0.5, -0.2), 0, 0.3);
  const double g = 0.7, r = 0.6;
  const int shots = 40000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sum2 = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d cond = Eigen::Matrix2d::Zero();
  for (int k = 0; k < shots; ++k) {
    const GaussianTeleReport rep = teleport(in, r, g, static_cast<std::uint64_t>(k));
    const Eigen::Vector2d m = rep.shot_output.mean();
    sum += m;
    sum2 += m * m.transpose();
    cond = rep.shot_output.cov();
  }
  const Eigen::Vector2d mean = sum / shots;
  const Eigen::Matrix2d spread = sum2 / shots - mean * mean.transpose();
  const GaussianTeleReport ref = teleport(in, r, g, 0);
  EXPECT_LT((mean - ref.output.mean()).cwiseAbs().maxCoeff(), 0.02);
  EXPECT_LT(((cond + spread) - ref.output.cov()).cwiseAbs().maxCoeff(), 0.03);
}

TEST(TeleSqueeze, UnitParameterBypasses) {
  const GaussianState in = coherent(0.1, 0.2);
  const GaussianTeleReport rep = tele_squeeze(in, 1.0, 0.5, 0);
  EXPECT_EQ(rep.output.cov(), in.cov());
  EXPECT_TRUE(rep.outcomes.empty());
  EXPECT_THROW(tele_squeeze(in, 0.0, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(tele_squeeze(in, -2.0, 1.0, 0), std::invalid_argument);
}

TEST(TeleSqueeze, IdealLimitOnVacuum) {
  const GaussianTeleReport a = tele_squeeze(vacuum(1), 0.5, 20.0, 1);
  EXPECT_NEAR(a.output.cov()(0, 0), 0.125, 1e-6);
  EXPECT_NEAR(a.output.cov()(1, 1), 2.0, 1e-6);
  const GaussianTeleReport b = tele_squeeze(vacuum(1), 2.0, 20.0, 1);
  EXPECT_NEAR(b.output.cov()(0, 0), 2.0, 1e-6);
  EXPECT_NEAR(b.output.cov()(1, 1), 0.125, 1e-6);
}

TEST(TeleSqueeze, MatchesSqueezeOnRandomInputs) {
  Rng rng(8);
  std::uniform_real_distribution<double> ly(std::log(0.3), std::log(3.0));
  for (std::uint64_t k = 0; k < 100; ++k) {
    const GaussianState in = test::random_gaussian_state(1, 1000 + k, 1.0);
    const double y = std::exp(ly(rng));
    const GaussianTeleReport rep = tele_squeeze(in, y, 20.0, k);
    const GaussianState ideal = squeeze(in, 0, -std::log(y));
    EXPECT_LT((rep.output.cov() - ideal.cov()).cwiseAbs().maxCoeff(), 1e-9) << y;
    EXPECT_LT((rep.output.mean() - ideal.mean()).cwiseAbs().maxCoeff(), 1e-9) << y;
  }
}

// Brute-force propagation of the same circuit with hand-written matrices:
// modes (input, ancilla), beam splitter T = y^2, p of the ancilla fed into p of
// the input with gain -sqrt((1-T)/T), ancilla discarded.
Eigen::Matrix2d dense_squeeze_gate_cov(const Eigen::Matrix2d& vin, double y, double r) {
  const double t = y * y, c = std::sqrt(t), s = std::sqrt(1 - t);
  Eigen::Matrix4d v = Eigen::Matrix4d::Zero();
  v.topLeftCorner<2, 2>() = vin;
  v(2, 2) = 0.5 * std::exp(-2 * r);
  v(3, 3) = 0.5 * std::exp(2 * r);
  Eigen::Matrix4d bs;
  bs << c, 0, s, 0,  //
      0, c, 0, s,    //
      -s, 0, c, 0,   //
      0, -s, 0, c;
  Eigen::Matrix4d ff = Eigen::Matrix4d::Identity();
  ff(1, 3) = -std::sqrt((1 - t) / t);
  const Eigen::Matrix4d out = ff * bs * v * bs.transpose() * ff.transpose();
  return out.topLeftCorner<2, 2>();
}

TEST(TeleSqueeze, FiniteSqueezingMatchesDenseOracle) {
  const double r = 1.15;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const GaussianState in = test::random_gaussian_state(1, seed, 0.7);
    const GaussianTeleReport rep = tele_squeeze(in, 0.5, r, seed);
    const Eigen::Matrix2d ref = dense_squeeze_gate_cov(in.cov(), 0.5, r);
    EXPECT_LT((rep.output.cov() - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(rep.added_noise_x, 0.75 * 0.5 * std::exp(-2 * r), 1e-12);
    EXPECT_NEAR(rep.added_noise_p, 0.0, 1e-12);
  }
  // y > 1 goes through the quarter-turn frame: noise moves to p.
  const GaussianState in = test::random_gaussian_state(1, 9, 0.7);
  const GaussianTeleReport rep = tele_squeeze(in, 2.0, r, 9);
  const Eigen::Matrix2d rot = rotation_block(kPi / 2);
  const Eigen::Matrix2d ref = rot.transpose() * dense_squeeze_gate_cov(rot * in.cov() * rot.transpose(), 0.5, r) * rot;
  EXPECT_LT((rep.output.cov() - ref).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(rep.added_noise_p, 0.75 * 0.5 * std::exp(-2 * r), 1e-12);
}

TEST(TeleSqueeze, ExcessNoiseShrinksWithSqueezing) {
  double prev = 1e9;
  for (double r = 0.0; r <= 3.0; r += 0.5) {
    const double noise = tele_squeeze(vacuum(1), 0.6, r, 0).added_noise_x;
    EXPECT_LT(noise, prev);
    EXPECT_NEAR(noise, (1 - 0.36) * 0.5 * std::exp(-2 * r), 1e-12);
    prev = noise;
  }
}

// ---------------------------------------------------------------------------

double third_central(const fock::FockState& s, const fock::CMatrix& op_small) {
  const int d = s.cutoff();
  const fock::CVector v = s.amps();
  const double mu = v.dot(op_small * v).real();
  const fock::CMatrix c = op_small - mu * fock::CMatrix::Identity(d, d);
  return v.dot(c * c * c * v).real();
}

TEST(CubicAncilla, GammaZeroIsGaussian) {
  const double r = 0.5;
  const fock::FockState anc = cubic_ancilla(0.0, r, 60);
  const fock::Moments m = fock::covariance_of(anc);
  EXPECT_NEAR(m.cov(0, 0), 0.5 * std::exp(2 * r), 1e-8);
  EXPECT_NEAR(m.cov(1, 1), 0.5 * std::exp(-2 * r), 1e-8);
  EXPECT_GE(fock::fidelity(anc, fock::squeezed_vacuum(-r, 60)), 1 - 1e-9);
  EXPECT_LT(anc.leakage(), 1e-4);
}

// For a real Gaussian envelope with Var x = v, exp(i g x^3) gives
// kappa3(p) = -3g/2 + 216 g^3 v^3 (Heisenberg p -> p + 3 g x^2 with operator ordering).
double kappa3_p(double gamma, double r_env) {
  const double v = 0.5 * std::exp(2 * r_env);
  return -1.5 * gamma + 216 * std::pow(gamma, 3) * v * v * v;
}

TEST(CubicAncilla, ThirdCumulants) {
  const int d = 80;
  // Operators on a larger space, restricted, so cubes are exact on low levels.
  const fock::CMatrix x = fock::x_op(d + 3).topLeftCorner(d, d);
  const fock::CMatrix p = fock::p_op(d + 3).topLeftCorner(d, d);
  for (auto [gamma, r_env] : {std::pair{0.05, 0.3}, std::pair{0.1, 0.3}, std::pair{0.08, 0.5}}) {
    const fock::FockState anc = cubic_ancilla(gamma, r_env, d);
    EXPECT_NEAR(third_central(anc, x), 0.0, 1e-8);
    EXPECT_NEAR(third_central(anc, p), kappa3_p(gamma, r_env), 5e-5) << gamma << " " << r_env;
  }
  // Positive once the envelope is wide enough to approximate a p eigenstate.
  EXPECT_GT(third_central(cubic_ancilla(0.08, 0.5, d), p), 0.1);

  // Independent check from the momentum wavefunction by direct Fourier quadrature.
  const fock::FockState anc = cubic_ancilla(0.05, 0.3, d);
  const auto xs = fock::uniform_grid(-12, 12, 2401);
  const auto ps = fock::uniform_grid(-12, 12, 1201);
  const double dx = xs[1] - xs[0], dp = ps[1] - ps[0];
  std::vector<double> w(ps.size());
  for (std::size_t j = 0; j < ps.size(); ++j) {
    std::complex<double> acc = 0.0;
    for (double x0 : xs) acc += cubic_ancilla_amplitude(0.05, 0.3, x0) * std::polar(1.0, -ps[j] * x0);
    w[j] = std::norm(acc * dx) / (2 * kPi);
  }
  double m1 = 0, m3 = 0, tot = 0;
  for (std::size_t j = 0; j < ps.size(); ++j) {
    tot += w[j] * dp;
    m1 += ps[j] * w[j] * dp;
  }
  for (std::size_t j = 0; j < ps.size(); ++j) m3 += std::pow(ps[j] - m1, 3) * w[j] * dp;
  EXPECT_NEAR(tot, 1.0, 1e-8);
  EXPECT_NEAR(third_central(anc, p), m3, 1e-6);
}

TEST(CubicAncilla, TooSmallCutoffIsReported) { EXPECT_THROW(cubic_ancilla(0.1, 2.3, 60), PhysicsError); }

TEST(TeleCubic, GaussianCaseMatchesGaussianBackend) {
  // With gamma = 0 and a Gaussian input the circuit is Gaussian; condition the
  // Gaussian backend on the same outcome and apply the same feedforward.
  const double r_env = 0.9;
  const GaussianState g_in = displace(squeeze(vacuum(1), 0, 0.3), 0, 0.4, -0.2);
  const fock::FockState f_in = fock::displace(fock::squeezed_vacuum(0.3, 60), 0, 0.4, -0.2);
  for (double m : {-1.1, 0.0, 0.7}) {
    const fock::FockState out = tele_cubic_conditional(f_in, 0.0, r_env, m);
    GaussianState g = tensor(g_in, squeeze(vacuum(1), 0, -r_env));
    g = beam_splitter(std::move(g), 0, 1, 0.5);
    g = condition_on(g, 1, 0.0, m);
    g = squeeze(displace(std::move(g), 0, -m, 0.0), 0, std::log(std::sqrt(2.0)));
    const fock::Moments mom = fock::covariance_of(out);
    EXPECT_LT((mom.cov - g.cov()).cwiseAbs().maxCoeff(), 1e-7) << m;
    EXPECT_LT((mom.mean - g.mean()).cwiseAbs().maxCoeff(), 1e-7) << m;
  }
}

TEST(TeleCubic, ZeroGammaEqualsFockTeleport) {
  const fock::FockState in = fock::coherent({0.3, -0.2}, 40);
  for (std::uint64_t seed : {5u, 6u}) {
    const FockTeleReport a = tele_cubic(in, 0.0, 1.5, seed);
    const FockTeleReport b = teleport_fock(in, 1.5, seed);
    EXPECT_EQ(a.outcomes, b.outcomes);
    EXPECT_LT(std::abs(a.fidelity_vs_ideal - b.fidelity_vs_ideal), 1e-9);
  }
}

TEST(TeleCubic, VacuumTeleportsAtTwentyDecibels) {
  const double r = squeezing_r(20.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_GE(teleport_fock(fock::vacuum(1, 60), r, seed).fidelity_vs_ideal, 0.99) << seed;
  }
}

double mean_fidelity(double gamma, double r_env, int seeds) {
  double acc = 0.0;
  for (int s = 0; s < seeds; ++s) acc += tele_cubic(fock::vacuum(1, 60), gamma, r_env, static_cast<std::uint64_t>(s)).fidelity_vs_ideal;
  return acc / seeds;
}

TEST(TeleCubic, CubicGateConvergesWithSqueezing) {
  const double f20 = mean_fidelity(0.1, squeezing_r(20.0), 8);
  const double f5 = mean_fidelity(0.1, squeezing_r(5.0), 8);
  EXPECT_GE(f20, 0.99);
  EXPECT_LE(f5, f20);
}

TEST(TeleCubic, OutcomeDistributionWidth) {
  // Var m = (Var x_in + Var x_anc) / 2.
  const double r_env = 0.6;
  const fock::FockState in = fock::vacuum(1, 12);
  Rng rng(21);
  const int n = 4000;
  const CubicOutcomeDistribution dist(in, r_env);
  double s1 = 0, s2 = 0;
  for (int k = 0; k < n; ++k) {
    const double m = dist.sample(rng);
    s1 += m;
    s2 += m * m;
  }
  const double var = s2 / n - (s1 / n) * (s1 / n);
  const double expect = 0.5 * (0.5 + 0.5 * std::exp(2 * r_env));
  EXPECT_NEAR(var, expect, 5 * expect * std::sqrt(2.0 / n));
}

TEST(TeleCubic, ShearOutsideRangeIsRejected) {
  CubicOptions opt;
  opt.max_shear = 1e-3;
  EXPECT_THROW(tele_cubic_conditional(fock::vacuum(1, 30), 0.1, 1.0, 2.0, opt), PhysicsError);
}

}  // namespace
}  // namespace cvsim::tele
