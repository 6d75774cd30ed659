#include "cvsim/fock.hpp"

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "cvsim/gaussian.hpp"
#include "test_util.hpp"

namespace cvsim::fock {
namespace {

constexpr double kPi = std::numbers::pi;

double factorial(int n) { return std::tgamma(n + 1.0); }

// Dense two-mode operators on a D^2 space, for an independent beam splitter oracle.
CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

TEST(FockConstruct, VacuumAndBasisStates) {
  const FockState v = vacuum(2, 10);
  EXPECT_EQ(v.amps()(0), Complex(1.0));
  EXPECT_EQ(v.dimension(), 100);
  const FockState f = fock(3, 5, {1, 2, 3});
  EXPECT_EQ(f.amp({1, 2, 3}), Complex(1.0));
  EXPECT_EQ(f.index(std::vector<int>{1, 2, 3}), 1 * 25 + 2 * 5 + 3);
  EXPECT_THROW(vacuum(4, 5), std::invalid_argument);
  EXPECT_THROW(fock(1, 5, {5}), std::out_of_range);
}

TEST(FockConstruct, CoherentIsPoisson) {
  const FockState c = coherent(1.0, 40);
  for (int n = 0; n < 12; ++n) EXPECT_NEAR(std::norm(c.amps()(n)), std::exp(-1.0) / factorial(n), 1e-13);
}

TEST(FockConstruct, SqueezedVacuumHasEvenSupport) {
  const FockState s = squeezed_vacuum(0.8, 60);
  for (int n = 1; n < 60; n += 2) EXPECT_LT(std::abs(s.amps()(n)), 1e-12);
  // Known closed form: c_{2m} = (-tanh r)^m sqrt((2m)!) / (2^m m! sqrt(cosh r)) for x -> e^{-r} x.
  const double t = std::tanh(0.8);
  for (int m = 0; m < 10; ++m) {
    const double expect = std::pow(-t, m) * std::sqrt(factorial(2 * m)) / (std::pow(2.0, m) * factorial(m)) / std::sqrt(std::cosh(0.8));
    EXPECT_NEAR(s.amps()(2 * m).real(), expect, 1e-9) << m;
  }
}

TEST(FockOperators, QuadraturesHermitianAndCanonical) {
  const int d = 30;
  const CMatrix x = x_op(d), p = p_op(d);
  EXPECT_LT((x - x.adjoint()).norm(), 1e-12);
  EXPECT_LT((p - p.adjoint()).norm(), 1e-12);
  const CMatrix comm = x * p - p * x;
  // [x, p] = i except in the last row/column, where truncation bites.
  EXPECT_LT((comm.topLeftCorner(d - 1, d - 1) - Complex(0, 1) * CMatrix::Identity(d - 1, d - 1)).norm(), 1e-12);
}

TEST(FockOperators, HermiteFunctionsAreOrthonormal) {
  const auto xs = uniform_grid(-15, 15, 3001);
  const Eigen::MatrixXd t = hermite_table(xs, 40);
  const Eigen::MatrixXd gram = t.transpose() * t * (xs[1] - xs[0]);
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(40, 40)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FockGates, BeamSplitterSinglePhoton) {
  for (double t : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    const FockState out = beam_splitter(fock(2, 6, {1, 0}), 0, 1, t);
    EXPECT_NEAR(out.amp({1, 0}).real(), std::sqrt(t), 1e-14);
    EXPECT_NEAR(out.amp({0, 1}).real(), -std::sqrt(1 - t), 1e-14);
  }
}

TEST(FockGates, BeamSplitterMatchesMatrixExponential) {
  // U = exp(theta (a_i^dag a_j - a_j^dag a_i)) with cos(theta) = sqrt(T), computed
  // densely on a generous two-mode space and compared on low-photon inputs.
  const int big = 16, d = 8;
  const double t = 0.3;
  const double theta = std::acos(std::sqrt(t));
  const CMatrix a = annihilation(big), id = CMatrix::Identity(big, big);
  const CMatrix a0 = kron(a, id), a1 = kron(id, a);
  const CMatrix gen = theta * (a0.adjoint() * a1 - a1.adjoint() * a0);
  const CMatrix u = gen.exp();

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  CVector small = CVector::Zero(d * d);
  CVector embedded = CVector::Zero(big * big);
  for (int n0 = 0; n0 < 4; ++n0)
    for (int n1 = 0; n1 + n0 < 4; ++n1) {
      const Complex c(g(rng), g(rng));
      small(n0 * d + n1) = c;
      embedded(n0 * big + n1) = c;
    }
  const double nrm = small.norm();
  small /= nrm;
  embedded /= nrm;
  const FockState out = beam_splitter(FockState(2, d, small), 0, 1, t);
  const CVector ref = u * embedded;
  for (int n0 = 0; n0 < d; ++n0)
    for (int n1 = 0; n1 < d; ++n1) EXPECT_LT(std::abs(out.amp({n0, n1}) - ref(n0 * big + n1)), 1e-12);

  // Reversed mode order is the transpose of the convention.
  const FockState rev = beam_splitter(FockState(2, d, small), 1, 0, t);
  const CMatrix u_rev = (-gen).exp();
  const CVector ref_rev = u_rev * embedded;
  for (int n0 = 0; n0 < d; ++n0)
    for (int n1 = 0; n1 < d; ++n1) EXPECT_LT(std::abs(rev.amp({n0, n1}) - ref_rev(n0 * big + n1)), 1e-12);
}

TEST(FockGates, BeamSplitterOnThreeModesLeavesSpectatorAlone) {
  const FockState in = tensor(tensor(fock(1, 6, {1}), coherent(0.4, 6, {.pad = 0, .leakage_budget = 1e-3})), fock(1, 6, {0}));
  const FockState a = beam_splitter(in, 0, 2, 0.5);
  const FockState b = tensor(tensor(fock(1, 6, {0}), coherent(0.4, 6, {.pad = 0, .leakage_budget = 1e-3})), fock(1, 6, {1}));
  const FockState c = tensor(tensor(fock(1, 6, {1}), coherent(0.4, 6, {.pad = 0, .leakage_budget = 1e-3})), fock(1, 6, {0}));
  // Expect (|1,.,0> - |0,.,1>)/sqrt 2.
  const Complex expect_b = -std::sqrt(0.5), expect_c = std::sqrt(0.5);
  EXPECT_NEAR(std::abs(overlap(b, a) - expect_b), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(overlap(c, a) - expect_c), 0.0, 1e-12);
}

TEST(FockGates, DisplacedVacuumIsCoherent) {
  for (auto [dx, dp] : {std::pair{0.7, -0.3}, std::pair{-1.5, 1.1}, std::pair{2.0, 0.0}}) {
    const FockState d = displace(vacuum(1, 60), 0, dx, dp);
    const FockState c = coherent(Complex(dx, dp) / std::sqrt(2.0), 60);
    EXPECT_GE(fidelity(d, c), 1 - 1e-6);
    const Moments m = covariance_of(d);
    EXPECT_NEAR(m.mean(0), dx, 1e-9);
    EXPECT_NEAR(m.mean(1), dp, 1e-9);
  }
}

TEST(FockGates, SqueezeMatchesGaussianBackend) {
  for (double r : {-1.2, -0.5, 0.3, 0.9, 1.2}) {
    const Moments m = covariance_of(squeezed_vacuum(r, 80));
    const GaussianState g = cvsim::squeeze(cvsim::vacuum(1), 0, r);
    EXPECT_LT((m.cov - g.cov()).cwiseAbs().maxCoeff(), 1e-4) << r;
  }
}

TEST(FockGates, PhaseMatchesGaussianBackend) {
  const FockState s = phase_shift(displace(squeezed_vacuum(0.5, 60), 0, 1.0, 0.2), 0, 0.7);
  const GaussianState g = cvsim::phase_shift(cvsim::displace(cvsim::squeeze(cvsim::vacuum(1), 0, 0.5), 0, 1.0, 0.2), 0, 0.7);
  const Moments m = covariance_of(s);
  EXPECT_LT((m.cov - g.cov()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((m.mean - g.mean()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FockGates, GeneralQuadraticHamiltonianIsPhaseForNumberOperator) {
  // H = (x^2 + p^2)/2 = n + 1/2, so exp(-i t H) is a phase rotation by -t up to global phase.
  const FockState in = coherent(Complex(0.8, 0.3), 40);
  const FockState a = apply_gaussian(in, 0, {.xx = 0.6, .pp = 0.6});
  const FockState b = phase_shift(in, 0, -0.6);
  EXPECT_GE(fidelity(a, b), 1 - 1e-10);
}

TEST(FockGates, RandomGaussianProgramsMatchGaussianBackend) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 4);
  for (int trial = 0; trial < 8; ++trial) {
    FockState f = vacuum(2, 80);
    GaussianState g = cvsim::vacuum(2);
    for (int step = 0; step < 6; ++step) {
      const int m = static_cast<int>(rng() % 2);
      switch (pick(rng)) {
        case 0: {
          const double r = 0.4 * u(rng);
          f = squeeze(std::move(f), m, r);
          g = cvsim::squeeze(std::move(g), m, r);
          break;
        }
        case 1: {
          const double th = kPi * u(rng);
          f = phase_shift(std::move(f), m, th);
          g = cvsim::phase_shift(std::move(g), m, th);
          break;
        }
        case 2: {
          const double t = 0.5 + 0.5 * u(rng);
          f = beam_splitter(std::move(f), m, 1 - m, t);
          g = cvsim::beam_splitter(std::move(g), m, 1 - m, t);
          break;
        }
        default: {
          const double dx = 0.5 * u(rng), dp = 0.5 * u(rng);
          f = displace(std::move(f), m, dx, dp);
          g = cvsim::displace(std::move(g), m, dx, dp);
          break;
        }
      }
      EXPECT_NEAR(f.norm(), 1.0, 1e-6);
    }
    const Moments mom = covariance_of(f);
    EXPECT_LT((mom.cov - g.cov()).cwiseAbs().maxCoeff(), 1e-4) << "trial " << trial;
    EXPECT_LT((mom.mean - g.mean()).cwiseAbs().maxCoeff(), 1e-4) << "trial " << trial;
  }
}

TEST(FockGates, LeakageBudgetIsEnforced) {
  EXPECT_THROW(squeezed_vacuum(2.5, 20), PhysicsError);
  EXPECT_NO_THROW(squeezed_vacuum(2.5, 20, {.pad = 40, .leakage_budget = 1.0}));
  const FockState loose = squeezed_vacuum(1.5, 20, {.pad = 40, .leakage_budget = 1.0});
  EXPECT_GT(loose.leakage(), 1e-4);
  EXPECT_GT(top_level_mass(loose), 1e-4);
  EXPECT_LT(top_level_mass(squeezed_vacuum(0.3, 40)), 1e-12);
}

TEST(FockCubic, ZeroIsIdentity) {
  const FockState in = coherent(Complex(0.5, -0.2), 40);
  EXPECT_GE(fidelity(apply_cubic(in, 0, 0.0), in), 1 - 1e-12);
}

TEST(FockCubic, HeisenbergShiftOnVacuum) {
  // p -> p + 3 gamma x^2, so <p> = 3 gamma <x^2> = 3 gamma / 2; <x> unchanged.
  for (double gamma : {0.05, 0.1, -0.08}) {
    const Moments m = covariance_of(apply_cubic(vacuum(1, 60), 0, gamma));
    EXPECT_NEAR(m.mean(0), 0.0, 1e-9);
    EXPECT_NEAR(m.mean(1), 1.5 * gamma, 1e-6) << gamma;
    // Var p = 1/2 + 9 gamma^2 Var(x^2) = 1/2 + 9 gamma^2 / 2.
    EXPECT_NEAR(m.cov(1, 1), 0.5 + 4.5 * gamma * gamma, 1e-6) << gamma;
  }
}

TEST(FockCubic, InverseRestoresInput) {
  const FockState in = coherent(Complex(0.3, 0.4), 60);
  const FockState back = apply_cubic(apply_cubic(in, 0, 0.1), 0, -0.1);
  EXPECT_GE(fidelity(back, in), 1 - 1e-8);
}

TEST(FockCubic, CommutesWithTranslationUpToShiftedPolynomial) {
  // exp(i g x^3) D(s) = D(s) exp(i g (x+s)^3)
  const double g = 0.06, s = 0.7;
  const FockState in = squeezed_vacuum(0.2, 60);
  const FockState lhs = apply_cubic(displace(in, 0, s, 0.0), 0, g);
  const double poly[] = {g * s * s * s, 3 * g * s * s, 3 * g * s, g};
  const FockState rhs = displace(apply_x_polynomial_phase(in, 0, poly), 0, s, 0.0);
  EXPECT_GE(fidelity(lhs, rhs), 1 - 1e-6);
}

TEST(FockCubic, AgreesWithPositionGridOracle) {
  // Multiply the wavefunction pointwise on a grid and project back.
  const double g = 0.08;
  const FockState in = coherent(Complex(0.4, 0.2), 60);
  Wavefunction wf = to_wavefunction(in, uniform_grid(-14, 14, 4001));
  for (std::size_t k = 0; k < wf.x.size(); ++k) wf.psi(static_cast<Eigen::Index>(k)) *= std::polar(1.0, g * std::pow(wf.x[k], 3));
  const Projection ref = project(wf, 60);
  EXPECT_GE(fidelity(apply_cubic(in, 0, g), ref.state), 1 - 1e-6);
}

TEST(FockControlledPhase, Examples) {
  for (int l = 0; l < 5; ++l) {
    const FockState in = fock(2, 5, {0, l});
    EXPECT_EQ(apply_controlled_phase(in, 0, 1).amps(), in.amps());
  }
  EXPECT_EQ(apply_controlled_phase(fock(2, 5, {1, 1}), 0, 1).amp({1, 1}), Complex(-1.0));
  EXPECT_EQ(apply_controlled_phase(fock(2, 5, {3, 2}), 1, 0).amp({3, 2}), Complex(1.0));
  const FockState s = beam_splitter(tensor(coherent(0.9, 20), coherent(Complex(0, 0.7), 20)), 0, 1, 0.4);
  EXPECT_LT((apply_controlled_phase(apply_controlled_phase(s, 0, 1), 0, 1).amps() - s.amps()).norm(), 1e-15);
  EXPECT_THROW(apply_controlled_phase(s, 0, 0), std::invalid_argument);
}

TEST(FockMeasure, VacuumHomodyneIsNormal) {
  const int n = 10000;
  Rng rng(11);
  std::vector<double> xs;
  const FockState v = vacuum(1, 8);
  for (int k = 0; k < n; ++k) xs.push_back(homodyne(v, 0, 0.3, rng).outcome);
  std::sort(xs.begin(), xs.end());
  double ks = 0.0;
  for (int k = 0; k < n; ++k) {
    const double cdf = 0.5 * std::erfc(-xs[static_cast<std::size_t>(k)]);  // N(0, 1/2)
    ks = std::max({ks, std::abs(cdf - static_cast<double>(k) / n), std::abs(cdf - static_cast<double>(k + 1) / n)});
  }
  EXPECT_LT(ks, 1.63 / std::sqrt(n));
}

TEST(FockMeasure, SinglePhotonHomodyneVariance) {
  const int n = 20000;
  Rng rng(12);
  double s1 = 0.0, s2 = 0.0;
  const FockState one = fock(1, 8, {1});
  for (int k = 0; k < n; ++k) {
    const double x = homodyne(one, 0, 0.0, rng).outcome;
    s1 += x;
    s2 += x * x;
  }
  const double var = s2 / n - (s1 / n) * (s1 / n);
  // Density 2 x^2 e^{-x^2} / sqrt(pi): E x^2 = 3/2, Var(x^2) = 3/2, so the sample variance has sd ~ 0.009.
  EXPECT_NEAR(var, 1.5, 0.05);
}

TEST(FockMeasure, HomodyneLeavesProductPartnerUntouched) {
  const FockState partner = coherent(Complex(0.6, -0.4), 20);
  const FockState s = tensor(squeezed_vacuum(0.4, 20), partner);
  const HomodyneResult res = homodyne(s, 0, 0.9, std::uint64_t{3});
  ASSERT_TRUE(res.state.has_value());
  EXPECT_GE(fidelity(*res.state, partner), 1 - 1e-12);
  const HomodyneResult last = homodyne(partner, 0, 0.0, std::uint64_t{3});
  EXPECT_FALSE(last.state.has_value());
}

TEST(FockMeasure, HomodyneConditioningMatchesGaussianBackend) {
  // Two-mode squeezed vacuum: conditional state of mode 1 after measuring x of mode 0.
  const FockState f = beam_splitter(tensor(squeezed_vacuum(0.5, 40), squeezed_vacuum(-0.5, 40)), 0, 1, 0.5);
  const GaussianState g = cvsim::beam_splitter(cvsim::squeeze(cvsim::squeeze(cvsim::vacuum(2), 0, 0.5), 1, -0.5), 0, 1, 0.5);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const HomodyneResult res = homodyne(f, 0, 0.4, seed);
    const GaussianState cond = condition_on(g, 0, 0.4, res.outcome);
    const Moments m = covariance_of(*res.state);
    EXPECT_LT((m.cov - cond.cov()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((m.mean - cond.mean()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FockMeasure, HomodyneSeedDeterminism) {
  const FockState s = coherent(Complex(0.5, 0.5), 20);
  EXPECT_EQ(homodyne(s, 0, 0.1, std::uint64_t{77}).outcome, homodyne(s, 0, 0.1, std::uint64_t{77}).outcome);
}

TEST(FockMeasure, PhotonCountOnCoherentIsPoisson) {
  const int n = 20000;
  Rng rng(13);
  std::vector<int> hist(8, 0);
  const FockState c = coherent(1.0, 30);
  for (int k = 0; k < n; ++k) {
    const int m = photon_count(c, 0, rng).photons;
    if (m < 8) ++hist[static_cast<std::size_t>(m)];
  }
  for (int m = 0; m < 5; ++m) {
    const double p = std::exp(-1.0) / factorial(m);
    const double sd = std::sqrt(n * p * (1 - p));
    EXPECT_NEAR(hist[static_cast<std::size_t>(m)], n * p, 4.5 * sd) << m;
  }
}

TEST(FockMeasure, PhotonCountCollapsesPartner) {
  // Beam-split single photon: detecting it in mode 0 leaves vacuum in mode 1.
  const FockState s = beam_splitter(fock(2, 6, {1, 0}), 0, 1, 0.5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const CountResult r = photon_count(s, 0, seed);
    ASSERT_TRUE(r.state.has_value());
    EXPECT_NEAR(std::norm(r.state->amp({r.photons == 1 ? 0 : 1})), 1.0, 1e-12);
  }
}

TEST(FockObservables, OverlapAndWigner) {
  const FockState s = beam_splitter(tensor(coherent(0.4, 20), squeezed_vacuum(0.3, 20)), 0, 1, 0.7);
  EXPECT_NEAR(std::abs(overlap(s, s) - 1.0), 0.0, 1e-12);

  const std::vector<double> axis = {-0.5, 0.0, 0.5};
  const Eigen::MatrixXd wv = wigner_grid(vacuum(1, 10), 0, axis, axis);
  EXPECT_NEAR(wv(1, 1), 1 / kPi, 1e-14);
  EXPECT_EQ(wv.maxCoeff(), wv(1, 1));
  EXPECT_NEAR(wv(0, 2), std::exp(-0.5) / kPi, 1e-14);

  const Eigen::MatrixXd w1 = wigner_grid(fock(1, 10, {1}), 0, std::vector<double>{0.0}, std::vector<double>{0.0});
  EXPECT_NEAR(w1(0, 0), -1 / kPi, 1e-14);

  // Integral over phase space is 1; matches the Gaussian closed form for a squeezed coherent state.
  const FockState sc = displace(squeezed_vacuum(0.4, 40), 0, 0.5, -0.3);
  const GaussianState gc = cvsim::displace(cvsim::squeeze(cvsim::vacuum(1), 0, 0.4), 0, 0.5, -0.3);
  const auto grid = uniform_grid(-6, 6, 121);
  const Eigen::MatrixXd w = wigner_grid(sc, 0, grid, grid);
  const double h = grid[1] - grid[0];
  EXPECT_NEAR(w.sum() * h * h, 1.0, 1e-6);
  const Eigen::Matrix2d vinv = gc.cov().inverse();
  for (int i = 0; i < 121; i += 17) {
    for (int j = 0; j < 121; j += 13) {
      const Eigen::Vector2d d = Eigen::Vector2d(grid[static_cast<std::size_t>(i)], grid[static_cast<std::size_t>(j)]) - gc.mean();
      const double ref = std::exp(-0.5 * d.dot(vinv * d)) / (2 * kPi * std::sqrt(gc.cov().determinant()));
      EXPECT_NEAR(w(i, j), ref, 1e-9);
    }
  }
}

TEST(FockProperties, NormPreservedUnderRandomGates) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FockState s = vacuum(3, 14);
  for (int step = 0; step < 30; ++step) {
    const int m = static_cast<int>(rng() % 3);
    switch (rng() % 5) {
      case 0: s = squeeze(std::move(s), m, 0.15 * u(rng)); break;
      case 1: s = phase_shift(std::move(s), m, 3 * u(rng)); break;
      case 2: s = beam_splitter(std::move(s), m, (m + 1) % 3, 0.5 + 0.5 * u(rng)); break;
      case 3: s = apply_controlled_phase(std::move(s), m, (m + 2) % 3); break;
      default: s = displace(std::move(s), m, 0.2 * u(rng), 0.2 * u(rng)); break;
    }
    ASSERT_NEAR(s.norm(), 1.0, 1e-6);
  }
  const double before = s.leakage();
  s = squeeze(std::move(s), 0, 0.1);
  EXPECT_GE(s.leakage(), before);
}

}  // namespace
}  // namespace cvsim::fock
