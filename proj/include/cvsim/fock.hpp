#pragma once

// Truncated photon-number-basis simulator for up to three modes.
//
// Amplitudes are stored row-major with mode 0 as the most significant index:
// |n0, n1, n2> lives at n0 D^2 + n1 D + n2. Single-mode gates are exponentiated
// on a padded working space and then cut back to the cutoff; the mass that
// falls outside is accumulated as leakage and the state is renormalized.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvsim/error.hpp"
#include "cvsim/gaussian.hpp"

namespace cvsim::fock {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

inline constexpr int kMaxModes = 3;
inline constexpr int kDefaultCutoff = 60;
inline constexpr double kNormTol = 1e-6;

struct Options {
  int pad = 40;                   // extra levels in the working space of single-mode gates
  double leakage_budget = 1e-4;   // per-operation truncation loss before PhysicsError
};

namespace detail {
struct FockAccess;
}

class FockState {
 public:
  FockState(int n_modes, int cutoff, CVector amps) : n_modes_(n_modes), cutoff_(cutoff), amps_(std::move(amps)) {
    if (n_modes_ < 1 || n_modes_ > kMaxModes) throw std::invalid_argument("FockState: mode count must be in [1, 3]");
    if (cutoff_ < 2) throw std::invalid_argument("FockState: cutoff must be at least 2");
    if (amps_.size() != dimension()) throw std::invalid_argument("FockState: amplitude count must equal cutoff^modes");
    if (!amps_.allFinite()) throw std::invalid_argument("FockState: non-finite amplitudes");
    if (std::abs(amps_.squaredNorm() - 1.0) > kNormTol) {
      throw std::invalid_argument("FockState: amplitudes are not normalized (norm^2 = " +
                                  std::to_string(amps_.squaredNorm()) + ")");
    }
  }

  int n_modes() const { return n_modes_; }
  int cutoff() const { return cutoff_; }
  Eigen::Index dimension() const {
    Eigen::Index d = 1;
    for (int k = 0; k < n_modes_; ++k) d *= cutoff_;
    return d;
  }
  const CVector& amps() const { return amps_; }
  double norm() const { return amps_.norm(); }
  /// Total probability discarded by truncation over this state's history.
  double leakage() const { return leakage_; }

  Eigen::Index index(std::span<const int> occupations) const {
    if (static_cast<int>(occupations.size()) != n_modes_) throw std::invalid_argument("index: wrong occupation count");
    Eigen::Index idx = 0;
    for (int n : occupations) {
      if (n < 0 || n >= cutoff_) throw std::out_of_range("occupation " + std::to_string(n) + " outside cutoff");
      idx = idx * cutoff_ + n;
    }
    return idx;
  }
  Complex amp(std::initializer_list<int> occupations) const {
    return amps_(index(std::span<const int>(occupations.begin(), occupations.size())));
  }

  void check_mode(int mode) const {
    if (mode < 0 || mode >= n_modes_) throw std::out_of_range("mode index " + std::to_string(mode) + " out of range");
  }

 private:
  friend struct detail::FockAccess;
  int n_modes_;
  int cutoff_;
  CVector amps_;
  double leakage_ = 0.0;
};

// ---------------------------------------------------------------------------
// Single-mode operators.

inline CMatrix annihilation(int dim) {
  CMatrix a = CMatrix::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}
inline CMatrix number_op(int dim) {
  CMatrix n = CMatrix::Zero(dim, dim);
  for (int k = 0; k < dim; ++k) n(k, k) = k;
  return n;
}
inline CMatrix x_op(int dim) {
  const CMatrix a = annihilation(dim);
  return (a + a.adjoint()) / std::sqrt(2.0);
}
inline CMatrix p_op(int dim) {
  const CMatrix a = annihilation(dim);
  return (a - a.adjoint()) / Complex(0.0, std::sqrt(2.0));
}

/// Normalized Hermite functions h_0..h_{dim-1} at x (eigenfunctions of the
/// number operator in the x representation, vacuum variance 1/2).
inline Eigen::VectorXd hermite_functions(double x, int dim) {
  Eigen::VectorXd h(dim);
  h(0) = std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * x * x);
  if (dim > 1) h(1) = std::sqrt(2.0) * x * h(0);
  for (int n = 1; n + 1 < dim; ++n) {
    h(n + 1) = std::sqrt(2.0 / (n + 1)) * x * h(n) - std::sqrt(static_cast<double>(n) / (n + 1)) * h(n - 1);
  }
  return h;
}

/// Rows: grid points; columns: Hermite functions.
inline Eigen::MatrixXd hermite_table(std::span<const double> xs, int dim) {
  Eigen::MatrixXd t(static_cast<Eigen::Index>(xs.size()), dim);
  for (std::size_t i = 0; i < xs.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = hermite_functions(xs[i], dim).transpose();
  return t;
}

namespace detail {

struct FockAccess {
  static CVector& amps(FockState& s) { return s.amps_; }
  static void add_leakage(FockState& s, double l) { s.leakage_ += l; }
  static void set_leakage(FockState& s, double l) { s.leakage_ = l; }
};

inline Eigen::Index ipow(int base, int exp) {
  Eigen::Index r = 1;
  for (int k = 0; k < exp; ++k) r *= base;
  return r;
}

/// Applies a D x D matrix to one tensor axis.
inline CVector apply_axis(const CVector& amps, int n_modes, int cutoff, int mode, const CMatrix& op) {
  const Eigen::Index inner = ipow(cutoff, n_modes - 1 - mode);
  const Eigen::Index outer = ipow(cutoff, mode);
  CVector out(amps.size());
  const CMatrix op_t = op.transpose();
  for (Eigen::Index o = 0; o < outer; ++o) {
    const Eigen::Index off = o * cutoff * inner;
    Eigen::Map<const CMatrix> in_block(amps.data() + off, inner, cutoff);
    Eigen::Map<CMatrix> out_block(out.data() + off, inner, cutoff);
    out_block.noalias() = in_block * op_t;
  }
  return out;
}

/// Amplitudes arranged as (levels of `mode`) x (all other modes, in order).
inline CMatrix mode_matrix(const FockState& s, int mode) {
  const int d = s.cutoff();
  const Eigen::Index inner = ipow(d, s.n_modes() - 1 - mode);
  const Eigen::Index outer = ipow(d, mode);
  CMatrix m(d, outer * inner);
  for (Eigen::Index o = 0; o < outer; ++o)
    for (int n = 0; n < d; ++n)
      for (Eigen::Index i = 0; i < inner; ++i) m(n, o * inner + i) = s.amps()(o * d * inner + n * inner + i);
  return m;
}

/// Renormalizes after truncation, records the lost mass, enforces the budget.
inline FockState finish(FockState s, CVector amps, const Options& opt, const char* what) {
  const double kept = amps.squaredNorm();
  const double lost = std::max(0.0, 1.0 - kept);
  if (lost > opt.leakage_budget) {
    throw PhysicsError(std::string(what) + ": truncation leakage " + std::to_string(lost) + " exceeds budget " +
                       std::to_string(opt.leakage_budget) + " at cutoff " + std::to_string(s.cutoff()));
  }
  if (!(kept > 0.0)) throw PhysicsError(std::string(what) + ": state vanished under truncation");
  FockAccess::amps(s) = amps / std::sqrt(kept);
  FockAccess::add_leakage(s, lost);
  return s;
}

inline CMatrix unitary_from_hermitian(const CMatrix& h) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
  const Eigen::VectorXd& lambda = es.eigenvalues();
  CVector phases(lambda.size());
  for (Eigen::Index k = 0; k < lambda.size(); ++k) phases(k) = std::exp(Complex(0.0, -lambda(k)));
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

inline FockState apply_single(FockState s, int mode, const CMatrix& full_unitary, const Options& opt, const char* what) {
  s.check_mode(mode);
  const int d = s.cutoff();
  const CMatrix u = full_unitary.topLeftCorner(d, d);
  CVector out = apply_axis(s.amps(), s.n_modes(), d, mode, u);
  return finish(std::move(s), std::move(out), opt, what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Constructors.

inline FockState fock(int n_modes, int cutoff, std::span<const int> occupations) {
  CVector amps = CVector::Zero(detail::ipow(cutoff, n_modes));
  FockState probe(n_modes, cutoff, [&] {
    CVector v = CVector::Zero(amps.size());
    v(0) = 1.0;
    return v;
  }());
  amps(probe.index(occupations)) = 1.0;
  return FockState(n_modes, cutoff, std::move(amps));
}
inline FockState fock(int n_modes, int cutoff, std::initializer_list<int> occupations) {
  return fock(n_modes, cutoff, std::span<const int>(occupations.begin(), occupations.size()));
}

inline FockState vacuum(int n_modes, int cutoff = kDefaultCutoff) {
  std::vector<int> zeros(static_cast<std::size_t>(std::max(n_modes, 0)), 0);
  return fock(n_modes, cutoff, zeros);
}

/// Single-mode coherent state |alpha>, alpha = (x + i p) / sqrt(2).
inline FockState coherent(Complex alpha, int cutoff = kDefaultCutoff, const Options& opt = {}) {
  CVector amps(cutoff);
  double log_fact = 0.0;
  for (int n = 0; n < cutoff; ++n) {
    if (n > 0) log_fact += std::log(static_cast<double>(n));
    const double mag = n == 0 ? 1.0 : std::exp(n * std::log(std::abs(alpha)) - 0.5 * log_fact);
    amps(n) = std::exp(-0.5 * std::norm(alpha)) * mag * std::polar(1.0, n * std::arg(alpha));
  }
  if (alpha == Complex(0.0)) {
    amps.setZero();
    amps(0) = 1.0;
  }
  CVector seed = CVector::Zero(cutoff);
  seed(0) = 1.0;
  return detail::finish(FockState(1, cutoff, seed), std::move(amps), opt, "coherent");
}

/// Tensor product of single- or multi-mode states with equal cutoff.
inline FockState tensor(const FockState& a, const FockState& b) {
  if (a.cutoff() != b.cutoff()) throw std::invalid_argument("tensor: cutoffs differ");
  CVector amps(a.amps().size() * b.amps().size());
  for (Eigen::Index i = 0; i < a.amps().size(); ++i) amps.segment(i * b.amps().size(), b.amps().size()) = a.amps()(i) * b.amps();
  FockState out(a.n_modes() + b.n_modes(), a.cutoff(), std::move(amps));
  detail::FockAccess::set_leakage(out, a.leakage() + b.leakage());
  return out;
}

/// Zero-pads or truncates every axis to a new cutoff (truncation renormalizes).
inline FockState resize_cutoff(const FockState& s, int cutoff) {
  const int n = s.n_modes(), d = s.cutoff();
  CVector amps = CVector::Zero(detail::ipow(cutoff, n));
  std::vector<int> occ(static_cast<std::size_t>(n), 0);
  for (Eigen::Index flat = 0; flat < s.amps().size(); ++flat) {
    Eigen::Index rem = flat, target = 0;
    bool inside = true;
    for (int k = n - 1; k >= 0; --k) {
      occ[static_cast<std::size_t>(k)] = static_cast<int>(rem % d);
      rem /= d;
    }
    for (int k = 0; k < n; ++k) {
      inside = inside && occ[static_cast<std::size_t>(k)] < cutoff;
      target = target * cutoff + occ[static_cast<std::size_t>(k)];
    }
    if (inside) amps(target) = s.amps()(flat);
  }
  CVector seed = CVector::Zero(amps.size());
  seed(0) = 1.0;
  FockState out(n, cutoff, seed);
  detail::FockAccess::set_leakage(out, s.leakage());
  return detail::finish(std::move(out), std::move(amps), Options{.pad = 0, .leakage_budget = 1.0}, "resize_cutoff");
}

// ---------------------------------------------------------------------------
// Position-representation bridge.

struct Wavefunction {
  std::vector<double> x;  // uniform grid
  CVector psi;
  double dx() const { return x.size() > 1 ? x[1] - x[0] : 1.0; }
};

inline std::vector<double> uniform_grid(double lo, double hi, int points) {
  std::vector<double> xs(static_cast<std::size_t>(points));
  const double h = (hi - lo) / (points - 1);
  for (int i = 0; i < points; ++i) xs[static_cast<std::size_t>(i)] = lo + i * h;
  return xs;
}

/// psi(x) = sum_n c_n h_n(x) for a single-mode state.
inline Wavefunction to_wavefunction(const FockState& s, std::vector<double> xs) {
  if (s.n_modes() != 1) throw std::invalid_argument("to_wavefunction: single-mode states only");
  const Eigen::MatrixXd table = hermite_table(xs, s.cutoff());
  return {std::move(xs), table.cast<Complex>() * s.amps()};
}

struct Projection {
  FockState state;
  double captured = 0.0;  // norm^2 inside the cutoff, relative to the input norm
};

/// Projects a grid wavefunction onto the first `cutoff` number states. The
/// captured fraction is measured against `norm2` when the grid does not hold
/// the whole function (default: the grid norm).
inline Projection project(const Wavefunction& wf, int cutoff, const Options& opt = {}, const char* what = "project",
                          std::optional<double> total_norm2 = std::nullopt) {
  const double norm2 = total_norm2.value_or(wf.psi.squaredNorm() * wf.dx());
  if (!(norm2 > 0.0)) throw std::invalid_argument("project: zero wavefunction");
  const Eigen::MatrixXd table = hermite_table(wf.x, cutoff);
  CVector c = (table.transpose().cast<Complex>() * wf.psi) * (wf.dx() / std::sqrt(norm2));
  const double captured = c.squaredNorm();
  CVector seed = CVector::Zero(cutoff);
  seed(0) = 1.0;
  return {detail::finish(FockState(1, cutoff, seed), std::move(c), opt, what), captured};
}

// ---------------------------------------------------------------------------
// Gates.

inline FockState phase_shift(FockState s, int mode, double theta) {
  cvsim::detail::require_finite(theta, "phase_shift: theta");
  s.check_mode(mode);
  CMatrix u = CMatrix::Zero(s.cutoff(), s.cutoff());
  for (int n = 0; n < s.cutoff(); ++n) u(n, n) = std::polar(1.0, theta * n);
  CVector out = detail::apply_axis(s.amps(), s.n_modes(), s.cutoff(), mode, u);
  detail::FockAccess::amps(s) = std::move(out);
  return s;
}

/// Single-mode quadratic Hamiltonian
///   H = (xx x^2 + pp p^2 + xp (x p + p x)) / 2 + lx x + lp p,   U = exp(-i H).
struct QuadraticHamiltonian {
  double xx = 0.0, pp = 0.0, xp = 0.0, lx = 0.0, lp = 0.0;
};

inline CMatrix quadratic_unitary(const QuadraticHamiltonian& h, int dim) {
  // Build squares one level higher so the retained block is exact.
  const CMatrix x = x_op(dim + 1), p = p_op(dim + 1);
  const CMatrix big = 0.5 * (h.xx * x * x + h.pp * p * p + h.xp * (x * p + p * x)) + h.lx * x + h.lp * p;
  CMatrix hm = big.topLeftCorner(dim, dim);
  hm = 0.5 * (hm + hm.adjoint()).eval();
  return detail::unitary_from_hermitian(hm);
}

inline FockState apply_gaussian(FockState s, int mode, const QuadraticHamiltonian& h, const Options& opt = {}) {
  return detail::apply_single(std::move(s), mode, quadratic_unitary(h, s.cutoff() + opt.pad), opt, "apply_gaussian");
}

/// Same map as cvsim::squeeze: x -> e^{-r} x.
inline FockState squeeze(FockState s, int mode, double r, const Options& opt = {}) {
  cvsim::detail::require_finite(r, "squeeze: r");
  return detail::apply_single(std::move(s), mode, quadratic_unitary({.xp = -r}, s.cutoff() + opt.pad), opt, "squeeze");
}

/// Same map as cvsim::displace: mean shifted by (dx, dp).
inline FockState displace(FockState s, int mode, double dx, double dp, const Options& opt = {}) {
  cvsim::detail::require_finite(dx, "displace: dx");
  cvsim::detail::require_finite(dp, "displace: dp");
  return detail::apply_single(std::move(s), mode, quadratic_unitary({.lx = -dp, .lp = dx}, s.cutoff() + opt.pad), opt,
                              "displace");
}

inline FockState squeezed_vacuum(double r, int cutoff = kDefaultCutoff, const Options& opt = {}) {
  return squeeze(vacuum(1, cutoff), 0, r, opt);
}

/// exp(i f(x)) with f(x) = sum_k coeffs[k] x^k, via the eigenbasis of the
/// truncated position operator on the padded working space.
inline FockState apply_x_polynomial_phase(FockState s, int mode, std::span<const double> coeffs, const Options& opt = {}) {
  for (double c : coeffs) cvsim::detail::require_finite(c, "apply_x_polynomial_phase: coefficient");
  const int dim = s.cutoff() + opt.pad;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x_op(dim).real());
  CVector phases(dim);
  for (int k = 0; k < dim; ++k) {
    const double xi = es.eigenvalues()(k);
    double f = 0.0;
    for (std::size_t j = coeffs.size(); j-- > 0;) f = f * xi + coeffs[j];
    phases(k) = std::polar(1.0, f);
  }
  const CMatrix v = es.eigenvectors().cast<Complex>();
  const CMatrix u = v * phases.asDiagonal() * v.adjoint();
  return detail::apply_single(std::move(s), mode, u, opt, "apply_x_polynomial_phase");
}

/// Cubic phase gate exp(i gamma x^3).
inline FockState apply_cubic(FockState s, int mode, double gamma, const Options& opt = {}) {
  const double coeffs[] = {0.0, 0.0, 0.0, gamma};
  return apply_x_polynomial_phase(std::move(s), mode, coeffs, opt);
}

/// exp(i pi n_i n_j): phase (-1)^{n_i n_j}, exact on the truncated space.
inline FockState apply_controlled_phase(FockState s, int i, int j) {
  s.check_mode(i);
  s.check_mode(j);
  if (i == j) throw std::invalid_argument("apply_controlled_phase: modes must differ");
  const int n = s.n_modes(), d = s.cutoff();
  const Eigen::Index si = detail::ipow(d, n - 1 - i), sj = detail::ipow(d, n - 1 - j);
  CVector& amps = detail::FockAccess::amps(s);
  for (Eigen::Index flat = 0; flat < amps.size(); ++flat) {
    const Eigen::Index ni = (flat / si) % d, nj = (flat / sj) % d;
    if ((ni * nj) % 2 == 1) amps(flat) = -amps(flat);
  }
  return s;
}

/// Beam splitter with the cvsim::beam_splitter convention. Photon number is
/// conserved, so each total-number block is built exactly from the images of
/// the creation operators, U a_i^dag U^dag = sqrt(T) a_i^dag - sqrt(1-T) a_j^dag and
/// U a_j^dag U^dag = sqrt(1-T) a_i^dag + sqrt(T) a_j^dag. Amplitude that lands above
/// the cutoff is leakage.
inline FockState beam_splitter(FockState s, int i, int j, double transmissivity, const Options& opt = {}) {
  cvsim::detail::require_unit_interval(transmissivity, "beam_splitter: T");
  s.check_mode(i);
  s.check_mode(j);
  if (i == j) throw std::invalid_argument("beam_splitter: modes must differ");
  const double c = std::sqrt(transmissivity), sn = std::sqrt(1.0 - transmissivity);
  const int n = s.n_modes(), d = s.cutoff();

  // columns[k][l]: image of |k, l> in block N = k + l, indexed by photons in mode i.
  std::vector<std::vector<Eigen::VectorXd>> columns(static_cast<std::size_t>(d), std::vector<Eigen::VectorXd>(static_cast<std::size_t>(d)));
  auto raise = [](const Eigen::VectorXd& v, double ci, double cj, double norm) {
    const Eigen::Index big_n = v.size();  // v lives in block N-1, size N
    Eigen::VectorXd out = Eigen::VectorXd::Zero(big_n + 1);
    for (Eigen::Index k = 0; k < big_n; ++k) {
      out(k + 1) += ci * std::sqrt(static_cast<double>(k + 1)) * v(k);
      out(k) += cj * std::sqrt(static_cast<double>(big_n - k)) * v(k);
    }
    return Eigen::VectorXd(out / norm);
  };
  for (int l = 0; l < d; ++l) {
    columns[0][static_cast<std::size_t>(l)] =
        l == 0 ? Eigen::VectorXd::Ones(1) : raise(columns[0][static_cast<std::size_t>(l - 1)], sn, c, std::sqrt(static_cast<double>(l)));
    for (int k = 1; k < d; ++k) {
      columns[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)] =
          raise(columns[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(l)], c, -sn, std::sqrt(static_cast<double>(k)));
    }
  }

  const Eigen::Index si = detail::ipow(d, n - 1 - i), sj = detail::ipow(d, n - 1 - j);
  const CVector& in = s.amps();
  CVector out = CVector::Zero(in.size());
  for (Eigen::Index base = 0; base < in.size(); ++base) {
    if ((base / si) % d != 0 || (base / sj) % d != 0) continue;
    for (int k = 0; k < d; ++k) {
      for (int l = 0; l < d; ++l) {
        const Complex a = in(base + k * si + l * sj);
        if (a == Complex(0.0)) continue;
        const Eigen::VectorXd& col = columns[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)];
        const int total = k + l;
        for (int kp = std::max(0, total - d + 1); kp <= std::min(total, d - 1); ++kp) {
          out(base + kp * si + (total - kp) * sj) += a * col(kp);
        }
      }
    }
  }
  return detail::finish(std::move(s), std::move(out), opt, "beam_splitter");
}

// ---------------------------------------------------------------------------
// Measurements and observables.

inline Complex overlap(const FockState& a, const FockState& b) {
  if (a.n_modes() != b.n_modes() || a.cutoff() != b.cutoff()) throw std::invalid_argument("overlap: shape mismatch");
  return a.amps().dot(b.amps());
}

inline double fidelity(const FockState& a, const FockState& b) { return std::norm(overlap(a, b)); }

/// Probability mass in the top 10% of levels of any mode (truncation warning).
inline double top_level_mass(const FockState& s) {
  const int d = s.cutoff();
  const int first = d - std::max(1, static_cast<int>(std::ceil(0.1 * d)));
  double worst = 0.0;
  for (int m = 0; m < s.n_modes(); ++m) {
    const CMatrix mm = detail::mode_matrix(s, m);
    worst = std::max(worst, mm.bottomRows(d - first).squaredNorm());
  }
  return worst;
}

/// Quadrature moments in the ordering of cvsim::GaussianState.
struct Moments {
  Vector mean;
  Matrix cov;
};

inline Moments covariance_of(const FockState& state) {
  // One extra level makes a and a^dag exact on every retained amplitude.
  const FockState s = resize_cutoff(state, state.cutoff() + 1);
  const int n = s.n_modes(), d = s.cutoff();
  const CMatrix x = x_op(d), p = p_op(d);
  std::vector<CVector> images;
  for (int m = 0; m < n; ++m) {
    images.push_back(detail::apply_axis(s.amps(), n, d, m, x));
    images.push_back(detail::apply_axis(s.amps(), n, d, m, p));
  }
  Moments out{Vector(2 * n), Matrix(2 * n, 2 * n)};
  for (int a = 0; a < 2 * n; ++a) out.mean(a) = s.amps().dot(images[static_cast<std::size_t>(a)]).real();
  for (int a = 0; a < 2 * n; ++a) {
    for (int b = a; b < 2 * n; ++b) {
      const double sym = images[static_cast<std::size_t>(a)].dot(images[static_cast<std::size_t>(b)]).real();
      out.cov(a, b) = out.cov(b, a) = sym - out.mean(a) * out.mean(b);
    }
  }
  return out;
}

/// Reduced density matrix of one mode.
inline CMatrix reduced_density(const FockState& s, int mode) {
  s.check_mode(mode);
  const CMatrix m = detail::mode_matrix(s, mode);
  return m * m.adjoint();
}

/// Removes `mode` given a conditional amplitude vector over the other modes.
inline std::optional<FockState> remaining_state(const FockState& s, const CVector& rest, double leakage) {
  if (s.n_modes() == 1) return std::nullopt;
  const double nrm = rest.norm();
  if (!(nrm > 0.0)) throw PhysicsError("measurement: zero-probability outcome selected");
  FockState out(s.n_modes() - 1, s.cutoff(), rest / nrm);
  detail::FockAccess::set_leakage(out, leakage);
  return out;
}

struct HomodyneResult {
  double outcome = 0.0;
  std::optional<FockState> state;  // empty when the measured mode was the last one
};

struct HomodyneGrid {
  int points = 2048;
  double half_width_sigmas = 8.0;
  double mass_tolerance = 1e-6;
};

/// Measures q_theta = cos(theta) x + sin(theta) p on `mode`.
inline HomodyneResult homodyne(const FockState& state, int mode, double theta, Rng& rng, const HomodyneGrid& grid = {}) {
  state.check_mode(mode);
  const FockState s = phase_shift(state, mode, -theta);
  const Moments mom = covariance_of(s);
  const double mu = mom.mean(2 * mode);
  const double sigma = std::sqrt(std::max(mom.cov(2 * mode, 2 * mode), 1e-12));
  const auto xs = uniform_grid(mu - grid.half_width_sigmas * sigma, mu + grid.half_width_sigmas * sigma, grid.points);
  const double dx = xs[1] - xs[0];
  const CMatrix cond = hermite_table(xs, s.cutoff()).cast<Complex>() * detail::mode_matrix(s, mode);
  Eigen::VectorXd density = cond.rowwise().squaredNorm();
  const double mass = density.sum() * dx;
  if (1.0 - mass > grid.mass_tolerance) {
    throw PhysicsError("homodyne: grid misses probability mass " + std::to_string(1.0 - mass));
  }
  std::vector<double> cdf(density.size());
  double acc = 0.0;
  for (Eigen::Index k = 0; k < density.size(); ++k) cdf[static_cast<std::size_t>(k)] = (acc += density(k));
  std::uniform_real_distribution<double> u(0.0, acc);
  const double target = u(rng);
  const auto pick = static_cast<Eigen::Index>(std::lower_bound(cdf.begin(), cdf.end(), target) - cdf.begin());
  const Eigen::Index idx = std::min<Eigen::Index>(pick, density.size() - 1);
  return {xs[static_cast<std::size_t>(idx)], remaining_state(s, cond.row(idx).transpose(), s.leakage())};
}

inline HomodyneResult homodyne(const FockState& state, int mode, double theta, std::uint64_t seed,
                               const HomodyneGrid& grid = {}) {
  Rng rng(seed);
  return homodyne(state, mode, theta, rng, grid);
}

struct CountResult {
  int photons = 0;
  std::optional<FockState> state;
};

inline CountResult photon_count(const FockState& s, int mode, Rng& rng) {
  const CMatrix m = detail::mode_matrix(s, mode);
  const Eigen::VectorXd probs = m.rowwise().squaredNorm();
  std::discrete_distribution<int> dist(probs.data(), probs.data() + probs.size());
  const int n = dist(rng);
  return {n, remaining_state(s, m.row(n).transpose(), s.leakage())};
}

inline CountResult photon_count(const FockState& s, int mode, std::uint64_t seed) {
  Rng rng(seed);
  return photon_count(s, mode, rng);
}

/// Wigner function of one mode's reduced state on the grid xs x ps
/// (normalized so that its phase-space integral is 1). Rows index x.
inline Eigen::MatrixXd wigner_grid(const FockState& s, int mode, std::span<const double> xs, std::span<const double> ps) {
  const CMatrix rho = reduced_density(s, mode);
  const int d = s.cutoff();
  Eigen::MatrixXd w(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(ps.size()));
  std::vector<Complex> wl(static_cast<std::size_t>(d));
  for (std::size_t ix = 0; ix < xs.size(); ++ix) {
    for (std::size_t ip = 0; ip < ps.size(); ++ip) {
      const Complex a = Complex(xs[ix], ps[ip]) * std::sqrt(2.0);  // 2 alpha
      wl[0] = std::exp(-0.5 * std::norm(a)) / std::numbers::pi;
      double acc = (rho(0, 0) * wl[0]).real();
      for (int n = 1; n < d; ++n) {
        wl[static_cast<std::size_t>(n)] = a * wl[static_cast<std::size_t>(n - 1)] / std::sqrt(static_cast<double>(n));
        acc += 2.0 * (rho(0, n) * wl[static_cast<std::size_t>(n)]).real();
      }
      for (int m = 1; m < d; ++m) {
        Complex temp = wl[static_cast<std::size_t>(m)];
        wl[static_cast<std::size_t>(m)] =
            (std::conj(a) * temp - std::sqrt(static_cast<double>(m)) * wl[static_cast<std::size_t>(m - 1)]) /
            std::sqrt(static_cast<double>(m));
        acc += (rho(m, m) * wl[static_cast<std::size_t>(m)]).real();
        for (int n = m + 1; n < d; ++n) {
          const Complex next =
              (a * wl[static_cast<std::size_t>(n - 1)] - std::sqrt(static_cast<double>(m)) * temp) / std::sqrt(static_cast<double>(n));
          temp = wl[static_cast<std::size_t>(n)];
          wl[static_cast<std::size_t>(n)] = next;
          acc += 2.0 * (rho(m, n) * wl[static_cast<std::size_t>(n)]).real();
        }
      }
      w(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(ip)) = acc;
    }
  }
  return w;
}

}  // namespace cvsim::fock
