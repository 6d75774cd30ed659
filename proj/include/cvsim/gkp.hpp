#pragma once

// Finite-energy GKP qubits on the Fock backend and the modular x correction.
//
// |j> ~ sum_s exp(-Delta^2 c_s^2) exp(-(x - c_s)^2 / (4 Delta^2)),  c_s = sqrt(pi) (2s + j).
// Each peak is a squeezed vacuum with Var x = Delta^2; the x envelope has variance
// 1 / (4 Delta^2), which makes the p lattice peaks equally wide.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvsim/fock.hpp"

namespace cvsim::gkp {

inline const double kSqrtPi = std::sqrt(std::numbers::pi);
inline constexpr double kThresholdDb = 20.5;

struct GkpParams {
  double delta = 0.3;
  int cutoff = 100;
  fock::Options fock = {};

  void validate() const {
    if (!(delta > 0.0) || !std::isfinite(delta)) throw std::invalid_argument("GkpParams: delta must be positive");
    if (cutoff < 2) throw std::invalid_argument("GkpParams: cutoff must be at least 2");
  }
};

namespace detail {

inline void require_logical(int j) {
  if (j != 0 && j != 1) throw std::invalid_argument("gkp: logical index must be 0 or 1, got " + std::to_string(j));
}

/// Peak centers carrying non-negligible envelope weight.
inline std::vector<double> peak_centers(int j, double delta) {
  const double reach = std::sqrt(50.0) / delta;  // weight below e^{-50}
  const int smax = static_cast<int>(std::ceil(reach / (2.0 * kSqrtPi))) + 1;
  std::vector<double> c;
  for (int s = -smax; s <= smax; ++s) c.push_back(kSqrtPi * (2.0 * s + j));
  return c;
}

inline double peak_weight(double c, double delta) { return std::exp(-delta * delta * c * c); }
inline double peak_amplitude(double x, double delta) { return std::exp(-x * x / (4.0 * delta * delta)); }
// integral of peak_amplitude(x - a) peak_amplitude(x - b)
inline double peak_overlap(double d, double delta) {
  return std::sqrt(2.0 * std::numbers::pi) * delta * std::exp(-d * d / (8.0 * delta * delta));
}

/// Unnormalized <j|k> from Gaussian overlap integrals.
inline double raw_overlap(int j, int k, double delta) {
  double sum = 0.0;
  for (double a : peak_centers(j, delta)) {
    for (double b : peak_centers(k, delta)) sum += peak_weight(a, delta) * peak_weight(b, delta) * peak_overlap(a - b, delta);
  }
  return sum;
}

}  // namespace detail

/// Normalized position wavefunction of |j>.
inline double wavefunction(int j, double delta, double x) {
  detail::require_logical(j);
  double sum = 0.0;
  for (double c : detail::peak_centers(j, delta)) {
    sum += detail::peak_weight(c, delta) * detail::peak_amplitude(x - c, delta);
  }
  return sum / std::sqrt(detail::raw_overlap(j, j, delta));
}

/// <j|k> of the normalized position wavefunctions (no truncation).
inline double analytic_overlap(int j, int k, double delta) {
  detail::require_logical(j);
  detail::require_logical(k);
  return detail::raw_overlap(j, k, delta) / std::sqrt(detail::raw_overlap(j, j, delta) * detail::raw_overlap(k, k, delta));
}

/// Integral of psi_j(x) psi_k(x - shift): overlap of |j> with |k> displaced by `shift` in x.
inline double analytic_shifted_overlap(int j, int k, double delta, double shift) {
  detail::require_logical(j);
  detail::require_logical(k);
  double sum = 0.0;
  for (double a : detail::peak_centers(j, delta)) {
    for (double b : detail::peak_centers(k, delta)) {
      sum += detail::peak_weight(a, delta) * detail::peak_weight(b, delta) * detail::peak_overlap(a - b - shift, delta);
    }
  }
  return sum / std::sqrt(detail::raw_overlap(j, j, delta) * detail::raw_overlap(k, k, delta));
}

struct GkpState {
  fock::FockState state;
  double lattice_deficit = 0.0;  // x-mass farther than sqrt(pi)/4 from the code lattice
  double leakage = 0.0;          // norm lost to the cutoff
};

/// Probability mass of the x-density outside windows of half-width sqrt(pi)/4
/// around the points sqrt(pi) (2s + j).
inline double lattice_deficit(const fock::FockState& s, int j) {
  detail::require_logical(j);
  if (s.n_modes() != 1) throw std::invalid_argument("gkp: single-mode state expected");
  const double half = std::sqrt(2.0 * s.cutoff() + 1.0) + 8.0;
  const int points = static_cast<int>(std::ceil(2.0 * half / 0.005)) + 1;
  const fock::Wavefunction wf = fock::to_wavefunction(s, fock::uniform_grid(-half, half, points));
  double inside = 0.0;
  for (std::size_t k = 0; k < wf.x.size(); ++k) {
    const double u = wf.x[k] / kSqrtPi - j;  // lattice points at even u
    const double dist = std::abs(u - 2.0 * std::round(u / 2.0)) * kSqrtPi;
    const double w = (k == 0 || k + 1 == wf.x.size()) ? 0.5 : 1.0;
    if (dist <= kSqrtPi / 4) inside += w * std::norm(wf.psi(static_cast<Eigen::Index>(k)));
  }
  return std::max(0.0, 1.0 - inside * wf.dx());
}

/// |j> projected onto number states below the cutoff. Raises PhysicsError if
/// more than the leakage budget falls outside.
inline GkpState gkp_state(int j, const GkpParams& params) {
  detail::require_logical(j);
  params.validate();
  const double half = std::sqrt(2.0 * params.cutoff + 1.0) + 8.0;
  const double dx = std::min(0.02, params.delta / 10.0);
  fock::Wavefunction wf{fock::uniform_grid(-half, half, static_cast<int>(std::ceil(2.0 * half / dx)) + 1), {}};
  wf.psi.resize(static_cast<Eigen::Index>(wf.x.size()));
  for (std::size_t k = 0; k < wf.x.size(); ++k) wf.psi(static_cast<Eigen::Index>(k)) = wavefunction(j, params.delta, wf.x[k]);
  fock::Projection p = fock::project(wf, params.cutoff, params.fock, "gkp_state", 1.0);
  const double leak = p.state.leakage();
  const double deficit = lattice_deficit(p.state, j);
  return {std::move(p.state), deficit, leak};
}

enum class Pauli { X, Z };

/// Logical X: displacement by sqrt(pi) in x. Logical Z: sqrt(pi) in p.
inline fock::FockState logical_pauli(const fock::FockState& s, Pauli which, const fock::Options& opt = {}) {
  if (s.n_modes() != 1) throw std::invalid_argument("logical_pauli: single-mode state expected");
  return which == Pauli::X ? fock::displace(s, 0, kSqrtPi, 0.0, opt) : fock::displace(s, 0, 0.0, kSqrtPi, opt);
}

struct CorrectionOutcome {
  double correction = 0.0;  // displacement that moves the outcome onto the lattice
  double residual = 0.0;    // measured - nearest lattice point
  bool logical_flip = false;
};

/// Nearest multiple of sqrt(pi); ties go to the even multiple.
inline CorrectionOutcome correct_shift(double measured) {
  cvsim::detail::require_finite(measured, "correct_shift: measured");
  const double q = measured / kSqrtPi;
  double k = std::round(q);
  if (std::abs(q - std::trunc(q)) == 0.5) k = 2.0 * std::round(q / 2.0);
  const double lattice = k * kSqrtPi;
  return {lattice - measured, measured - lattice, std::fmod(std::abs(k), 2.0) == 1.0};
}

/// Probability that Gaussian displacement noise N(0, sigma^2) lands nearer an
/// odd multiple of sqrt(pi).
inline double logical_error_prob(double sigma) {
  cvsim::detail::require_finite(sigma, "logical_error_prob: sigma");
  if (sigma < 0.0) throw std::invalid_argument("logical_error_prob: sigma must be non-negative");
  if (sigma == 0.0) return 0.0;
  // P(a < e <= b) for e ~ N(0, sigma^2), both bounds positive, via erfc to keep tails accurate.
  const auto band = [sigma](double a, double b) {
    return 0.5 * (std::erfc(a / (sigma * std::numbers::sqrt2)) - std::erfc(b / (sigma * std::numbers::sqrt2)));
  };
  double p = 0.0;
  for (long k = 1;; k += 2) {
    const double lo = (k - 0.5) * kSqrtPi, hi = (k + 0.5) * kSqrtPi;
    const double term = 2.0 * band(lo, hi);  // k and -k
    p += term;
    if (lo > 40.0 * sigma || (term < 1e-18 * p && lo > sigma)) break;
  }
  return std::min(p, 0.5);
}

struct MonteCarloEstimate {
  double p = 0.0;
  double standard_error = 0.0;
  std::int64_t samples = 0;
};

inline MonteCarloEstimate logical_error_monte_carlo(double sigma, std::int64_t samples, std::uint64_t seed) {
  if (samples <= 0) throw std::invalid_argument("logical_error_monte_carlo: samples must be positive");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::int64_t flips = 0;
  for (std::int64_t k = 0; k < samples; ++k) flips += correct_shift(noise(rng)).logical_flip ? 1 : 0;
  const double p = static_cast<double>(flips) / static_cast<double>(samples);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(samples)), samples};
}

/// Peak squeezing of a GKP state with width Delta: Var x = Delta^2 against vacuum 1/2.
inline double squeezing_db_of(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw std::invalid_argument("squeezing_db_of: delta must be positive");
  return 10.0 * std::log10(1.0 / (2.0 * delta * delta));
}

inline double delta_of_db(double db) {
  cvsim::detail::require_finite(db, "delta_of_db: db");
  return std::sqrt(0.5 * std::pow(10.0, -db / 10.0));
}

/// Effective squeezing minus the 20.5 dB reference level (reporting aid).
inline double threshold_margin(double delta) { return squeezing_db_of(delta) - kThresholdDb; }

}  // namespace cvsim::gkp
