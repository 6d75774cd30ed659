#pragma once

// Teleportation-based gates: identity teleportation and the measurement-induced
// squeezing gate on the Gaussian backend, cubic phase gate teleportation on the
// Fock backend.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvsim/error.hpp"
#include "cvsim/fock.hpp"
#include "cvsim/gaussian.hpp"

namespace cvsim::tele {

struct GaussianTeleReport {
  GaussianState output;       // averaged over measurement outcomes
  GaussianState shot_output;  // conditioned on `outcomes`, feedforward applied
  double added_noise_x = 0.0;
  double added_noise_p = 0.0;
  double fidelity_vs_ideal = 0.0;
  std::vector<double> outcomes;
};

namespace detail {

inline void require_single_mode(const GaussianState& s, const char* what) {
  if (s.n_modes() != 1) throw std::invalid_argument(std::string(what) + ": input must be a single mode");
}

inline GaussianTeleReport finish_report(GaussianState output, GaussianState shot, const GaussianState& ideal,
                                        std::vector<double> outcomes) {
  const double nx = output.cov()(0, 0) - ideal.cov()(0, 0);
  const double np = output.cov()(1, 1) - ideal.cov()(1, 1);
  const double f = fidelity(output, ideal);
  return {std::move(output), std::move(shot), nx, np, f, std::move(outcomes)};
}

}  // namespace detail

/// Two-ancilla teleportation. Modes: 0 input, 1 x-squeezed ancilla, 2 p-squeezed
/// ancilla (the output). With gain g the output ideally carries g times the
/// input mean; added noise is measured against g^2 times the input variances.
inline GaussianTeleReport teleport(const GaussianState& input, double r_anc, double gain, std::uint64_t seed) {
  detail::require_single_mode(input, "teleport");
  cvsim::detail::require_finite(r_anc, "teleport: r_anc");
  if (!(gain >= 0.0 && gain <= 2.0)) throw std::invalid_argument("teleport: gain must be in [0, 2]");

  const GaussianState s = tensor(input, squeeze(squeeze(vacuum(2), 0, r_anc), 1, -r_anc));
  const int in_a[] = {0, 1}, a_b[] = {1, 2};
  const Matrix circuit = embed(3, in_a, beam_splitter_block(0.5)) * embed(3, a_b, beam_splitter_block(0.5));
  const double gx = -std::sqrt(2.0) * gain, gp = std::sqrt(2.0) * gain;
  const Measurement meas[] = {{.mode = 1, .theta = 0.0, .feedforward = {{.target = 2, .gx = gx}}},
                              {.mode = 0, .theta = std::numbers::pi / 2, .feedforward = {{.target = 2, .gp = gp}}}};
  Rng rng(seed);
  MeasuredCircuitResult res = run_measured_circuit(s, circuit, meas, rng);
  GaussianState avg = std::move(res.averaged);
  GaussianState shot = std::move(res.conditioned);
  const std::vector<double> outcomes = std::move(res.outcomes);

  const double nx = avg.cov()(0, 0) - gain * gain * input.cov()(0, 0);
  const double np = avg.cov()(1, 1) - gain * gain * input.cov()(1, 1);
  const double f = fidelity(avg, input);
  return {std::move(avg), std::move(shot), nx, np, f, outcomes};
}

/// Beam splitter transmissivity and p feedforward gain of the squeezing gate
/// x -> y x, p -> p / y for 0 < y < 1.
inline double squeeze_gate_transmissivity(double y) { return y * y; }
inline double squeeze_gate_gain(double y) {
  const double t = squeeze_gate_transmissivity(y);
  return -std::sqrt((1.0 - t) / t);
}

namespace detail {

// Input on mode 0, x-squeezed ancilla on mode 1; measure p of mode 1.
inline GaussianTeleReport squeeze_core(const GaussianState& input, double y, double r_anc, std::uint64_t seed) {
  const GaussianState s = tensor(input, squeeze(vacuum(1), 0, r_anc));
  const int modes[] = {0, 1};
  const Matrix circuit = embed(2, modes, beam_splitter_block(squeeze_gate_transmissivity(y)));
  const Measurement meas[] = {
      {.mode = 1, .theta = std::numbers::pi / 2, .feedforward = {{.target = 0, .gp = squeeze_gate_gain(y)}}}};
  Rng rng(seed);
  MeasuredCircuitResult res = run_measured_circuit(s, circuit, meas, rng);
  return {std::move(res.averaged), std::move(res.conditioned), 0.0, 0.0, 0.0, std::move(res.outcomes)};
}

}  // namespace detail

/// Measurement-induced squeezing x -> y x, p -> p / y (squeeze with r = -ln y).
/// y > 1 is realized by conjugating the y < 1 circuit with quarter-turn phase shifts.
inline GaussianTeleReport tele_squeeze(const GaussianState& input, double y, double r_anc, std::uint64_t seed) {
  detail::require_single_mode(input, "tele_squeeze");
  cvsim::detail::require_finite(r_anc, "tele_squeeze: r_anc");
  if (!(y > 0.0) || !std::isfinite(y)) throw std::invalid_argument("tele_squeeze: y must be positive and finite");
  const GaussianState ideal = squeeze(input, 0, -std::log(y));
  if (y == 1.0) return detail::finish_report(input, input, ideal, {});

  constexpr double kQuarter = std::numbers::pi / 2;
  if (y < 1.0) {
    GaussianTeleReport core = detail::squeeze_core(input, y, r_anc, seed);
    return detail::finish_report(std::move(core.output), std::move(core.shot_output), ideal, std::move(core.outcomes));
  }
  GaussianTeleReport core = detail::squeeze_core(phase_shift(input, 0, kQuarter), 1.0 / y, r_anc, seed);
  return detail::finish_report(phase_shift(std::move(core.output), 0, -kQuarter),
                               phase_shift(std::move(core.shot_output), 0, -kQuarter), ideal, std::move(core.outcomes));
}

// ---------------------------------------------------------------------------
// Cubic phase gate by teleportation (Fock backend).
//
// The ancilla exp(i gamma x^3) applied to an x-antisqueezed vacuum meets the
// input on a 50:50 beam splitter; x of the reflected port is measured. The
// circuit is evaluated in the position representation, where the conditional
// output is a pointwise product, and projected back onto number states.

struct CubicOptions {
  double max_shear = 50.0;   // largest |3 sqrt2 gamma m| the feedforward may apply
  int outcome_points = 2048;
  double outcome_sigmas = 8.0;
  double mass_tolerance = 1e-6;
  fock::Options fock = {};
};

struct FockTeleReport {
  fock::FockState output;
  double added_noise_x = 0.0;
  double added_noise_p = 0.0;
  double fidelity_vs_ideal = 0.0;
  std::vector<double> outcomes;
};

/// exp(i gamma x^3) times an x-antisqueezed vacuum with Var x = e^{2 r_env} / 2.
inline std::complex<double> cubic_ancilla_amplitude(double gamma, double r_env, double x) {
  const double var2 = std::exp(2.0 * r_env);  // 2 Var x
  const double env = std::pow(std::numbers::pi * var2, -0.25) * std::exp(-0.5 * x * x / var2);
  return std::polar(env, gamma * x * x * x);
}

namespace detail {

/// Grid wide enough for every Hermite function below `cutoff` and fine enough
/// for the cubic phase over that range.
inline std::vector<double> fock_support_grid(int cutoff, double gamma) {
  const double half = std::sqrt(2.0 * cutoff + 1.0) + 8.0;
  const double dx = std::min(0.02, 0.1 / (1.0 + 3.0 * std::abs(gamma) * half * half));
  const int points = static_cast<int>(std::ceil(2.0 * half / dx)) + 1;
  return fock::uniform_grid(-half, half, points);
}

}  // namespace detail

inline fock::FockState cubic_ancilla(double gamma, double r_env, int cutoff, const fock::Options& opt = {}) {
  cvsim::detail::require_finite(gamma, "cubic_ancilla: gamma");
  cvsim::detail::require_finite(r_env, "cubic_ancilla: r_env");
  fock::Wavefunction wf{detail::fock_support_grid(cutoff, gamma), {}};
  wf.psi.resize(static_cast<Eigen::Index>(wf.x.size()));
  for (std::size_t k = 0; k < wf.x.size(); ++k) wf.psi(static_cast<Eigen::Index>(k)) = cubic_ancilla_amplitude(gamma, r_env, wf.x[k]);
  return fock::project(wf, cutoff, opt, "cubic_ancilla", 1.0).state;
}

/// Output of the cubic teleportation circuit for a given outcome m, after the
/// feedforward: x shift by -m, squeeze by 1/sqrt2, shear exp(-i 3 sqrt2 gamma m x^2)
/// and p shift by -6 gamma m^2.
inline fock::FockState tele_cubic_conditional(const fock::FockState& input, double gamma, double r_env, double m,
                                              const CubicOptions& opt = {}) {
  if (input.n_modes() != 1) throw std::invalid_argument("tele_cubic: input must be a single mode");
  const double shear = 3.0 * std::numbers::sqrt2 * gamma * m;
  if (std::abs(shear) > opt.max_shear) {
    throw PhysicsError("tele_cubic: feedforward shear " + std::to_string(shear) + " outside configured range");
  }
  // s is the input coordinate; the ancilla sits at s + sqrt2 m.
  fock::Wavefunction wf = fock::to_wavefunction(input, detail::fock_support_grid(input.cutoff(), gamma));
  for (std::size_t k = 0; k < wf.x.size(); ++k) {
    const double s = wf.x[k];
    const auto anc = cubic_ancilla_amplitude(gamma, r_env, s + std::numbers::sqrt2 * m);
    const double correction = -shear * s * s - 6.0 * gamma * m * m * s;
    wf.psi(static_cast<Eigen::Index>(k)) *= anc * std::polar(1.0, correction);
  }
  fock::Projection p = fock::project(wf, input.cutoff(), opt.fock, "tele_cubic");
  fock::detail::FockAccess::add_leakage(p.state, input.leakage());
  return p.state;
}

/// Distribution of the measured quadrature m = (x_anc - x_in) / sqrt2, with
/// density sqrt2 * integral |psi(s)|^2 |env(s + sqrt2 m)|^2 ds on a grid.
class CubicOutcomeDistribution {
 public:
  CubicOutcomeDistribution(const fock::FockState& input, double r_env, const CubicOptions& opt = {}) {
    const fock::Moments mom = fock::covariance_of(input);
    const double var2 = std::exp(2.0 * r_env);  // 2 Var x_anc
    const double mean = -mom.mean(0) / std::numbers::sqrt2;
    const double sigma = std::sqrt(0.5 * (mom.cov(0, 0) + 0.5 * var2));
    ms_ = fock::uniform_grid(mean - opt.outcome_sigmas * sigma, mean + opt.outcome_sigmas * sigma, opt.outcome_points);

    const fock::Wavefunction wf = fock::to_wavefunction(input, detail::fock_support_grid(input.cutoff(), 0.0));
    std::vector<double> xs, ws;
    const double peak = wf.psi.cwiseAbs2().maxCoeff();
    for (std::size_t k = 0; k < wf.x.size(); ++k) {
      const double w = std::norm(wf.psi(static_cast<Eigen::Index>(k)));
      if (w > 1e-18 * peak) {
        xs.push_back(wf.x[k]);
        ws.push_back(w * wf.dx());
      }
    }
    const double env_norm = 1.0 / std::sqrt(std::numbers::pi * var2);  // |env|^2 prefactor
    std::vector<double> density(ms_.size());
    for (std::size_t i = 0; i < ms_.size(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < xs.size(); ++k) {
        const double a = xs[k] + std::numbers::sqrt2 * ms_[i];
        acc += ws[k] * std::exp(-a * a / var2);
      }
      density[i] = std::numbers::sqrt2 * env_norm * acc;
    }
    const double dm = ms_[1] - ms_[0];
    cdf_.assign(ms_.size(), 0.0);
    for (std::size_t i = 1; i < ms_.size(); ++i) cdf_[i] = cdf_[i - 1] + 0.5 * (density[i] + density[i - 1]) * dm;
    if (1.0 - cdf_.back() > opt.mass_tolerance) {
      throw PhysicsError("tele_cubic: outcome grid misses probability mass " + std::to_string(1.0 - cdf_.back()));
    }
  }

  /// Inverse-CDF sample, linear within a grid cell.
  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, cdf_.back());
    const double target = u(rng);
    const auto hi = static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), target) - cdf_.begin());
    if (hi == 0) return ms_.front();
    if (hi >= ms_.size()) return ms_.back();
    const double frac = (target - cdf_[hi - 1]) / std::max(cdf_[hi] - cdf_[hi - 1], 1e-300);
    return ms_[hi - 1] + frac * (ms_[hi] - ms_[hi - 1]);
  }

 private:
  std::vector<double> ms_;
  std::vector<double> cdf_;
};

inline FockTeleReport tele_cubic(const fock::FockState& input, double gamma, double r_env, std::uint64_t seed,
                                 const CubicOptions& opt = {}) {
  if (input.n_modes() != 1) throw std::invalid_argument("tele_cubic: input must be a single mode");
  cvsim::detail::require_finite(gamma, "tele_cubic: gamma");
  cvsim::detail::require_finite(r_env, "tele_cubic: r_env");
  Rng rng(seed);
  const double m = CubicOutcomeDistribution(input, r_env, opt).sample(rng);
  fock::FockState out = tele_cubic_conditional(input, gamma, r_env, m, opt);
  const fock::FockState ideal = fock::apply_cubic(input, 0, gamma, opt.fock);
  const fock::Moments mo = fock::covariance_of(out), mi = fock::covariance_of(ideal);
  const double f = fock::fidelity(out, ideal);
  return {std::move(out), mo.cov(0, 0) - mi.cov(0, 0), mo.cov(1, 1) - mi.cov(1, 1), f, {m}};
}

/// Identity teleportation on the Fock backend: the cubic circuit with gamma = 0.
inline FockTeleReport teleport_fock(const fock::FockState& input, double r_env, std::uint64_t seed,
                                    const CubicOptions& opt = {}) {
  return tele_cubic(input, 0.0, r_env, seed, opt);
}

}  // namespace cvsim::tele
