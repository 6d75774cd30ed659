#pragma once

// Gaussian-state evolution over N bosonic modes.
//
// Conventions: hbar = 1, vacuum quadrature variance 1/2, interleaved ordering
// (x0, p0, x1, p1, ...). Every operation takes the state by value and returns
// the updated state, so callers that std::move their state pay no copy.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cvsim/error.hpp"

namespace cvsim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

inline constexpr double kVacuumVariance = 0.5;
inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kPositivityTol = 1e-9;

/// Squeezing in dB relative to vacuum: 10 log10(Var_vac / Var_sq) = (20 / ln 10) r.
inline double squeezing_db(double r) { return 20.0 / std::numbers::ln10 * r; }
inline double squeezing_r(double db) { return db * std::numbers::ln10 / 20.0; }

/// Block-diagonal symplectic form with per-mode blocks [[0, 1], [-1, 0]].
inline Matrix symplectic_form(int n_modes) {
  Matrix omega = Matrix::Zero(2 * n_modes, 2 * n_modes);
  for (int k = 0; k < n_modes; ++k) {
    omega(2 * k, 2 * k + 1) = 1.0;
    omega(2 * k + 1, 2 * k) = -1.0;
  }
  return omega;
}

class GaussianState;
namespace detail {
struct StateAccess;
}

/// Mean vector and covariance matrix of an N-mode Gaussian state.
class GaussianState {
 public:
  GaussianState(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (mean_.size() == 0 || mean_.size() % 2 != 0) {
      throw std::invalid_argument("GaussianState: mean must have even, nonzero length");
    }
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) {
      throw std::invalid_argument("GaussianState: covariance shape does not match mean");
    }
    if (!mean_.allFinite() || !cov_.allFinite()) {
      throw std::invalid_argument("GaussianState: non-finite entries");
    }
    if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * std::max(1.0, cov_.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("GaussianState: covariance is not symmetric");
    }
    symmetrize();
  }

  int n_modes() const { return static_cast<int>(mean_.size() / 2); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }

  /// 2x2 covariance block of one mode.
  Eigen::Matrix2d mode_cov(int mode) const {
    check_mode(mode);
    return cov_.block<2, 2>(2 * mode, 2 * mode);
  }
  Eigen::Vector2d mode_mean(int mode) const {
    check_mode(mode);
    return mean_.segment<2>(2 * mode);
  }

  void check_mode(int mode) const {
    if (mode < 0 || mode >= n_modes()) {
      throw std::out_of_range("mode index " + std::to_string(mode) + " out of range for " +
                              std::to_string(n_modes()) + "-mode state");
    }
  }

 private:
  friend struct detail::StateAccess;
  GaussianState() = default;
  void symmetrize() { cov_ = 0.5 * (cov_ + cov_.transpose()).eval(); }

  Vector mean_;
  Matrix cov_;
};

namespace detail {

struct StateAccess {
  static Vector& mean(GaussianState& s) { return s.mean_; }
  static Matrix& cov(GaussianState& s) { return s.cov_; }
  static void symmetrize(GaussianState& s) { s.symmetrize(); }
  static GaussianState raw(Vector mean, Matrix cov) {
    GaussianState s;
    s.mean_ = std::move(mean);
    s.cov_ = std::move(cov);
    s.symmetrize();
    return s;
  }
};

inline std::vector<int> quadrature_indices(std::span<const int> modes) {
  std::vector<int> idx;
  idx.reserve(2 * modes.size());
  for (int m : modes) {
    idx.push_back(2 * m);
    idx.push_back(2 * m + 1);
  }
  return idx;
}

/// Applies the affine map R -> M R + d restricted to the listed modes.
inline GaussianState apply_local(GaussianState s, std::span<const int> modes, const Matrix& m,
                                 const Vector& d) {
  for (int mode : modes) s.check_mode(mode);
  const auto idx = quadrature_indices(modes);
  Vector& mean = StateAccess::mean(s);
  Matrix& cov = StateAccess::cov(s);
  Vector local_mean = mean(idx);
  mean(idx) = m * local_mean + d;
  Matrix rows = cov(idx, Eigen::all);
  cov(idx, Eigen::all) = m * rows;
  Matrix cols = cov(Eigen::all, idx);
  cov(Eigen::all, idx) = cols * m.transpose();
  StateAccess::symmetrize(s);
  return s;
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be finite");
}

inline void require_unit_interval(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument(std::string(what) + " must lie in [0, 1], got " + std::to_string(v));
  }
}

}  // namespace detail

/// Linear combination c^T R of the quadratures.
class LinearForm {
 public:
  explicit LinearForm(Vector coeffs) : coeffs_(std::move(coeffs)) {
    if (coeffs_.size() == 0 || coeffs_.size() % 2 != 0) {
      throw std::invalid_argument("LinearForm: length must be even and nonzero");
    }
    if (coeffs_.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("LinearForm: all-zero coefficients");
  }
  const Vector& coeffs() const { return coeffs_; }
  /// Variance of this form on the vacuum, 1/2 |c|^2.
  double vacuum_variance() const { return kVacuumVariance * coeffs_.squaredNorm(); }

 private:
  Vector coeffs_;
};

/// A Gaussian unitary R -> S R + d with S symplectic.
class SymplecticOp {
 public:
  SymplecticOp(Matrix matrix, Vector displacement)
      : matrix_(std::move(matrix)), displacement_(std::move(displacement)) {
    const auto dim = matrix_.rows();
    if (dim == 0 || dim % 2 != 0 || matrix_.cols() != dim || displacement_.size() != dim) {
      throw std::invalid_argument("SymplecticOp: inconsistent dimensions");
    }
    const Matrix omega = symplectic_form(static_cast<int>(dim / 2));
    const double err = (matrix_ * omega * matrix_.transpose() - omega).cwiseAbs().maxCoeff();
    if (err > 1e-10 * std::max(1.0, matrix_.squaredNorm())) {
      throw std::invalid_argument("SymplecticOp: matrix is not symplectic (error " + std::to_string(err) + ")");
    }
  }
  explicit SymplecticOp(Matrix matrix) : SymplecticOp(matrix, Vector::Zero(matrix.rows())) {}

  static SymplecticOp identity(int n_modes) { return SymplecticOp(Matrix::Identity(2 * n_modes, 2 * n_modes)); }

  int n_modes() const { return static_cast<int>(matrix_.rows() / 2); }
  const Matrix& matrix() const { return matrix_; }
  const Vector& displacement() const { return displacement_; }

  /// Composition: (a * b) applies b first, then a.
  friend SymplecticOp operator*(const SymplecticOp& a, const SymplecticOp& b) {
    if (a.n_modes() != b.n_modes()) throw std::invalid_argument("SymplecticOp: mode count mismatch");
    return SymplecticOp(a.matrix_ * b.matrix_, a.matrix_ * b.displacement_ + a.displacement_);
  }

 private:
  Matrix matrix_;
  Vector displacement_;
};

// ---------------------------------------------------------------------------
// Single- and two-mode symplectic blocks. These are the conventions pinned by
// the test suite; the Fock backend implements the same maps.

inline Eigen::Matrix2d squeeze_block(double r) {
  Eigen::Matrix2d m;
  m << std::exp(-r), 0.0, 0.0, std::exp(r);
  return m;
}

inline Eigen::Matrix2d rotation_block(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix2d m;
  m << c, -s, s, c;
  return m;
}

/// x_i' = sqrt(T) x_i + sqrt(1-T) x_j,  x_j' = sqrt(T) x_j - sqrt(1-T) x_i (same for p).
inline Eigen::Matrix4d beam_splitter_block(double transmissivity) {
  const double t = std::sqrt(transmissivity), r = std::sqrt(1.0 - transmissivity);
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m(0, 0) = t;  m(0, 2) = r;
  m(1, 1) = t;  m(1, 3) = r;
  m(2, 2) = t;  m(2, 0) = -r;
  m(3, 3) = t;  m(3, 1) = -r;
  return m;
}

// ---------------------------------------------------------------------------
// State constructors and gates.

inline GaussianState vacuum(int n_modes) {
  if (n_modes < 1) throw std::invalid_argument("vacuum: mode count must be at least 1");
  return detail::StateAccess::raw(Vector::Zero(2 * n_modes),
                                  kVacuumVariance * Matrix::Identity(2 * n_modes, 2 * n_modes));
}

/// Single-mode thermal state with mean photon number nbar.
inline GaussianState thermal(double nbar) {
  if (!(nbar >= 0.0)) throw std::invalid_argument("thermal: nbar must be non-negative");
  return detail::StateAccess::raw(Vector::Zero(2), (nbar + 0.5) * Matrix::Identity(2, 2));
}

inline GaussianState coherent(double x, double p) {
  GaussianState s = vacuum(1);
  detail::StateAccess::mean(s) << x, p;
  return s;
}

/// S(y) with y = e^{-r}: x -> e^{-r} x, p -> e^{r} p.
inline GaussianState squeeze(GaussianState s, int mode, double r) {
  detail::require_finite(r, "squeeze: r");
  const int modes[] = {mode};
  return detail::apply_local(std::move(s), modes, squeeze_block(r), Vector::Zero(2));
}

inline GaussianState phase_shift(GaussianState s, int mode, double theta) {
  detail::require_finite(theta, "phase_shift: theta");
  const int modes[] = {mode};
  return detail::apply_local(std::move(s), modes, rotation_block(theta), Vector::Zero(2));
}

inline GaussianState beam_splitter(GaussianState s, int i, int j, double transmissivity) {
  detail::require_unit_interval(transmissivity, "beam_splitter: T");
  if (i == j) throw std::invalid_argument("beam_splitter: modes must differ");
  const int modes[] = {i, j};
  return detail::apply_local(std::move(s), modes, beam_splitter_block(transmissivity), Vector::Zero(4));
}

inline GaussianState displace(GaussianState s, int mode, double dx, double dp) {
  detail::require_finite(dx, "displace: dx");
  detail::require_finite(dp, "displace: dp");
  s.check_mode(mode);
  detail::StateAccess::mean(s)(2 * mode) += dx;
  detail::StateAccess::mean(s)(2 * mode + 1) += dp;
  return s;
}

/// Pure-loss channel with transmission eta on one mode.
inline GaussianState loss(GaussianState s, int mode, double eta) {
  detail::require_unit_interval(eta, "loss: eta");
  s.check_mode(mode);
  const double a = std::sqrt(eta);
  Vector& mean = detail::StateAccess::mean(s);
  Matrix& cov = detail::StateAccess::cov(s);
  const int q = 2 * mode;
  mean.segment<2>(q) *= a;
  cov.middleRows<2>(q) *= a;
  cov.middleCols<2>(q) *= a;
  cov(q, q) += (1.0 - eta) * kVacuumVariance;
  cov(q + 1, q + 1) += (1.0 - eta) * kVacuumVariance;
  detail::StateAccess::symmetrize(s);
  return s;
}

inline GaussianState apply(GaussianState s, const SymplecticOp& op) {
  if (op.n_modes() != s.n_modes()) throw std::invalid_argument("apply: mode count mismatch");
  Vector& mean = detail::StateAccess::mean(s);
  Matrix& cov = detail::StateAccess::cov(s);
  mean = op.matrix() * mean + op.displacement();
  cov = op.matrix() * cov * op.matrix().transpose();
  detail::StateAccess::symmetrize(s);
  return s;
}

/// Applies R -> M R (M need not be symplectic) plus added noise. Used for
/// feedforward channels where a measured quadrature drives a displacement.
inline GaussianState apply_linear_channel(GaussianState s, const Matrix& m, const Matrix& noise = Matrix()) {
  if (m.rows() != m.cols() || m.rows() != s.mean().size()) {
    throw std::invalid_argument("apply_linear_channel: shape mismatch");
  }
  Vector& mean = detail::StateAccess::mean(s);
  Matrix& cov = detail::StateAccess::cov(s);
  mean = m * mean;
  cov = m * cov * m.transpose();
  if (noise.size() != 0) cov += noise;
  detail::StateAccess::symmetrize(s);
  return s;
}

/// Displacement of `target` by (gx, gp) times a measured quadrature.
struct Feedforward {
  int target = 0;
  double gx = 0.0;
  double gp = 0.0;
};

/// Outcome-averaged feedforward: target quadratures pick up gain * q_theta of
/// `mode`. The measured mode is left in place (its own quadratures are
/// unchanged) so several measurements can be chained before removal.
inline GaussianState apply_feedforward(GaussianState s, int mode, double theta, std::span<const Feedforward> ff) {
  s.check_mode(mode);
  Matrix m = Matrix::Identity(2 * s.n_modes(), 2 * s.n_modes());
  const double c = std::cos(theta), sn = std::sin(theta);
  for (const Feedforward& f : ff) {
    s.check_mode(f.target);
    if (f.target == mode) throw std::invalid_argument("apply_feedforward: target is the measured mode");
    m(2 * f.target, 2 * mode) += f.gx * c;
    m(2 * f.target, 2 * mode + 1) += f.gx * sn;
    m(2 * f.target + 1, 2 * mode) += f.gp * c;
    m(2 * f.target + 1, 2 * mode + 1) += f.gp * sn;
  }
  return apply_linear_channel(std::move(s), m);
}

// ---------------------------------------------------------------------------
// Mode bookkeeping.

inline GaussianState remove_modes(GaussianState s, std::vector<int> modes) {
  std::sort(modes.begin(), modes.end());
  modes.erase(std::unique(modes.begin(), modes.end()), modes.end());
  for (int m : modes) s.check_mode(m);
  if (static_cast<int>(modes.size()) >= s.n_modes()) throw std::invalid_argument("remove_modes: cannot remove every mode");
  std::vector<int> keep_modes;
  for (int m = 0, k = 0; m < s.n_modes(); ++m) {
    if (k < static_cast<int>(modes.size()) && modes[k] == m) {
      ++k;
    } else {
      keep_modes.push_back(m);
    }
  }
  const auto idx = detail::quadrature_indices(keep_modes);
  return detail::StateAccess::raw(s.mean()(idx), s.cov()(idx, idx));
}

/// Reduced state on the listed modes, in the listed order.
inline GaussianState reduced(const GaussianState& s, std::span<const int> modes) {
  for (int m : modes) s.check_mode(m);
  const auto idx = detail::quadrature_indices(modes);
  return detail::StateAccess::raw(s.mean()(idx), s.cov()(idx, idx));
}

inline GaussianState append_vacuum_modes(GaussianState s, int count) {
  if (count < 0) throw std::invalid_argument("append_vacuum_modes: negative count");
  if (count == 0) return s;
  const auto old_dim = s.mean().size();
  const auto dim = old_dim + 2 * count;
  Vector mean = Vector::Zero(dim);
  Matrix cov = kVacuumVariance * Matrix::Identity(dim, dim);
  mean.head(old_dim) = s.mean();
  cov.topLeftCorner(old_dim, old_dim) = s.cov();
  return detail::StateAccess::raw(std::move(mean), std::move(cov));
}

/// Tensor product a (x) b.
inline GaussianState tensor(const GaussianState& a, const GaussianState& b) {
  const auto na = a.mean().size(), nb = b.mean().size();
  Vector mean(na + nb);
  mean << a.mean(), b.mean();
  Matrix cov = Matrix::Zero(na + nb, na + nb);
  cov.topLeftCorner(na, na) = a.cov();
  cov.bottomRightCorner(nb, nb) = b.cov();
  return detail::StateAccess::raw(std::move(mean), std::move(cov));
}

// ---------------------------------------------------------------------------
// Statistics.

struct QuadStats {
  double mean = 0.0;
  double variance = 0.0;
};

inline QuadStats quad_stats(const GaussianState& s, const LinearForm& form) {
  const Vector& c = form.coeffs();
  if (c.size() != s.mean().size()) throw std::invalid_argument("quad_stats: form length does not match state");
  return {c.dot(s.mean()), c.dot(s.cov() * c)};
}

/// Symplectic eigenvalues, ascending.
inline std::vector<double> symplectic_eigenvalues(const GaussianState& s) {
  const Matrix m = symplectic_form(s.n_modes()) * s.cov();
  Eigen::EigenSolver<Matrix> solver(m, false);
  std::vector<double> nu;
  for (Eigen::Index k = 0; k < solver.eigenvalues().size(); ++k) {
    if (solver.eigenvalues()(k).imag() > 0.0) nu.push_back(solver.eigenvalues()(k).imag());
  }
  // Degenerate pairs can come back with zero imaginary parts only if the state is
  // unphysical; report them as zero so the bound check fails loudly.
  while (static_cast<int>(nu.size()) < s.n_modes()) nu.push_back(0.0);
  std::sort(nu.begin(), nu.end());
  return nu;
}

/// Checks symmetry and the uncertainty bound; throws PhysicsError on violation.
inline void validate(const GaussianState& s) {
  const Matrix& v = s.cov();
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol) throw PhysicsError("covariance lost symmetry");
  const auto nu = symplectic_eigenvalues(s);
  if (nu.front() < kVacuumVariance - kPositivityTol) {
    throw PhysicsError("uncertainty relation violated: symplectic eigenvalue " + std::to_string(nu.front()));
  }
}

inline double purity(const GaussianState& s) {
  return 1.0 / (std::pow(2.0, s.n_modes()) * std::sqrt(s.cov().determinant()));
}

/// Fidelity F = (Tr sqrt(sqrt(a) b sqrt(a)))^2. Supported when either state is
/// pure (any mode count) or both are single-mode.
inline double fidelity(const GaussianState& a, const GaussianState& b) {
  if (a.n_modes() != b.n_modes()) throw std::invalid_argument("fidelity: mode count mismatch");
  const Matrix sum = a.cov() + b.cov();
  const Vector delta = a.mean() - b.mean();
  const double det_sum = sum.determinant();
  const double gauss = std::exp(-0.5 * delta.dot(sum.ldlt().solve(delta)));
  const double pa = purity(a), pb = purity(b);
  if (pa >= 1.0 - 1e-6 || pb >= 1.0 - 1e-6) return std::clamp(gauss / std::sqrt(det_sum), 0.0, 1.0);
  if (a.n_modes() == 1) {
    const double lambda = 4.0 * (a.cov().determinant() - 0.25) * (b.cov().determinant() - 0.25);
    const double f = gauss / (std::sqrt(det_sum + lambda) - std::sqrt(std::max(lambda, 0.0)));
    return std::clamp(f, 0.0, 1.0);
  }
  throw std::invalid_argument("fidelity: both states mixed and multimode is unsupported");
}

// ---------------------------------------------------------------------------
// Homodyne detection.

struct HomodyneResult {
  double outcome = 0.0;
  GaussianState state;  // measured mode removed
};

/// Mean and variance of q_theta = cos(theta) x + sin(theta) p on one mode.
inline QuadStats rotated_quadrature(const GaussianState& s, int mode, double theta) {
  s.check_mode(mode);
  const Eigen::Vector2d u(std::cos(theta), std::sin(theta));
  return {u.dot(s.mode_mean(mode)), u.dot(s.mode_cov(mode) * u)};
}

/// Conditions the rest of the state on q_theta of `mode` having value `outcome`
/// and deletes the measured mode. Requires at least two modes.
inline GaussianState condition_on(const GaussianState& s, int mode, double theta, double outcome) {
  s.check_mode(mode);
  if (s.n_modes() < 2) throw std::invalid_argument("homodyne: cannot remove the only mode");
  const Vector u = [&] {
    Vector c = Vector::Zero(s.mean().size());
    c(2 * mode) = std::cos(theta);
    c(2 * mode + 1) = std::sin(theta);
    return c;
  }();
  const double var_q = u.dot(s.cov() * u);
  if (!(var_q > 0.0)) throw PhysicsError("homodyne: non-positive quadrature variance");
  const double mean_q = u.dot(s.mean());
  const Vector cross = s.cov() * u;  // Sigma_{R,q}
  Vector mean = s.mean() + cross * ((outcome - mean_q) / var_q);
  Matrix cov = s.cov() - cross * cross.transpose() / var_q;
  GaussianState conditioned = detail::StateAccess::raw(std::move(mean), std::move(cov));
  return remove_modes(std::move(conditioned), {mode});
}

inline HomodyneResult homodyne(const GaussianState& s, int mode, double theta, Rng& rng) {
  const auto q = rotated_quadrature(s, mode, theta);
  std::normal_distribution<double> dist(q.mean, std::sqrt(q.variance));
  const double outcome = dist(rng);
  return {outcome, condition_on(s, mode, theta, outcome)};
}

inline HomodyneResult homodyne(const GaussianState& s, int mode, double theta, std::uint64_t seed) {
  Rng rng(seed);
  return homodyne(s, mode, theta, rng);
}

/// Embeds a local block acting on `modes` into the identity on n modes.
inline Matrix embed(int n_modes, std::span<const int> modes, const Matrix& block) {
  const auto idx = detail::quadrature_indices(modes);
  if (block.rows() != static_cast<Eigen::Index>(idx.size()) || block.cols() != block.rows()) {
    throw std::invalid_argument("embed: block size does not match mode list");
  }
  for (int m : modes) {
    if (m < 0 || m >= n_modes) throw std::out_of_range("embed: mode index out of range");
  }
  Matrix full = Matrix::Identity(2 * n_modes, 2 * n_modes);
  full(idx, idx) = block;
  return full;
}

struct Measurement {
  int mode = 0;
  double theta = 0.0;
  std::vector<Feedforward> feedforward;
};

struct MeasuredCircuitResult {
  GaussianState averaged;     // feedforward as a linear map, outcomes traced out
  GaussianState conditioned;  // given `outcomes`, feedforward displacement applied
  std::vector<double> outcomes;
};

/// Applies the linear map `circuit`, homodynes the listed modes and feeds the
/// outcomes forward. Circuit, measurement and feedforward rows are composed
/// before they touch the covariance, so a strongly antisqueezed ancilla whose
/// noise the feedforward cancels does not cost precision. Measured modes are
/// removed from both results.
inline MeasuredCircuitResult run_measured_circuit(const GaussianState& in, const Matrix& circuit,
                                                  std::span<const Measurement> measurements, Rng& rng) {
  const int n = in.n_modes();
  if (circuit.rows() != 2 * n || circuit.cols() != 2 * n) throw std::invalid_argument("run_measured_circuit: circuit shape");
  const auto k_meas = static_cast<Eigen::Index>(measurements.size());
  std::vector<int> measured;
  Matrix u = Matrix::Zero(k_meas, 2 * n);
  Matrix ff = Matrix::Identity(2 * n, 2 * n);
  for (Eigen::Index k = 0; k < k_meas; ++k) {
    const Measurement& m = measurements[static_cast<std::size_t>(k)];
    in.check_mode(m.mode);
    if (std::find(measured.begin(), measured.end(), m.mode) != measured.end()) {
      throw std::invalid_argument("run_measured_circuit: mode measured twice");
    }
    measured.push_back(m.mode);
    u(k, 2 * m.mode) = std::cos(m.theta);
    u(k, 2 * m.mode + 1) = std::sin(m.theta);
  }
  for (Eigen::Index k = 0; k < k_meas; ++k) {
    for (const Feedforward& f : measurements[static_cast<std::size_t>(k)].feedforward) {
      in.check_mode(f.target);
      if (std::find(measured.begin(), measured.end(), f.target) != measured.end()) {
        throw std::invalid_argument("run_measured_circuit: feedforward targets a measured mode");
      }
      ff.row(2 * f.target) += f.gx * u.row(k);
      ff.row(2 * f.target + 1) += f.gp * u.row(k);
    }
  }
  std::vector<int> kept;
  for (int m = 0; m < n; ++m) {
    if (std::find(measured.begin(), measured.end(), m) == measured.end()) kept.push_back(m);
  }
  if (kept.empty()) throw std::invalid_argument("run_measured_circuit: every mode is measured");

  const Matrix o = (ff * circuit)(detail::quadrature_indices(kept), Eigen::all);
  const Matrix um = u * circuit;
  const Vector mu_o = o * in.mean(), mu_u = um * in.mean();
  const Matrix c_oo = o * in.cov() * o.transpose();
  const Matrix c_ou = o * in.cov() * um.transpose();
  const Matrix c_uu = um * in.cov() * um.transpose();

  Eigen::LLT<Matrix> chol(c_uu);
  if (chol.info() != Eigen::Success) throw PhysicsError("homodyne: outcome covariance is not positive definite");
  std::normal_distribution<double> normal;
  Vector z(k_meas);
  for (Eigen::Index k = 0; k < k_meas; ++k) z(k) = normal(rng);
  const Vector outcome = mu_u + chol.matrixL() * z;

  const Matrix gain = chol.solve(c_ou.transpose()).transpose();  // C_ou C_uu^{-1}
  GaussianState averaged = detail::StateAccess::raw(mu_o, c_oo);
  GaussianState conditioned = detail::StateAccess::raw(mu_o + gain * (outcome - mu_u), c_oo - gain * c_ou.transpose());
  return {std::move(averaged), std::move(conditioned), std::vector<double>(outcome.data(), outcome.data() + k_meas)};
}

}  // namespace cvsim
