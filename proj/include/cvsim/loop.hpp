#pragma once

// Nested-loop pulse processor: an outer memory loop of n_data + m_anc pulse
// slots and an inner loop one slot long. Each tick one outer slot arrives at a
// variable beam splitter (VBS) that couples it to the pulse circulating in the
// inner loop.
//
// Per tick, in order:
//   1. phase shifter (VPS) on the inner-loop content,
//   2. VBS: outer' = sqrt(T) outer + sqrt(1-T) inner, inner' = sqrt(T) inner - sqrt(1-T) outer
//      (T = 1 passes, T = 0 swaps with a sign on the stored pulse),
//   3. EOM displacement plus feedforward on the outgoing outer pulse,
//   4. optional homodyne of the outgoing outer pulse (it is consumed),
//   5. loss: outer transmission on the outgoing pulse, inner transmission on the inner content.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "cvsim/gaussian.hpp"

namespace cvsim::loop {

/// Invalid schedule: consumed slots, bad ids, inner-loop conflicts.
class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LoopConfig {
  int n_data = 1;
  int m_anc = 0;
  double slot_time = 50e-9;         // seconds, bookkeeping only
  double outer_transmission = 1.0;  // per outer round trip, switches included
  double inner_transmission = 1.0;  // per inner round trip

  int slots() const { return n_data + m_anc; }

  void validate() const {
    if (n_data < 0 || m_anc < 0 || n_data + m_anc < 1) throw std::invalid_argument("LoopConfig: need at least one slot");
    if (!(slot_time > 0.0) || !std::isfinite(slot_time)) throw std::invalid_argument("LoopConfig: slot_time must be positive");
    cvsim::detail::require_unit_interval(outer_transmission, "LoopConfig: outer_transmission");
    cvsim::detail::require_unit_interval(inner_transmission, "LoopConfig: inner_transmission");
  }
};

struct HomodyneSpec {
  double theta = 0.0;
  std::string outcome;
  bool operator==(const HomodyneSpec&) const = default;
};

struct FeedforwardSpec {
  std::string outcome;
  double gx = 0.0;
  double gp = 0.0;
  bool operator==(const FeedforwardSpec&) const = default;
};

/// Control settings for one tick. Ticks without a step pass everything through.
struct ScheduleStep {
  long long slot = 0;  // tick index; outer slot slot % (n_data + m_anc) arrives
  double vbs_t = 1.0;
  double vps_theta = 0.0;
  double eom_dx = 0.0;
  double eom_dp = 0.0;
  std::optional<HomodyneSpec> homodyne;
  std::vector<FeedforwardSpec> feedforward;
  bool operator==(const ScheduleStep&) const = default;
};

struct LoopProgram {
  std::vector<ScheduleStep> steps;
  std::vector<std::string> outcomes;
  bool operator==(const LoopProgram&) const = default;

  long long end_tick(int n_slots) const {
    const long long last = steps.empty() ? 0 : steps.back().slot + 1;
    const long long rounds = std::max(1LL, (last + n_slots - 1) / n_slots);
    return rounds * n_slots;
  }
};

struct OutcomeRecord {
  std::string id;
  long long slot = 0;
  int pulse = 0;
  double theta = 0.0;
  double value = 0.0;
};

struct PulseLoss {
  long long outer_passes = 0;
  long long inner_passes = 0;
  double transmission = 1.0;  // product of every loss actually applied
};

struct LoopResult {
  std::optional<GaussianState> state;  // occupied outer slots in slot order
  std::vector<int> slots;              // outer slot of each output mode
  std::vector<int> pulses;             // input pulse last routed into that slot
  std::vector<OutcomeRecord> outcomes;
  std::vector<PulseLoss> loss;         // per input pulse
  long long ticks = 0;
};

namespace detail {

inline void check_program(const LoopConfig& config, const LoopProgram& program) {
  config.validate();
  std::set<std::string> declared;
  for (const auto& id : program.outcomes) {
    if (id.empty()) throw ScheduleError("loop: empty outcome id");
    if (!declared.insert(id).second) throw ScheduleError("loop: outcome '" + id + "' declared twice");
  }
  std::set<std::string> produced;
  long long prev = -1;
  for (const ScheduleStep& st : program.steps) {
    if (st.slot < 0) throw ScheduleError("loop: negative slot " + std::to_string(st.slot));
    if (st.slot <= prev) throw ScheduleError("loop: slots must be strictly increasing (slot " + std::to_string(st.slot) + ")");
    prev = st.slot;
    cvsim::detail::require_unit_interval(st.vbs_t, "loop: vbs_t");
    cvsim::detail::require_finite(st.vps_theta, "loop: vps_theta");
    cvsim::detail::require_finite(st.eom_dx, "loop: eom_dx");
    cvsim::detail::require_finite(st.eom_dp, "loop: eom_dp");
    for (const FeedforwardSpec& f : st.feedforward) {
      cvsim::detail::require_finite(f.gx, "loop: feedforward gx");
      cvsim::detail::require_finite(f.gp, "loop: feedforward gp");
      if (!declared.contains(f.outcome)) throw ScheduleError("loop: feedforward uses undeclared outcome '" + f.outcome + "'");
      if (!produced.contains(f.outcome)) {
        throw ScheduleError("loop: feedforward at slot " + std::to_string(st.slot) + " uses outcome '" + f.outcome +
                            "' before it is measured");
      }
    }
    if (st.homodyne) {
      cvsim::detail::require_finite(st.homodyne->theta, "loop: homodyne theta");
      if (!declared.contains(st.homodyne->outcome)) {
        throw ScheduleError("loop: homodyne writes undeclared outcome '" + st.homodyne->outcome + "'");
      }
      if (!produced.insert(st.homodyne->outcome).second) {
        throw ScheduleError("loop: outcome '" + st.homodyne->outcome + "' measured twice");
      }
    }
  }
}

/// Conditions on q_theta of `mode` and resets that mode to vacuum.
inline GaussianState measure_and_reset(const GaussianState& s, int mode, double theta, Rng& rng, double& outcome) {
  const auto q = rotated_quadrature(s, mode, theta);
  if (!(q.variance > 0.0)) throw PhysicsError("loop: non-positive homodyne variance");
  std::normal_distribution<double> dist(q.mean, std::sqrt(q.variance));
  outcome = dist(rng);
  Vector u = Vector::Zero(s.mean().size());
  u(2 * mode) = std::cos(theta);
  u(2 * mode + 1) = std::sin(theta);
  const Vector cross = s.cov() * u;
  Vector mean = s.mean() + cross * ((outcome - q.mean) / q.variance);
  Matrix cov = s.cov() - cross * cross.transpose() / q.variance;
  cov.middleRows(2 * mode, 2).setZero();
  cov.middleCols(2 * mode, 2).setZero();
  cov.block<2, 2>(2 * mode, 2 * mode) = kVacuumVariance * Eigen::Matrix2d::Identity();
  mean.segment<2>(2 * mode).setZero();
  return cvsim::detail::StateAccess::raw(std::move(mean), std::move(cov));
}

}  // namespace detail

/// Runs `program` on `input` (one mode per outer slot). The inner loop starts
/// in vacuum and must be empty when the run ends. Ticks continue to the end of
/// the last started round trip, so an empty program is one lossy circulation.
inline LoopResult simulate(const LoopConfig& config, const LoopProgram& program, const GaussianState& input,
                           std::uint64_t seed) {
  detail::check_program(config, program);
  const int L = config.slots();
  if (input.n_modes() != L) {
    throw std::invalid_argument("loop simulate: input has " + std::to_string(input.n_modes()) + " modes, config has " +
                                std::to_string(L) + " slots");
  }
  const int inner = L;
  GaussianState s = append_vacuum_modes(input, 1);
  std::vector<int> label(static_cast<std::size_t>(L) + 1, -1);  // pulse held by each position
  for (int k = 0; k < L; ++k) label[static_cast<std::size_t>(k)] = k;
  LoopResult res;
  res.loss.assign(static_cast<std::size_t>(L), {});
  std::map<std::string, double> values;
  Rng rng(seed);

  const long long end = program.end_tick(L);
  std::size_t next = 0;
  const ScheduleStep idle{};
  for (long long t = 0; t < end; ++t) {
    const bool has_step = next < program.steps.size() && program.steps[next].slot == t;
    const ScheduleStep& st = has_step ? program.steps[next++] : idle;
    const int pos = static_cast<int>(t % L);
    int& outer_label = label[static_cast<std::size_t>(pos)];
    int& inner_label = label[static_cast<std::size_t>(inner)];
    const auto where = [&] { return " at slot " + std::to_string(t); };

    if (st.vps_theta != 0.0) s = phase_shift(std::move(s), inner, st.vps_theta);
    if (st.vbs_t != 1.0) {
      if (st.vbs_t > 0.0 && (outer_label < 0 || inner_label < 0)) {
        throw ScheduleError("loop: beam splitter addresses an empty or consumed slot" + where());
      }
      s = beam_splitter(std::move(s), pos, inner, st.vbs_t);
      if (st.vbs_t == 0.0) std::swap(outer_label, inner_label);
    }
    const bool displaced = st.eom_dx != 0.0 || st.eom_dp != 0.0 || !st.feedforward.empty();
    if ((displaced || st.homodyne) && outer_label < 0) {
      throw ScheduleError("loop: schedule addresses an empty or consumed slot" + where());
    }
    if (displaced) {
      double dx = st.eom_dx, dp = st.eom_dp;
      for (const FeedforwardSpec& f : st.feedforward) {
        dx += f.gx * values.at(f.outcome);
        dp += f.gp * values.at(f.outcome);
      }
      s = displace(std::move(s), pos, dx, dp);
    }
    if (st.homodyne) {
      double v = 0.0;
      s = detail::measure_and_reset(s, pos, st.homodyne->theta, rng, v);
      values[st.homodyne->outcome] = v;
      res.outcomes.push_back({st.homodyne->outcome, t, outer_label, st.homodyne->theta, v});
      outer_label = -1;
    }
    const auto pass = [&](int mode, double eta, bool outer) {
      if (eta != 1.0) s = cvsim::loss(std::move(s), mode, eta);
      const int lab = label[static_cast<std::size_t>(mode)];
      if (lab < 0) return;
      PulseLoss& pl = res.loss[static_cast<std::size_t>(lab)];
      (outer ? pl.outer_passes : pl.inner_passes) += 1;
      pl.transmission *= eta;
    };
    pass(pos, config.outer_transmission, true);
    pass(inner, config.inner_transmission, false);
  }
  if (label[static_cast<std::size_t>(inner)] >= 0) {
    throw ScheduleError("loop: pulse " + std::to_string(label[static_cast<std::size_t>(inner)]) +
                        " is still in the inner loop when the program ends");
  }
  res.ticks = end;
  for (int k = 0; k < L; ++k) {
    if (label[static_cast<std::size_t>(k)] < 0) continue;
    res.slots.push_back(k);
    res.pulses.push_back(label[static_cast<std::size_t>(k)]);
  }
  if (!res.slots.empty()) res.state = reduced(s, res.slots);
  return res;
}

// ---------------------------------------------------------------------------
// Gate-level programs.

struct PhaseGate {
  int i = 0;
  double theta = 0.0;
  bool operator==(const PhaseGate&) const = default;
};
struct BsGate {
  int i = 0, j = 1;
  double t = 0.5;
  bool operator==(const BsGate&) const = default;
};
struct DisplaceGate {
  int i = 0;
  double dx = 0.0, dp = 0.0;
  bool operator==(const DisplaceGate&) const = default;
};
/// Squeeze x -> y x by teleportation through the next unused ancilla slot,
/// which the caller prepares as an x-squeezed vacuum.
struct SqueezeTeleGate {
  int i = 0;
  double y = 1.0;
  bool operator==(const SqueezeTeleGate&) const = default;
};
struct MeasureGate {
  int i = 0;
  double theta = 0.0;
  std::string outcome;
  bool operator==(const MeasureGate&) const = default;
};
struct FeedforwardGate {
  int i = 0;
  std::string outcome;
  double gx = 0.0, gp = 0.0;
  bool operator==(const FeedforwardGate&) const = default;
};

using GateOp = std::variant<PhaseGate, BsGate, DisplaceGate, SqueezeTeleGate, MeasureGate, FeedforwardGate>;

struct Gate {
  GateOp op;
  std::optional<long long> round;  // pin the gate's first tick to this outer round trip
};

namespace detail {

class Compiler {
 public:
  explicit Compiler(const LoopConfig& c) : config_(c), L_(c.slots()), consumed_(static_cast<std::size_t>(L_), false) {
    config_.validate();
  }

  void add(const Gate& g) {
    pinned_ = g.round;
    std::visit([&](const auto& op) { emit(op); }, g.op);
  }

  LoopProgram finish() {
    LoopProgram p;
    for (auto& [slot, st] : steps_) p.steps.push_back(std::move(st));
    p.outcomes = std::move(outcomes_);
    return p;
  }

 private:
  void check_slot(int i) const {
    if (i < 0 || i >= L_) throw ScheduleError("loop compile: slot " + std::to_string(i) + " out of range");
    if (consumed_[static_cast<std::size_t>(i)]) throw ScheduleError("loop compile: slot " + std::to_string(i) + " was consumed by a measurement");
  }

  // First tick >= free_ at which outer slot `pos` arrives, honouring a pinned round.
  long long start_tick(int pos) {
    long long round = (free_ - pos + L_ - 1) / L_;
    if (free_ <= pos) round = 0;
    if (pinned_) {
      if (*pinned_ < round) {
        throw ScheduleError("loop compile: slot conflict, round " + std::to_string(*pinned_) +
                            " overlaps a gate still holding the inner loop");
      }
      round = *pinned_;
    }
    pinned_.reset();
    return round * L_ + pos;
  }

  ScheduleStep& at(long long tick) {
    auto [it, inserted] = steps_.try_emplace(tick);
    if (inserted) it->second.slot = tick;
    free_ = std::max(free_, tick + 1);
    return it->second;
  }

  void emit(const PhaseGate& g) {
    check_slot(g.i);
    cvsim::detail::require_finite(g.theta, "phase gate theta");
    const long long t0 = start_tick(g.i);
    at(t0).vbs_t = 0.0;  // inner now holds -a_i
    ScheduleStep& out = at(t0 + L_);
    out.vps_theta = g.theta + std::numbers::pi;
    out.vbs_t = 0.0;
  }

  void emit(const BsGate& g) {
    check_slot(g.i);
    check_slot(g.j);
    if (g.i == g.j) throw ScheduleError("loop compile: beam splitter needs two distinct slots");
    cvsim::detail::require_unit_interval(g.t, "beam splitter transmissivity");
    const int a = std::min(g.i, g.j), b = std::max(g.i, g.j);
    const long long t0 = start_tick(a);
    at(t0).vbs_t = 0.0;  // inner holds -a
    ScheduleStep& mid = at(t0 + (b - a));
    mid.vbs_t = g.t;
    // bs(a, b) wants -a against b; bs(b, a) wants +a. The stored pulse leaves
    // with the sign it had, so flip it back on the way out in the first case.
    mid.vps_theta = (a == g.i) ? 0.0 : std::numbers::pi;
    ScheduleStep& out = at(t0 + L_);
    out.vps_theta = (a == g.i) ? std::numbers::pi : 0.0;
    out.vbs_t = 0.0;
  }

  void emit(const DisplaceGate& g) {
    check_slot(g.i);
    ScheduleStep& st = at(start_tick(g.i));
    st.eom_dx = g.dx;
    st.eom_dp = g.dp;
  }

  void emit(const MeasureGate& g) {
    check_slot(g.i);
    std::string id = g.outcome.empty() ? "m" + std::to_string(outcomes_.size()) : g.outcome;
    if (std::find(outcomes_.begin(), outcomes_.end(), id) != outcomes_.end()) {
      throw ScheduleError("loop compile: outcome '" + id + "' measured twice");
    }
    at(start_tick(g.i)).homodyne = HomodyneSpec{g.theta, id};
    outcomes_.push_back(std::move(id));
    consumed_[static_cast<std::size_t>(g.i)] = true;
  }

  void emit(const FeedforwardGate& g) {
    check_slot(g.i);
    if (std::find(outcomes_.begin(), outcomes_.end(), g.outcome) == outcomes_.end()) {
      throw ScheduleError("loop compile: feedforward uses unknown outcome '" + g.outcome + "'");
    }
    at(start_tick(g.i)).feedforward.push_back({g.outcome, g.gx, g.gp});
  }

  void emit(const SqueezeTeleGate& g) {
    check_slot(g.i);
    if (!(g.y > 0.0) || !std::isfinite(g.y)) throw std::invalid_argument("squeeze_tele: y must be positive and finite");
    if (g.y == 1.0) {
      pinned_.reset();
      return;
    }
    if (next_anc_ >= config_.m_anc) throw ScheduleError("loop compile: squeeze_tele needs an unused ancilla slot");
    const int anc = config_.n_data + next_anc_++;
    const double y = g.y < 1.0 ? g.y : 1.0 / g.y;
    const double t = y * y;
    constexpr double kQuarter = std::numbers::pi / 2;
    if (g.y > 1.0) emit(PhaseGate{g.i, kQuarter});
    emit(BsGate{g.i, anc, t});
    const std::string id = "sq" + std::to_string(anc);
    emit(MeasureGate{anc, kQuarter, id});
    emit(FeedforwardGate{g.i, id, 0.0, -std::sqrt((1.0 - t) / t)});
    if (g.y > 1.0) emit(PhaseGate{g.i, -kQuarter});
  }

  LoopConfig config_;
  int L_;
  std::vector<bool> consumed_;
  std::map<long long, ScheduleStep> steps_;
  std::vector<std::string> outcomes_;
  std::optional<long long> pinned_;
  long long free_ = 0;
  int next_anc_ = 0;
};

}  // namespace detail

/// Routes each gate through the inner loop. Gates run in list order; a
/// two-slot gate holds the first-arriving pulse in the inner loop until the
/// partner arrives and returns it on the next round trip.
inline LoopProgram compile_gates(const LoopConfig& config, std::span<const Gate> gates) {
  detail::Compiler c(config);
  for (const Gate& g : gates) c.add(g);
  return c.finish();
}

inline LoopProgram compile_gates(const LoopConfig& config, std::initializer_list<Gate> gates) {
  return compile_gates(config, std::span<const Gate>(gates.begin(), gates.size()));
}

/// The same gate list applied directly with gaussian-core (unitary gates only).
inline GaussianState apply_gates_direct(GaussianState s, std::span<const Gate> gates) {
  for (const Gate& g : gates) {
    if (const auto* p = std::get_if<PhaseGate>(&g.op)) {
      s = phase_shift(std::move(s), p->i, p->theta);
    } else if (const auto* b = std::get_if<BsGate>(&g.op)) {
      s = beam_splitter(std::move(s), b->i, b->j, b->t);
    } else if (const auto* d = std::get_if<DisplaceGate>(&g.op)) {
      s = displace(std::move(s), d->i, d->dx, d->dp);
    } else {
      throw std::invalid_argument("apply_gates_direct: only phase, bs and displace gates have a direct form");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Passive networks and entangled-state programs.

using ComplexMatrix = Eigen::MatrixXcd;

/// Mode-operator matrix of a passive network: a -> U a.
inline Matrix passive_symplectic(const ComplexMatrix& u) {
  const auto n = u.rows();
  Matrix s(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::complex<double> z = u(i, j);
      s(2 * i, 2 * j) = z.real();
      s(2 * i, 2 * j + 1) = -z.imag();
      s(2 * i + 1, 2 * j) = z.imag();
      s(2 * i + 1, 2 * j + 1) = z.real();
    }
  }
  return s;
}

/// Decomposes a unitary into phase gates and nearest-neighbour beam splitters
/// on slots offset .. offset+n-1, in application order.
inline std::vector<Gate> decompose_passive(const ComplexMatrix& u, int offset = 0) {
  const auto n = u.rows();
  if (u.cols() != n || n == 0) throw std::invalid_argument("decompose_passive: matrix must be square");
  if ((u * u.adjoint() - ComplexMatrix::Identity(n, n)).cwiseAbs().maxCoeff() > 1e-10) {
    throw std::invalid_argument("decompose_passive: matrix is not unitary");
  }
  struct Rot {
    int r;
    double t, phi;
  };
  std::vector<Rot> rots;
  ComplexMatrix w = u;
  for (Eigen::Index c = 0; c + 1 < n; ++c) {
    for (Eigen::Index r = n - 1; r > c; --r) {
      const std::complex<double> a = w(r - 1, c), b = w(r, c);
      if (std::abs(b) < 1e-300) continue;
      // phase row r so b lines up with a, then rotate it away
      const double phi = (std::abs(a) > 0 ? std::arg(a) : 0.0) - std::arg(b);
      w.row(r) *= std::polar(1.0, phi);
      const double t = std::norm(a) / (std::norm(a) + std::norm(b));
      const double ct = std::sqrt(t), st = std::sqrt(1.0 - t);
      const Eigen::RowVectorXcd top = w.row(r - 1), bot = w.row(r);
      w.row(r - 1) = ct * top + st * bot;
      w.row(r) = -st * top + ct * bot;
      rots.push_back({static_cast<int>(r), t, phi});
    }
  }
  std::vector<Gate> gates;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double th = std::arg(w(k, k));
    if (th != 0.0) gates.push_back({PhaseGate{offset + static_cast<int>(k), th}, {}});
  }
  for (auto it = rots.rbegin(); it != rots.rend(); ++it) {
    gates.push_back({BsGate{offset + it->r, offset + it->r - 1, it->t}, {}});
    if (it->phi != 0.0) gates.push_back({PhaseGate{offset + it->r, -it->phi}, {}});
  }
  return gates;
}

enum class EntangledKind { EPR, GHZ, ClusterLinear };

inline const char* to_string(EntangledKind k) {
  switch (k) {
    case EntangledKind::EPR: return "EPR";
    case EntangledKind::GHZ: return "GHZ";
    case EntangledKind::ClusterLinear: return "CLUSTER_LINEAR";
  }
  return "?";
}

struct Certificate {
  std::string name;
  LinearForm form;
};

/// Forms whose vacuum-normalized variance is e^{-2r} for the generated state.
inline std::vector<Certificate> certificate_forms(EntangledKind kind, int n) {
  const auto unit = [n](std::initializer_list<std::pair<int, double>> terms) {
    Vector c = Vector::Zero(2 * n);
    for (auto [idx, v] : terms) c(idx) += v;
    return LinearForm(c);
  };
  std::vector<Certificate> out;
  switch (kind) {
    case EntangledKind::EPR:
      out.push_back({"x0-x1", unit({{0, 1.0}, {2, -1.0}})});
      out.push_back({"p0+p1", unit({{1, 1.0}, {3, 1.0}})});
      break;
    case EntangledKind::GHZ: {
      Vector c = Vector::Zero(2 * n);
      for (int k = 0; k < n; ++k) c(2 * k + 1) = 1.0;
      out.push_back({"sum_p", LinearForm(c)});
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          out.push_back({"x" + std::to_string(i) + "-x" + std::to_string(j), unit({{2 * i, 1.0}, {2 * j, -1.0}})});
        }
      }
      break;
    }
    case EntangledKind::ClusterLinear:
      for (int k = 0; k < n; ++k) {
        Vector c = Vector::Zero(2 * n);
        c(2 * k + 1) = 1.0;
        if (k > 0) c(2 * (k - 1)) = -1.0;
        if (k + 1 < n) c(2 * (k + 1)) = -1.0;
        out.push_back({"p" + std::to_string(k) + "-nbrs", LinearForm(c)});
      }
      break;
  }
  return out;
}

/// Var(form) / vacuum Var(form) for each certificate form.
inline std::vector<double> certificate_ratios(const GaussianState& s, EntangledKind kind) {
  std::vector<double> out;
  for (const auto& c : certificate_forms(kind, s.n_modes())) {
    out.push_back(quad_stats(s, c.form).variance / c.form.vacuum_variance());
  }
  return out;
}

/// (I + iA)(I + A^2)^{-1/2} for the path adjacency A: maps p-squeezed vacua onto
/// a linear cluster with nullifiers p_k - x_{k-1} - x_{k+1}.
inline ComplexMatrix linear_cluster_unitary(int n) {
  Matrix a = Matrix::Zero(n, n);
  for (int k = 0; k + 1 < n; ++k) a(k, k + 1) = a(k + 1, k) = 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  const Matrix v = es.eigenvectors();
  const Vector lam = es.eigenvalues();
  ComplexMatrix d = ComplexMatrix::Zero(n, n);
  for (int k = 0; k < n; ++k) d(k, k) = std::complex<double>(1.0, lam(k)) / std::sqrt(1.0 + lam(k) * lam(k));
  return v.cast<std::complex<double>>() * d * v.transpose().cast<std::complex<double>>();
}

struct EntangledProgram {
  EntangledKind kind = EntangledKind::EPR;
  LoopConfig config;
  std::vector<Gate> gates;
  LoopProgram program;
  GaussianState input;  // squeezed pulses injected into the outer loop
};

/// Loop program for an EPR pair, an n-mode GHZ state or an n-mode linear cluster.
inline EntangledProgram generate_entangled(EntangledKind kind, int n, double r) {
  cvsim::detail::require_finite(r, "generate_entangled: r");
  if (kind == EntangledKind::EPR) n = 2;
  if (n < 2) throw std::invalid_argument("generate_entangled: need at least two modes");
  LoopConfig config{.n_data = n};
  GaussianState input = vacuum(n);
  std::vector<Gate> gates;
  switch (kind) {
    case EntangledKind::EPR:
      input = squeeze(squeeze(std::move(input), 0, r), 1, -r);
      gates.push_back({BsGate{0, 1, 0.5}, {}});
      break;
    case EntangledKind::GHZ:
      // p-squeezed slot 0 spread evenly over all slots, x-squeezed elsewhere
      input = squeeze(std::move(input), 0, -r);
      for (int k = 1; k < n; ++k) input = squeeze(std::move(input), k, r);
      for (int k = 0; k + 1 < n; ++k) gates.push_back({BsGate{k + 1, k, 1.0 / (n - k)}, {}});
      break;
    case EntangledKind::ClusterLinear:
      for (int k = 0; k < n; ++k) input = squeeze(std::move(input), k, -r);
      gates = decompose_passive(linear_cluster_unitary(n));
      break;
  }
  LoopProgram program = compile_gates(config, gates);
  return {kind, config, std::move(gates), std::move(program), std::move(input)};
}

}  // namespace cvsim::loop
