#pragma once

// Streaming simulation of time-multiplexed cluster states. Each time slot feeds
// one squeezed pulse per arm through an ordered list of beam splitters and
// delay lines; the window holds only the pulses still inside the network plus
// the emitted pulses that some pending nullifier form still needs.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cvsim/error.hpp"
#include "cvsim/gaussian.hpp"

namespace cvsim::tdm {

enum class Quadrature { X, P };

inline char to_char(Quadrature q) { return q == Quadrature::X ? 'x' : 'p'; }

struct Squeezer {
  Quadrature squeezed = Quadrature::X;
  double r = 0.0;
  bool operator==(const Squeezer&) const = default;
};

struct BeamSplitterElement {
  int a = 0;
  int b = 1;
  double t = 0.5;
  bool operator==(const BeamSplitterElement&) const = default;
};

struct DelayElement {
  int arm = 0;
  int length = 1;
  bool operator==(const DelayElement&) const = default;
};

using NetworkElement = std::variant<BeamSplitterElement, DelayElement>;

struct NetworkSpec {
  std::vector<Squeezer> arms;
  std::vector<NetworkElement> elements;
  int width = 0;  // informational: the N of the two-delay lattice, 0 for 1D

  int n_arms() const { return static_cast<int>(arms.size()); }

  int total_delay() const {
    int total = 0;
    for (const auto& e : elements)
      if (const auto* d = std::get_if<DelayElement>(&e)) total += d->length;
    return total;
  }

  void validate() const {
    if (arms.empty()) throw std::invalid_argument("network: at least one arm is required");
    for (const Squeezer& s : arms) cvsim::detail::require_finite(s.r, "network: squeezing");
    for (const auto& e : elements) {
      if (const auto* bs = std::get_if<BeamSplitterElement>(&e)) {
        if (bs->a < 0 || bs->a >= n_arms() || bs->b < 0 || bs->b >= n_arms()) {
          throw std::invalid_argument("network: beam splitter references a missing arm");
        }
        if (bs->a == bs->b) throw std::invalid_argument("network: beam splitter arms must differ");
        cvsim::detail::require_unit_interval(bs->t, "network: beam splitter T");
      } else {
        const auto& d = std::get<DelayElement>(e);
        if (d.arm < 0 || d.arm >= n_arms()) throw std::invalid_argument("network: delay references a missing arm");
        if (d.length < 1) throw std::invalid_argument("network: delay length must be a positive integer");
      }
    }
  }

  bool operator==(const NetworkSpec&) const = default;
};

/// Two sources and one unit delay: a one-dimensional cluster.
inline NetworkSpec default_1d(double r) {
  return {{{Quadrature::X, r}, {Quadrature::P, r}},
          {BeamSplitterElement{0, 1, 0.5}, DelayElement{1, 1}, BeamSplitterElement{0, 1, 0.5}},
          0};
}

/// Four sources and delays 1 and N: a two-dimensional cluster of width N.
inline NetworkSpec default_2d(int width, double r) {
  if (width < 2) throw std::invalid_argument("default_2d: width must be at least 2");
  return {{{Quadrature::X, r}, {Quadrature::P, r}, {Quadrature::X, r}, {Quadrature::P, r}},
          {BeamSplitterElement{0, 1, 0.5}, BeamSplitterElement{2, 3, 0.5}, DelayElement{1, width}, DelayElement{3, 1},
           BeamSplitterElement{0, 1, 0.5}, BeamSplitterElement{2, 3, 0.5}, BeamSplitterElement{1, 2, 0.5}},
          width};
}

// ---------------------------------------------------------------------------
// Nullifier forms.

struct FormTerm {
  int slot_offset = 0;  // relative to the slot in which the source pulse entered
  int arm = 0;
  Quadrature quadrature = Quadrature::X;
  double coeff = 0.0;
};

/// The squeezed quadrature of one source, written in output quadratures. It
/// has variance e^{-2r}/2 in the lossless network and unit norm.
struct SqueezedForm {
  int source_arm = 0;
  Quadrature quadrature = Quadrature::X;
  double r = 0.0;
  std::vector<FormTerm> terms;

  std::string name() const { return "arm" + std::to_string(source_arm) + ":" + to_char(quadrature); }
  int span() const {
    int s = 0;
    for (const auto& t : terms) s = std::max(s, t.slot_offset);
    return s;
  }
  int slot_count() const { return span() + 1; }
  double expected_variance() const { return 0.5 * std::exp(-2.0 * r); }
  double norm() const {
    double acc = 0.0;
    for (const auto& t : terms) acc += t.coeff * t.coeff;
    return std::sqrt(acc);
  }
};

/// Propagates a unit impulse from each source through the (passive, hence
/// orthogonal) network and records where it leaves.
inline std::vector<SqueezedForm> derive_squeezed_forms(const NetworkSpec& spec) {
  spec.validate();
  std::vector<SqueezedForm> forms;
  for (int src = 0; src < spec.n_arms(); ++src) {
    SqueezedForm form{src, spec.arms[static_cast<std::size_t>(src)].squeezed, spec.arms[static_cast<std::size_t>(src)].r, {}};
    std::vector<std::deque<double>> fifos;
    for (const auto& e : spec.elements)
      if (const auto* d = std::get_if<DelayElement>(&e)) fifos.emplace_back(static_cast<std::size_t>(d->length), 0.0);
    const int horizon = spec.total_delay() + 1;
    for (int slot = 0; slot < horizon; ++slot) {
      std::vector<double> arm(static_cast<std::size_t>(spec.n_arms()), 0.0);
      if (slot == 0) arm[static_cast<std::size_t>(src)] = 1.0;
      std::size_t fifo = 0;
      for (const auto& e : spec.elements) {
        if (const auto* bs = std::get_if<BeamSplitterElement>(&e)) {
          const double c = std::sqrt(bs->t), s = std::sqrt(1.0 - bs->t);
          double& ua = arm[static_cast<std::size_t>(bs->a)];
          double& ub = arm[static_cast<std::size_t>(bs->b)];
          const double na = c * ua + s * ub, nb = c * ub - s * ua;
          ua = na;
          ub = nb;
        } else {
          const auto& d = std::get<DelayElement>(e);
          auto& q = fifos[fifo++];
          q.push_back(arm[static_cast<std::size_t>(d.arm)]);
          arm[static_cast<std::size_t>(d.arm)] = q.front();
          q.pop_front();
        }
      }
      for (int a = 0; a < spec.n_arms(); ++a) {
        const double v = arm[static_cast<std::size_t>(a)];
        if (std::abs(v) > 1e-15) form.terms.push_back({slot, a, form.quadrature, v});
      }
    }
    for (const auto& q : fifos)
      for (double v : q)
        if (std::abs(v) > 1e-15) throw std::logic_error("derive_squeezed_forms: impulse did not leave the network");
    forms.push_back(std::move(form));
  }
  return forms;
}

/// Form of a source pulse entering at `slot`, as a LinearForm over emitted modes
/// ordered (slot, arm).
inline LinearForm to_linear_form(const SqueezedForm& f, int slot, int n_slots, int n_arms) {
  Vector c = Vector::Zero(2 * n_slots * n_arms);
  for (const auto& t : f.terms) {
    const int s = slot + t.slot_offset;
    if (s >= n_slots) throw std::out_of_range("to_linear_form: form extends past the emitted slots");
    c(2 * (s * n_arms + t.arm) + (t.quadrature == Quadrature::X ? 0 : 1)) = t.coeff;
  }
  return LinearForm(std::move(c));
}

// ---------------------------------------------------------------------------
// Pulse window: a zero-mean Gaussian state over reusable mode slots.

class PulseWindow {
 public:
  explicit PulseWindow(int capacity = 8) { grow(std::max(capacity, 1)); }

  int add_squeezed(Quadrature q, double r) {
    if (free_.empty()) grow(2 * capacity());
    const int i = free_.back();
    free_.pop_back();
    used_[static_cast<std::size_t>(i)] = true;
    ++live_;
    const double sq = 0.5 * std::exp(-2.0 * r), anti = 0.5 * std::exp(2.0 * r);
    cov_(2 * i, 2 * i) = q == Quadrature::X ? sq : anti;
    cov_(2 * i + 1, 2 * i + 1) = q == Quadrature::X ? anti : sq;
    return i;
  }

  int add_vacuum() { return add_squeezed(Quadrature::X, 0.0); }

  void beam_splitter(int i, int j, double t) {
    const int idx[] = {2 * i, 2 * i + 1, 2 * j, 2 * j + 1};
    const Eigen::Matrix4d b = beam_splitter_block(t);
    Matrix rows = cov_(idx, Eigen::all);
    cov_(idx, Eigen::all) = b * rows;
    Matrix cols = cov_(Eigen::all, idx);
    cov_(Eigen::all, idx) = cols * b.transpose();
  }

  void loss(int i, double eta) {
    const double s = std::sqrt(eta);
    cov_.row(2 * i) *= s;
    cov_.row(2 * i + 1) *= s;
    cov_.col(2 * i) *= s;
    cov_.col(2 * i + 1) *= s;
    cov_(2 * i, 2 * i) += (1.0 - eta) * kVacuumVariance;
    cov_(2 * i + 1, 2 * i + 1) += (1.0 - eta) * kVacuumVariance;
  }

  void release(int i) {
    if (!used_[static_cast<std::size_t>(i)]) throw std::logic_error("PulseWindow: double release");
    cov_.row(2 * i).setZero();
    cov_.row(2 * i + 1).setZero();
    cov_.col(2 * i).setZero();
    cov_.col(2 * i + 1).setZero();
    used_[static_cast<std::size_t>(i)] = false;
    free_.push_back(i);
    --live_;
  }

  /// c^T V c for c given as (quadrature index, coefficient) pairs.
  double variance(std::span<const std::pair<int, double>> c) const {
    double acc = 0.0;
    for (const auto& [a, ca] : c)
      for (const auto& [b, cb] : c) acc += ca * cb * cov_(a, b);
    return acc;
  }

  GaussianState state(std::span<const int> modes) const {
    const auto idx = cvsim::detail::quadrature_indices(modes);
    return GaussianState(Vector::Zero(static_cast<Eigen::Index>(idx.size())), cov_(idx, idx));
  }

  int live() const { return live_; }
  int capacity() const { return static_cast<int>(used_.size()); }

 private:
  void grow(int cap) {
    const int old = capacity();
    Matrix bigger = Matrix::Zero(2 * cap, 2 * cap);
    if (old > 0) bigger.topLeftCorner(2 * old, 2 * old) = cov_;
    cov_ = std::move(bigger);
    used_.resize(static_cast<std::size_t>(cap), false);
    for (int i = cap - 1; i >= old; --i) free_.push_back(i);
  }

  Matrix cov_;
  std::vector<bool> used_;
  std::vector<int> free_;
  int live_ = 0;
};

// ---------------------------------------------------------------------------
// Streaming.

/// Welford accumulator.
struct RunningStats {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();

  void add(double v) {
    ++count;
    const double delta = v - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (v - mean);
    min = std::min(min, v);
    max = std::max(max, v);
  }
  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
};

struct FormStats {
  std::string name;
  double expected_ratio = 0.0;  // lossless squeezed value, e^{-2r}
  RunningStats ratio;           // measured variance / vacuum variance
  std::int64_t boundary = 0;    // sources whose form runs past the last slot
};

struct StreamStats {
  std::int64_t slots = 0;
  std::int64_t modes_emitted = 0;
  int peak_active = 0;    // pulses inside the network (arms + delay lines)
  int peak_retained = 0;  // emitted pulses kept for pending forms
  std::vector<FormStats> forms;
};

struct FormValue {
  int form = 0;         // index into the derived forms
  int source_slot = 0;
  double variance = 0.0;
  double ratio = 0.0;
};

struct SlotRecord {
  int slot = 0;
  std::vector<Eigen::Vector2d> arm_variances;  // (Var x, Var p) per emitted arm
  std::vector<FormValue> forms;                // forms completed in this slot
};

using SlotSink = std::function<void(const SlotRecord&)>;

/// Writes one CSV row per completed form. Stream errors raise.
class CsvSink {
 public:
  explicit CsvSink(std::ostream& out, std::vector<std::string> form_names) : out_(out), names_(std::move(form_names)) {
    out_ << "slot,source_slot,form,variance,ratio\n";
    check();
  }
  void operator()(const SlotRecord& rec) {
    for (const FormValue& f : rec.forms) {
      out_ << rec.slot << ',' << f.source_slot << ',' << names_[static_cast<std::size_t>(f.form)] << ','
           << format_double(f.variance) << ',' << format_double(f.ratio) << '\n';
    }
    check();
  }

 private:
  static std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  }
  void check() {
    if (!out_) throw std::runtime_error("csv sink: write failed");
  }
  std::ostream& out_;
  std::vector<std::string> names_;
};

struct StreamOptions {
  double eta = 1.0;         // per-slot transmission applied to every emitted pulse
  bool retain_all = false;  // keep every emitted pulse (for comparisons with a dense simulation)
};

struct StreamResult {
  StreamStats stats;
  std::optional<GaussianState> emitted;  // set with retain_all; modes ordered (slot, arm)
};

inline StreamResult run_stream(const NetworkSpec& spec, int n_slots, const SlotSink& sink = {},
                               const StreamOptions& opt = {}) {
  spec.validate();
  if (n_slots < 1) throw std::invalid_argument("stream: slot count must be positive");
  cvsim::detail::require_unit_interval(opt.eta, "stream: eta");
  const std::vector<SqueezedForm> forms = derive_squeezed_forms(spec);
  const int n_arms = spec.n_arms();
  int max_span = 0;
  for (const auto& f : forms) max_span = std::max(max_span, f.span());

  StreamResult result;
  StreamStats& stats = result.stats;
  for (const auto& f : forms) stats.forms.push_back({f.name(), std::exp(-2.0 * f.r), {}, 0});

  PulseWindow window(n_arms * (max_span + 2) + spec.total_delay());
  std::vector<std::deque<int>> fifos;
  for (const auto& e : spec.elements) {
    if (const auto* d = std::get_if<DelayElement>(&e)) {
      std::deque<int> q;
      for (int k = 0; k < d->length; ++k) q.push_back(window.add_vacuum());
      fifos.push_back(std::move(q));
    }
  }
  // emitted[slot % (max_span + 1)][arm] -> window index; all slots when retaining.
  const int ring = opt.retain_all ? n_slots : max_span + 1;
  std::vector<std::vector<int>> emitted(static_cast<std::size_t>(ring), std::vector<int>(static_cast<std::size_t>(n_arms), -1));
  int retained = 0;
  std::vector<std::pair<int, double>> coeffs;

  for (int slot = 0; slot < n_slots; ++slot) {
    std::vector<int> arm(static_cast<std::size_t>(n_arms));
    for (int a = 0; a < n_arms; ++a) {
      const Squeezer& s = spec.arms[static_cast<std::size_t>(a)];
      arm[static_cast<std::size_t>(a)] = window.add_squeezed(s.squeezed, s.r);
    }
    stats.peak_active = std::max(stats.peak_active, window.live() - retained);
    std::size_t fifo = 0;
    for (const auto& e : spec.elements) {
      if (const auto* bs = std::get_if<BeamSplitterElement>(&e)) {
        window.beam_splitter(arm[static_cast<std::size_t>(bs->a)], arm[static_cast<std::size_t>(bs->b)], bs->t);
      } else {
        const auto& d = std::get<DelayElement>(e);
        auto& q = fifos[fifo++];
        q.push_back(arm[static_cast<std::size_t>(d.arm)]);
        arm[static_cast<std::size_t>(d.arm)] = q.front();
        q.pop_front();
      }
    }

    SlotRecord rec;
    rec.slot = slot;
    auto& out = emitted[static_cast<std::size_t>(slot % ring)];
    for (int a = 0; a < n_arms; ++a) {
      const int idx = arm[static_cast<std::size_t>(a)];
      if (opt.eta < 1.0) window.loss(idx, opt.eta);
      out[static_cast<std::size_t>(a)] = idx;
      const std::pair<int, double> x[] = {{2 * idx, 1.0}}, p[] = {{2 * idx + 1, 1.0}};
      rec.arm_variances.emplace_back(window.variance(x), window.variance(p));
    }
    retained += n_arms;
    stats.modes_emitted += n_arms;
    stats.peak_retained = std::max(stats.peak_retained, retained);

    for (std::size_t fi = 0; fi < forms.size(); ++fi) {
      const SqueezedForm& f = forms[fi];
      const int source = slot - f.span();
      if (source < 0) continue;
      coeffs.clear();
      for (const auto& t : f.terms) {
        const int idx = emitted[static_cast<std::size_t>((source + t.slot_offset) % ring)][static_cast<std::size_t>(t.arm)];
        coeffs.emplace_back(2 * idx + (t.quadrature == Quadrature::X ? 0 : 1), t.coeff);
      }
      const double var = window.variance(coeffs);
      const double ratio = var / kVacuumVariance;
      stats.forms[fi].ratio.add(ratio);
      rec.forms.push_back({static_cast<int>(fi), source, var, ratio});
    }

    // Slot (slot - max_span) is not referenced by any form still pending.
    if (!opt.retain_all && slot >= max_span) {
      for (int& idx : emitted[static_cast<std::size_t>((slot - max_span) % ring)]) {
        window.release(idx);
        idx = -1;
      }
      retained -= n_arms;
    }
    ++stats.slots;
    if (sink) sink(rec);
  }

  for (std::size_t fi = 0; fi < forms.size(); ++fi) {
    stats.forms[fi].boundary = std::min<std::int64_t>(forms[fi].span(), n_slots);
  }
  if (opt.retain_all) {
    std::vector<int> order;
    for (const auto& s : emitted)
      for (int idx : s) order.push_back(idx);
    result.emitted = window.state(order);
  }
  return result;
}

inline StreamStats stream_1d(int n_pulses, double r, const SlotSink& sink = {}, const StreamOptions& opt = {}) {
  if (n_pulses < 2) throw std::invalid_argument("stream_1d: at least two pulses are required");
  return run_stream(default_1d(r), n_pulses, sink, opt).stats;
}

/// A width-N lattice streamed for n_steps rows: N * n_steps time slots.
inline StreamStats stream_2d(int n_steps, int width, double r, const SlotSink& sink = {}, const StreamOptions& opt = {}) {
  if (n_steps < 1) throw std::invalid_argument("stream_2d: at least one step is required");
  return run_stream(default_2d(width, r), n_steps * width, sink, opt).stats;
}

}  // namespace cvsim::tdm
