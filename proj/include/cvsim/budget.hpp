#pragma once

// Fiber delay-line arithmetic: transmission, pulse capacity and loop losses.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cvsim::budget {

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kDefaultGroupVelocity = kSpeedOfLight / 1.5;

namespace detail {
inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be positive and finite");
}
inline void require_non_negative(double v, const char* what) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be non-negative and finite");
}
}  // namespace detail

/// Power transmission of `length_m` of fiber with `loss_db_per_km` attenuation.
inline double transmission(double loss_db_per_km, double length_m) {
  detail::require_non_negative(loss_db_per_km, "fiber loss");
  detail::require_non_negative(length_m, "fiber length");
  return std::pow(10.0, -loss_db_per_km * (length_m / 1000.0) / 10.0);
}

/// Number of pulses of width `pulse_width_s` that fit in the line at once.
inline std::int64_t capacity(double length_m, double pulse_width_s, double group_velocity = kDefaultGroupVelocity) {
  detail::require_non_negative(length_m, "fiber length");
  detail::require_positive(pulse_width_s, "pulse width");
  detail::require_positive(group_velocity, "group velocity");
  // a whisker of slack so 100 m / (2e8 m/s * 50 ns) lands on 10, not 9.999...
  return static_cast<std::int64_t>(std::floor(length_m / (group_velocity * pulse_width_s) * (1.0 + 1e-12)));
}

struct BudgetInput {
  double fiber_loss_db_per_km = 0.2;
  double length_m = 100.0;
  double pulse_width_s = 50e-9;
  double group_velocity = kDefaultGroupVelocity;
};

struct BudgetReport {
  double transmission = 1.0;
  std::int64_t capacity = 0;
  double round_trip_time_s = 0.0;
  double loss_db = 0.0;               // per pass through the line
  double loss_per_circulation = 0.0;  // 1 - transmission
};

inline BudgetReport report(const BudgetInput& in) {
  BudgetReport r;
  r.transmission = transmission(in.fiber_loss_db_per_km, in.length_m);
  r.capacity = capacity(in.length_m, in.pulse_width_s, in.group_velocity);
  r.round_trip_time_s = in.length_m / in.group_velocity;
  r.loss_db = in.fiber_loss_db_per_km * in.length_m / 1000.0;
  r.loss_per_circulation = 1.0 - r.transmission;
  return r;
}

}  // namespace cvsim::budget
