#pragma once

// First-order equivalent circuit model: OCV curve, coulomb counting,
// the discretized RC recurrence and terminal-voltage prediction.
//
// Conventions used throughout the library:
//   * current is discharge-positive (amperes), charging data is negative;
//   * capacity is stored in coulombs (ampere-seconds);
//   * SOC is never clamped inside numerics, only when reporting;
//   * sample k drives the RC pair over (t_{k-1}, t_k] with the
//     interval-average current (i_{k-1} + i_k) / 2, see interval_current().

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hybrid_ecm {

struct TauBounds {
  double min_s = 0.1;
  double max_s = 1e5;

  /// Default bounds for a sampling interval: [dt/10, 1e5 s].
  static TauBounds for_dt(double dt_s) { return {dt_s / 10.0, 1e5}; }
  bool contains(double tau) const { return tau >= min_s && tau <= max_s; }
  bool operator==(const TauBounds&) const = default;
};

struct EcmParams {
  double r0 = 0.0;  // ohms
  double rd = 0.0;  // ohms
  double cd = 0.0;  // farads

  double tau() const { return rd * cd; }
  bool operator==(const EcmParams&) const = default;
};

/// True when all three elements are finite and positive and tau lies in bounds.
bool is_physical(const EcmParams& p, const TauBounds& bounds);

/// Throws InputError naming the offending element.
void require_physical(const EcmParams& p, const TauBounds& bounds, const std::string& where = {});

struct BatteryState {
  double soc = 1.0;
  double u_d = 0.0;  // volts across the RC pair
};

struct OcvPoint {
  double volts = 0.0;
  double slope = 0.0;  // dV/dSOC
  bool extrapolated = false;
};

/// U_OC = f(SOC) as a polynomial with ascending coefficients.
class OcvCurve {
 public:
  OcvCurve() = default;

  /// Only finiteness and range ordering are enforced here. Use checked() or
  /// fit_ocv() when the curve must also be strictly increasing.
  OcvCurve(std::vector<double> coeffs, double soc_lo = 0.0, double soc_hi = 1.0);

  /// Also requires strict monotonicity on a 101-point grid over the range.
  static OcvCurve checked(std::vector<double> coeffs, double soc_lo, double soc_hi);

  OcvPoint eval(double soc) const;
  double operator()(double soc) const { return eval(soc).volts; }

  /// Bisection over the valid range; results outside the curve's image are
  /// pinned to the nearest range endpoint.
  double invert(double volts, double tol = 1e-6) const;

  bool is_monotone() const;

  const std::vector<double>& coeffs() const { return coeffs_; }
  double soc_lo() const { return lo_; }
  double soc_hi() const { return hi_; }

 private:
  std::vector<double> coeffs_{0.0};
  double lo_ = 0.0;
  double hi_ = 1.0;
};

/// Least-squares polynomial fit of the given degree. Rejects fits that are not
/// strictly increasing on the check grid.
OcvCurve fit_ocv(std::span<const double> soc_points, std::span<const double> voltage_points,
                 int degree = 9);

/// Endpoint sanity messages (empty when f(lo), f(hi) lie inside [v_min, v_max]).
std::vector<std::string> ocv_range_warnings(const OcvCurve& curve, double v_min = 2.5,
                                            double v_max = 4.2, double slack_v = 0.05);

struct BatteryConfig {
  double capacity_coulombs = 2.9 * 3600.0;
  double dt_s = 1.0;
  OcvCurve ocv;

  static constexpr double kCoulombsPerAh = 3600.0;
  void validate() const;
  TauBounds tau_bounds() const { return TauBounds::for_dt(dt_s); }
};

/// Left-rectangle coulomb counting over one sample interval.
double soc_step(double soc, double i_l, const BatteryConfig& cfg);

/// Coulomb-counted SOC trajectory, socs[0] = soc0, socs[k+1] = soc_step(socs[k], i_k).
std::vector<double> coulomb_count(std::span<const double> currents, double soc0,
                                  const BatteryConfig& cfg);

/// Exact solution of the RC branch for a constant current over dt.
double ud_step(double u_d, double i_l, const EcmParams& p, double dt_s);

double terminal_voltage(double soc, double u_d, double i_l, double r0, const OcvCurve& curve);

/// Current driving the RC pair into sample k: mean of samples k-1 and k
/// (sample 0 uses its own value).
inline double interval_current(std::span<const double> currents, std::size_t k) {
  return k == 0 ? currents[0] : 0.5 * (currents[k - 1] + currents[k]);
}

/// Forward-iterates the recurrence from u_d0 (state just before sample 0).
std::vector<double> simulate_series(std::span<const EcmParams> params_per_step,
                                    std::span<const double> currents,
                                    std::span<const double> socs, const BatteryConfig& cfg,
                                    double u_d0 = 0.0);

}  // namespace hybrid_ecm
