#include "hybrid_ecm/ecm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "hybrid_ecm/errors.hpp"

namespace hybrid_ecm {

namespace {

constexpr int kMonotoneGrid = 101;

}  // namespace

bool is_physical(const EcmParams& p, const TauBounds& bounds) {
  if (!std::isfinite(p.r0) || !std::isfinite(p.rd) || !std::isfinite(p.cd)) return false;
  if (p.r0 <= 0.0 || p.rd <= 0.0 || p.cd <= 0.0) return false;
  return bounds.contains(p.tau());
}

void require_physical(const EcmParams& p, const TauBounds& bounds, const std::string& where) {
  if (is_physical(p, bounds)) return;
  std::ostringstream os;
  os.precision(17);
  os << "invalid ECM parameters" << (where.empty() ? "" : " at " + where) << ": r0=" << p.r0
     << " rd=" << p.rd << " cd=" << p.cd << " tau=" << p.tau() << " (bounds [" << bounds.min_s
     << ", " << bounds.max_s << "])";
  throw InputError(os.str());
}

OcvCurve::OcvCurve(std::vector<double> coeffs, double soc_lo, double soc_hi)
    : coeffs_(std::move(coeffs)), lo_(soc_lo), hi_(soc_hi) {
  if (coeffs_.empty()) throw InputError("OCV curve needs at least one coefficient");
  for (double c : coeffs_) {
    if (!std::isfinite(c)) throw InputError("OCV coefficient is not finite");
  }
  if (!std::isfinite(lo_) || !std::isfinite(hi_) || !(lo_ < hi_)) {
    throw InputError("OCV valid SOC range must satisfy lo < hi");
  }
}

OcvCurve OcvCurve::checked(std::vector<double> coeffs, double soc_lo, double soc_hi) {
  OcvCurve curve(std::move(coeffs), soc_lo, soc_hi);
  if (!curve.is_monotone()) {
    std::ostringstream os;
    os << "OCV polynomial is not strictly increasing on [" << soc_lo << ", " << soc_hi << "]";
    double prev = curve(soc_lo);
    for (int j = 1; j < kMonotoneGrid; ++j) {
      const double s = soc_lo + (soc_hi - soc_lo) * j / (kMonotoneGrid - 1);
      const double v = curve(s);
      if (!(v > prev)) {
        os << "; first violation near soc=" << s;
        break;
      }
      prev = v;
    }
    throw InputError(os.str());
  }
  return curve;
}

OcvPoint OcvCurve::eval(double soc) const {
  // Horner for value and derivative together.
  double v = 0.0;
  double dv = 0.0;
  for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) {
    dv = dv * soc + v;
    v = v * soc + *it;
  }
  return {v, dv, soc < lo_ || soc > hi_};
}

double OcvCurve::invert(double volts, double tol) const {
  double a = lo_;
  double b = hi_;
  if (volts <= (*this)(a)) return a;
  if (volts >= (*this)(b)) return b;
  while (b - a > tol) {
    const double m = 0.5 * (a + b);
    if ((*this)(m) < volts) {
      a = m;
    } else {
      b = m;
    }
  }
  return 0.5 * (a + b);
}

bool OcvCurve::is_monotone() const {
  double prev = (*this)(lo_);
  for (int j = 1; j < kMonotoneGrid; ++j) {
    const double v = (*this)(lo_ + (hi_ - lo_) * j / (kMonotoneGrid - 1));
    if (!(v > prev)) return false;
    prev = v;
  }
  return true;
}

OcvCurve fit_ocv(std::span<const double> soc_points, std::span<const double> voltage_points,
                 int degree) {
  if (degree < 0) throw InputError("OCV degree must be non-negative");
  if (soc_points.size() != voltage_points.size()) {
    throw InputError("fit_ocv: soc and voltage point counts differ");
  }
  std::set<double> distinct;
  for (std::size_t i = 0; i < soc_points.size(); ++i) {
    const double s = soc_points[i];
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
      throw InputError("fit_ocv: soc point " + std::to_string(i) + " outside [0, 1]");
    }
    if (!std::isfinite(voltage_points[i])) {
      throw InputError("fit_ocv: voltage point " + std::to_string(i) + " is not finite");
    }
    distinct.insert(s);
  }
  if (distinct.size() < static_cast<std::size_t>(degree) + 1) {
    throw InputError("fit_ocv: need at least " + std::to_string(degree + 1) +
                     " distinct SOC points, got " + std::to_string(distinct.size()));
  }

  const auto n = static_cast<Eigen::Index>(soc_points.size());
  Eigen::MatrixXd vander(n, degree + 1);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (int j = 0; j <= degree; ++j) {
      vander(i, j) = p;
      p *= soc_points[i];
    }
    rhs(i) = voltage_points[i];
  }
  const Eigen::VectorXd c = vander.colPivHouseholderQr().solve(rhs);
  std::vector<double> coeffs(c.data(), c.data() + c.size());
  return OcvCurve::checked(std::move(coeffs), *distinct.begin(), *distinct.rbegin());
}

std::vector<std::string> ocv_range_warnings(const OcvCurve& curve, double v_min, double v_max,
                                            double slack_v) {
  std::vector<std::string> out;
  const double lo = curve(curve.soc_lo());
  const double hi = curve(curve.soc_hi());
  if (lo < v_min - slack_v || lo > v_max + slack_v) {
    out.push_back("OCV at soc=" + std::to_string(curve.soc_lo()) + " is " + std::to_string(lo) +
                  " V, outside the terminal range");
  }
  if (hi < v_min - slack_v || hi > v_max + slack_v) {
    out.push_back("OCV at soc=" + std::to_string(curve.soc_hi()) + " is " + std::to_string(hi) +
                  " V, outside the terminal range");
  }
  return out;
}

void BatteryConfig::validate() const {
  if (!(capacity_coulombs > 0.0) || !std::isfinite(capacity_coulombs)) {
    throw InputError("battery capacity must be positive");
  }
  if (!(dt_s > 0.0) || !std::isfinite(dt_s)) throw InputError("sampling interval must be positive");
}

double soc_step(double soc, double i_l, const BatteryConfig& cfg) {
  return soc - i_l * cfg.dt_s / cfg.capacity_coulombs;
}

std::vector<double> coulomb_count(std::span<const double> currents, double soc0,
                                  const BatteryConfig& cfg) {
  std::vector<double> socs(currents.size());
  double soc = soc0;
  for (std::size_t k = 0; k < currents.size(); ++k) {
    socs[k] = soc;
    soc = soc_step(soc, currents[k], cfg);
  }
  return socs;
}

double ud_step(double u_d, double i_l, const EcmParams& p, double dt_s) {
  const double decay = std::exp(-dt_s / (p.rd * p.cd));
  return decay * u_d + p.rd * (1.0 - decay) * i_l;
}

double terminal_voltage(double soc, double u_d, double i_l, double r0, const OcvCurve& curve) {
  return curve(soc) - u_d - i_l * r0;
}

std::vector<double> simulate_series(std::span<const EcmParams> params_per_step,
                                    std::span<const double> currents,
                                    std::span<const double> socs, const BatteryConfig& cfg,
                                    double u_d0) {
  const std::size_t n = currents.size();
  if (n == 0) throw InputError("simulate_series: empty series");
  if (params_per_step.size() != n || socs.size() != n) {
    throw InputError("simulate_series: length mismatch (params " +
                     std::to_string(params_per_step.size()) + ", currents " +
                     std::to_string(n) + ", socs " + std::to_string(socs.size()) + ")");
  }
  const TauBounds bounds = cfg.tau_bounds();
  std::vector<double> out(n);
  double u_d = u_d0;
  for (std::size_t k = 0; k < n; ++k) {
    const EcmParams& p = params_per_step[k];
    if (!is_physical(p, bounds)) require_physical(p, bounds, "step " + std::to_string(k));
    u_d = ud_step(u_d, interval_current(currents, k), p, cfg.dt_s);
    out[k] = terminal_voltage(socs[k], u_d, currents[k], p.r0, cfg.ocv);
  }
  return out;
}

}  // namespace hybrid_ecm
