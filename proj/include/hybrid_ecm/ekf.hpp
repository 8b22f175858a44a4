#pragma once

// Online SOC estimation: extended Kalman filter on x = (SOC, U_D) with
// time-varying parameters from streaming FFRLS and, optionally, frozen
// neural corrections.

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "hybrid_ecm/ecm.hpp"
#include "hybrid_ecm/ffrls.hpp"
#include "hybrid_ecm/hybrid.hpp"
#include "hybrid_ecm/series.hpp"

namespace hybrid_ecm {

struct EkfConfig {
  Eigen::Matrix2d q = Eigen::Vector2d(1e-8, 1e-6).asDiagonal();
  double r = 1e-3;  // V^2
  Eigen::Matrix2d p0 = Eigen::Vector2d(1e-2, 1e-4).asDiagonal();
  /// Initial (soc, u_d); when absent SOC comes from inverting the OCV at the
  /// first measured voltage and u_d starts at 0.
  std::optional<Eigen::Vector2d> x0;

  void validate() const;
};

struct EkfState {
  Eigen::Vector2d x = Eigen::Vector2d::Zero();  // (soc, u_d)
  Eigen::Matrix2d p = Eigen::Matrix2d::Zero();

  double soc() const { return x(0); }
  double u_d() const { return x(1); }
};

/// Currents acting over one prediction interval: `soc` drives coulomb counting
/// (left rectangle), `rc` drives the RC pair (interval average).
struct IntervalCurrent {
  double soc = 0.0;
  double rc = 0.0;

  static IntervalCurrent constant(double i) { return {i, i}; }
};

EkfState ekf_predict(const EkfState& state, const IntervalCurrent& current, const EcmParams& params,
                     const BatteryConfig& cfg, const EkfConfig& ekf_cfg);

inline EkfState ekf_predict(const EkfState& state, double i_l, const EcmParams& params,
                            const BatteryConfig& cfg, const EkfConfig& ekf_cfg) {
  return ekf_predict(state, IntervalCurrent::constant(i_l), params, cfg, ekf_cfg);
}

struct EkfUpdate {
  EkfState state;
  double predicted_v = 0.0;  // h(x_prior)
  double innovation = 0.0;
  Eigen::Vector2d gain = Eigen::Vector2d::Zero();
};

/// Throws NumericalError when the innovation covariance is not positive.
EkfUpdate ekf_update(const EkfState& prior, double measured_v, double i_l, const EcmParams& params,
                     const OcvCurve& curve, const EkfConfig& ekf_cfg);

struct EstimateOptions {
  FfrlsOptions ffrls;
  /// Replaces streaming FFRLS with a fixed per-step parameter trajectory.
  std::optional<std::vector<EcmParams>> frozen_params;
};

struct EstimationResult {
  std::vector<double> soc;
  std::vector<double> u_d;
  std::vector<double> voltage_pred;  // h at the prior state
  std::vector<double> innovation;
  std::vector<EcmParams> params;     // parameters used at each step
  std::size_t clamp_events = 0;
  std::size_t invalid_param_steps = 0;
};

/// Runs the online loop. `hybrid == nullptr` is the plain-ECM baseline.
EstimationResult estimate_soc_series(const SeriesData& data, const HybridModel* hybrid,
                                     const BatteryConfig& cfg, const EkfConfig& ekf_cfg,
                                     const EstimateOptions& opts = {});

}  // namespace hybrid_ecm
