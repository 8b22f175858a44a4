#include "hybrid_ecm/ekf.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "hybrid_ecm/errors.hpp"

namespace hybrid_ecm {

namespace {

bool symmetric_psd(const Eigen::Matrix2d& m) {
  if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  return m(0, 0) >= 0.0 && m(1, 1) >= 0.0 && m.determinant() >= -1e-300;
}

}  // namespace

void EkfConfig::validate() const {
  if (!symmetric_psd(q)) throw InputError("EKF process noise Q must be symmetric PSD");
  if (!symmetric_psd(p0)) throw InputError("EKF initial covariance P0 must be symmetric PSD");
  if (!(r > 0.0) || !std::isfinite(r)) throw InputError("EKF measurement noise R must be positive");
}

EkfState ekf_predict(const EkfState& state, const IntervalCurrent& current, const EcmParams& params,
                     const BatteryConfig& cfg, const EkfConfig& ekf_cfg) {
  const double decay = std::exp(-cfg.dt_s / (params.rd * params.cd));
  EkfState out;
  out.x(0) = soc_step(state.x(0), current.soc, cfg);
  out.x(1) = ud_step(state.x(1), current.rc, params, cfg.dt_s);
  const Eigen::Matrix2d a = Eigen::Vector2d(1.0, decay).asDiagonal();
  const Eigen::Matrix2d p = a * state.p * a.transpose() + ekf_cfg.q;
  out.p = 0.5 * (p + p.transpose());
  return out;
}

EkfUpdate ekf_update(const EkfState& prior, double measured_v, double i_l, const EcmParams& params,
                     const OcvCurve& curve, const EkfConfig& ekf_cfg) {
  const OcvPoint ocv = curve.eval(prior.x(0));
  const double h = ocv.volts - prior.x(1) - i_l * params.r0;
  const Eigen::RowVector2d c(ocv.slope, -1.0);
  const double s = (c * prior.p * c.transpose())(0, 0) + ekf_cfg.r;
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw NumericalError("EKF innovation covariance is not positive (" + std::to_string(s) + ")");
  }
  EkfUpdate out;
  out.predicted_v = h;
  out.innovation = measured_v - h;
  out.gain = prior.p * c.transpose() / s;
  out.state.x = prior.x + out.gain * out.innovation;
  const Eigen::Matrix2d p = (Eigen::Matrix2d::Identity() - out.gain * c) * prior.p;
  out.state.p = 0.5 * (p + p.transpose());
  return out;
}

EstimationResult estimate_soc_series(const SeriesData& data, const HybridModel* hybrid,
                                     const BatteryConfig& cfg, const EkfConfig& ekf_cfg,
                                     const EstimateOptions& opts) {
  cfg.validate();
  ekf_cfg.validate();
  const std::size_t n = data.size();
  if (n == 0) throw InputError("estimate_soc_series: empty series");
  if (opts.frozen_params && opts.frozen_params->size() != n) {
    throw InputError("frozen parameter trajectory has " +
                     std::to_string(opts.frozen_params->size()) + " rows, series has " +
                     std::to_string(n));
  }
  const OcvCurve& ocv = hybrid != nullptr ? hybrid->ocv : cfg.ocv;
  const TauBounds bounds = cfg.tau_bounds();

  EkfState state;
  state.x = ekf_cfg.x0 ? *ekf_cfg.x0 : Eigen::Vector2d(ocv.invert(data.voltage_v[0]), 0.0);
  state.p = ekf_cfg.p0;

  StreamingIdentifier ident(opts.ffrls, cfg.dt_s, bounds);
  EstimationResult res;
  res.soc.reserve(n);
  res.u_d.reserve(n);
  res.voltage_pred.reserve(n);
  res.innovation.reserve(n);
  res.params.reserve(n);

  for (std::size_t k = 0; k < n; ++k) {
    const double i_k = data.current_a[k];
    const double v_k = data.voltage_v[k];
    const double soc_prior = k == 0 ? state.x(0) : soc_step(state.x(0), data.current_a[k - 1], cfg);

    EcmParams p;
    if (opts.frozen_params) {
      p = (*opts.frozen_params)[k];
      if (!is_physical(p, bounds)) require_physical(p, bounds, "frozen step " + std::to_string(k));
    } else {
      const auto step = ident.push(i_k, v_k, ocv(soc_prior));
      // the start-up transient of RLS is not trusted
      p = k < opts.ffrls.warmup_skip ? opts.ffrls.prior : step.params;
      if (k > 0 && !step.valid) ++res.invalid_param_steps;
    }
    if (hybrid != nullptr) {
      const auto corrected =
          correct_params(p, hybrid->corrections({i_k, v_k, data.temp_c[k]}), hybrid->guards);
      p = corrected.params;
      if (corrected.flags.any()) ++res.clamp_events;
    }

    if (k > 0) {
      const IntervalCurrent current{data.current_a[k - 1], interval_current(data.current_a, k)};
      state = ekf_predict(state, current, p, cfg, ekf_cfg);
    }
    const EkfUpdate upd = ekf_update(state, v_k, i_k, p, ocv, ekf_cfg);
    state = upd.state;

    res.soc.push_back(state.x(0));
    res.u_d.push_back(state.x(1));
    res.voltage_pred.push_back(upd.predicted_v);
    res.innovation.push_back(upd.innovation);
    res.params.push_back(p);
  }
  return res;
}

}  // namespace hybrid_ecm
