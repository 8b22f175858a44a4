#include "hybrid_ecm/ffrls.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/text.hpp"

namespace hybrid_ecm {

namespace {

constexpr double kSingularA1 = 1e-9;
constexpr double kIllConditioned = 1e12;

double condition_number(const Eigen::Matrix3d& p) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(p, Eigen::EigenvaluesOnly);
  const auto ev = es.eigenvalues().cwiseAbs();
  const double lo = ev.minCoeff();
  return lo > 0.0 ? ev.maxCoeff() / lo : std::numeric_limits<double>::infinity();
}

}  // namespace

FfrlsState ffrls_init(double lambda, double p0_scale, const ThetaVector& theta0) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw InputError("forgetting factor must lie in (0, 1], got " + format_double(lambda));
  }
  if (!(p0_scale > 0.0) || !std::isfinite(p0_scale)) {
    throw InputError("p0_scale must be positive");
  }
  FfrlsState s;
  s.theta = theta0.vec();
  s.p = p0_scale * Eigen::Matrix3d::Identity();
  s.lambda = lambda;
  return s;
}

FfrlsUpdate ffrls_step(const FfrlsState& state, double y, const Regressor& phi) {
  const Eigen::Vector3d& f = phi.phi;
  const Eigen::Vector3d pf = state.p * f;
  const double denom = state.lambda + f.dot(pf);
  const Eigen::Vector3d gain = pf / denom;
  const double innovation = y - f.dot(state.theta);

  FfrlsUpdate out{state, false};
  out.state.theta = state.theta + gain * innovation;
  Eigen::Matrix3d p = (Eigen::Matrix3d::Identity() - gain * f.transpose()) * state.p / state.lambda;
  out.state.p = 0.5 * (p + p.transpose());

  if (!std::isfinite(denom) || !out.state.theta.allFinite() || !out.state.p.allFinite()) {
    return {state, true};
  }
  return out;
}

ThetaVector theta_forward(const EcmParams& params, double dt_s) {
  const double tau = params.rd * params.cd;
  const double den = dt_s + 2.0 * tau;
  const double series = params.r0 * dt_s + params.rd * dt_s;
  const double cross = 2.0 * params.r0 * params.rd * params.cd;
  return {(dt_s - 2.0 * tau) / den, (series + cross) / den, (series - cross) / den};
}

InversionResult params_from_theta(const ThetaVector& theta, double dt_s, const TauBounds& bounds) {
  InversionResult out;
  const double a1 = theta.a1;
  if (!std::isfinite(a1) || !std::isfinite(theta.a2) || !std::isfinite(theta.a3) ||
      std::abs(1.0 + a1) <= kSingularA1 || std::abs(1.0 - a1) <= kSingularA1) {
    out.status = InversionStatus::singular;
    return out;
  }
  const double tau = dt_s * (1.0 - a1) / (2.0 * (1.0 + a1));
  const double r0 = (theta.a2 - theta.a3) / (1.0 - a1);
  const double rd = (theta.a2 + theta.a3) / (1.0 + a1) - r0;
  out.params = {r0, rd, tau / rd};
  if (!(r0 > 0.0) || !(rd > 0.0) || !(tau > 0.0) || !is_physical(out.params, bounds)) {
    out.status = InversionStatus::non_physical;
  }
  return out;
}

StreamingIdentifier::StreamingIdentifier(const FfrlsOptions& opts, double dt_s,
                                         const TauBounds& bounds)
    : dt_s_(dt_s), bounds_(bounds) {
  state_ = ffrls_init(opts.lambda, opts.p0_scale, theta_forward(opts.prior, dt_s));
  require_physical(opts.prior, bounds, "FFRLS prior");
  state_.last_valid_params = opts.prior;
}

StreamingIdentifier::Step StreamingIdentifier::push(double current, double voltage,
                                                    double ocv_volts) {
  const double y = ocv_volts - voltage;
  Step step;
  if (have_prev_) {
    const auto upd = ffrls_step(state_, y, Regressor::make(y_prev_, current, i_prev_));
    step.degenerate = upd.degenerate;
    state_ = upd.state;
    const auto inv = params_from_theta(ThetaVector::from(state_.theta), dt_s_, bounds_);
    if (inv.ok() && !upd.degenerate) {
      state_.last_valid_params = inv.params;
      step.valid = true;
    }
  }
  have_prev_ = true;
  y_prev_ = y;
  i_prev_ = current;
  step.theta = ThetaVector::from(state_.theta);
  step.params = *state_.last_valid_params;
  return step;
}

Identification identify_series(const SeriesData& data, const OcvCurve& curve,
                               std::span<const double> socs, const BatteryConfig& cfg,
                               const FfrlsOptions& opts) {
  const std::size_t n = data.size();
  if (n < 2) throw InputError("identify_series: need at least 2 samples");
  if (socs.size() != n) throw InputError("identify_series: SOC trajectory length mismatch");

  Identification id;
  id.params.reserve(n);
  id.thetas.reserve(n);
  id.valid.reserve(n);
  StreamingIdentifier ident(opts, cfg.dt_s, cfg.tau_bounds());
  for (std::size_t k = 0; k < n; ++k) {
    const auto step = ident.push(data.current_a[k], data.voltage_v[k], curve(socs[k]));
    id.params.push_back(step.params);
    id.thetas.push_back(step.theta);
    id.valid.push_back(step.valid ? 1 : 0);
    if (k > 0 && !step.valid) ++id.invalid_steps;
    if (step.degenerate) ++id.degenerate_steps;
    id.max_p_condition = std::max(id.max_p_condition, condition_number(ident.state().p));
  }
  id.ill_conditioned = id.degenerate_steps > 0 || !(id.max_p_condition < kIllConditioned);
  return id;
}

void write_identification_csv(const std::filesystem::path& path, const Identification& id) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "step,a1,a2,a3,r0,rd,cd,valid_flag\n";
  for (std::size_t k = 0; k < id.params.size(); ++k) {
    const auto& t = id.thetas[k];
    const auto& p = id.params[k];
    out << k << ',' << format_double(t.a1) << ',' << format_double(t.a2) << ','
        << format_double(t.a3) << ',' << format_double(p.r0) << ',' << format_double(p.rd) << ','
        << format_double(p.cd) << ',' << static_cast<int>(id.valid[k]) << '\n';
  }
}

std::vector<EcmParams> read_params_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  const auto header = split(trim(line), ',');
  int col[3] = {-1, -1, -1};
  const char* names[3] = {"r0", "rd", "cd"};
  for (int c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (trim(header[j]) == names[c]) col[c] = static_cast<int>(j);
    }
    if (col[c] < 0) {
      throw InputError(path.string() + ": missing required column '" + names[c] + "'");
    }
  }
  std::vector<EcmParams> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    double v[3];
    for (int c = 0; c < 3; ++c) {
      const auto parsed = static_cast<std::size_t>(col[c]) < cells.size()
                              ? parse_double(trim(cells[static_cast<std::size_t>(col[c])]))
                              : std::nullopt;
      if (!parsed) {
        throw InputError(path.string() + ": bad value in column '" + names[c] + "' at row " +
                         std::to_string(row));
      }
      v[c] = *parsed;
    }
    out.push_back({v[0], v[1], v[2]});
    ++row;
  }
  return out;
}

}  // namespace hybrid_ecm
