#include "hybrid_ecm/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/random.hpp"

namespace hybrid_ecm {

CorrectedParams correct_params(const EcmParams& base, const CorrectionTriple& corr,
                               const ParamGuards& guards) {
  CorrectedParams out{{base.r0 + corr.d_r0, base.rd + corr.d_rd, base.cd + corr.d_cd}, {}};
  EcmParams& p = out.params;
  ClampFlags& f = out.flags;
  if (!(p.r0 >= guards.r0_floor)) {
    p.r0 = guards.r0_floor;
    f.r0 = true;
  }
  if (!(p.rd >= guards.rd_floor)) {
    p.rd = guards.rd_floor;
    f.rd = true;
  }
  if (!(p.cd >= guards.cd_floor)) {
    p.cd = guards.cd_floor;
    f.cd = true;
  }
  const double tau = p.rd * p.cd;
  if (tau < guards.tau.min_s) {
    p.cd = guards.tau.min_s / p.rd;
    f.tau = f.cd = true;
  } else if (tau > guards.tau.max_s) {
    p.cd = guards.tau.max_s / p.rd;
    f.tau = f.cd = true;
  }
  return out;
}

HybridModel HybridModel::fresh(const std::array<FnnConfig, 3>& configs, const NormStats& norm,
                               const OcvCurve& ocv, double dt_s) {
  HybridModel m;
  for (std::size_t j = 0; j < 3; ++j) m.nets[j] = fnn_init(configs[j], norm);
  m.ocv = ocv;
  m.dt_s = dt_s;
  m.guards = ParamGuards::for_dt(dt_s);
  m.meta.seed = configs[0].seed;
  return m;
}

CorrectionTriple HybridModel::corrections(const FnnInput& input,
                                          std::array<FnnCache, 3>* caches) const {
  CorrectionTriple c;
  c.d_r0 = fnn_forward(nets[0], input, caches ? &(*caches)[0] : nullptr);
  c.d_rd = fnn_forward(nets[1], input, caches ? &(*caches)[1] : nullptr);
  c.d_cd = fnn_forward(nets[2], input, caches ? &(*caches)[2] : nullptr);
  return c;
}

std::array<FnnConfig, 3> default_fnn_configs(std::uint64_t seed) {
  std::array<FnnConfig, 3> c;
  c[0] = {{128, 4}, 200, 0.001, OptimizerKind::adagrad, seed, 0.01};
  c[1] = {{256, 4}, 200, 0.01, OptimizerKind::adagrad, seed + 1, 0.01};
  c[2] = {{8, 4}, 200, 0.01, OptimizerKind::adam, seed + 2, 100.0};
  return c;
}

WindowInput WindowInput::of(const SeriesData& data, std::span<const double> socs,
                            std::span<const EcmParams> base, std::size_t begin, std::size_t end) {
  if (begin >= end || end > data.size() || socs.size() != data.size() ||
      base.size() != data.size()) {
    throw InputError("window [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") does not fit the aligned series");
  }
  const std::size_t n = end - begin;
  WindowInput w;
  w.current = std::span<const double>(data.current_a).subspan(begin, n);
  w.voltage = std::span<const double>(data.voltage_v).subspan(begin, n);
  w.temp = std::span<const double>(data.temp_c).subspan(begin, n);
  w.soc = socs.subspan(begin, n);
  w.base = base.subspan(begin, n);
  if (begin > 0) w.prev_current = data.current_a[begin - 1];
  return w;
}

WindowPass predict_window(const HybridModel& model, const WindowInput& window, bool keep_cache) {
  const std::size_t n = window.size();
  if (n == 0) throw InputError("predict_window: empty window");
  if (window.voltage.size() != n || window.temp.size() != n || window.soc.size() != n ||
      window.base.size() != n) {
    throw InputError("predict_window: length mismatch");
  }
  WindowPass pass;
  pass.dt_s = model.dt_s;
  pass.v_pred.resize(n);
  pass.u_d.resize(n);
  if (keep_cache) pass.steps.resize(n);

  double u_d = window.u_d0;
  std::array<FnnCache, 3> scratch;
  for (std::size_t k = 0; k < n; ++k) {
    const EcmParams& base = window.base[k];
    if (!is_physical(base, model.guards.tau)) {
      require_physical(base, model.guards.tau, "window step " + std::to_string(k));
    }
    const double i_k = window.current[k];
    auto* caches = keep_cache ? &pass.steps[k].nets : &scratch;
    const auto corr = model.corrections({i_k, window.voltage[k], window.temp[k]}, caches);
    const auto corrected = correct_params(base, corr, model.guards);
    const EcmParams& p = corrected.params;

    double i_rc = i_k;
    if (k > 0) {
      i_rc = 0.5 * (window.current[k - 1] + i_k);
    } else if (window.prev_current) {
      i_rc = 0.5 * (*window.prev_current + i_k);
    }
    const double u_prev = u_d;
    u_d = ud_step(u_d, i_rc, p, model.dt_s);
    pass.u_d[k] = u_d;
    pass.v_pred[k] = terminal_voltage(window.soc[k], u_d, i_k, p.r0, model.ocv);

    if (keep_cache) {
      StepCache& c = pass.steps[k];
      c.params = p;
      c.flags = corrected.flags;
      c.current = i_k;
      c.i_rc = i_rc;
      c.u_prev = u_prev;
      c.decay = std::exp(-model.dt_s / (p.rd * p.cd));
    }
  }
  return pass;
}

double loss_mse(std::span<const double> pred, std::span<const double> truth) {
  return mse(pred, truth);
}

HybridGradients backward_window(const HybridModel& model, const WindowPass& pass,
                                std::span<const double> truth) {
  const std::size_t n = pass.v_pred.size();
  if (pass.steps.size() != n) throw InputError("backward_window: pass has no cache");
  if (truth.size() != n) throw InputError("backward_window: truth length mismatch");

  HybridGradients g;
  for (std::size_t j = 0; j < 3; ++j) g.nets[j] = FnnGradients::zeros_like(model.nets[j]);
  g.loss = loss_mse(pass.v_pred, truth);

  const double dt = pass.dt_s;
  const double inv_n = 1.0 / static_cast<double>(n);
  double carry = 0.0;  // dL/du_d[k] contributed by steps after k
  for (std::size_t kk = n; kk-- > 0;) {
    const StepCache& c = pass.steps[kk];
    const double g_v = 2.0 * (pass.v_pred[kk] - truth[kk]) * inv_n;
    // v = f(soc) - u_d - i * r0
    const double g_u = carry - g_v;
    const double g_r0 = c.flags.r0 ? 0.0 : -c.current * g_v;

    // u = a * u_prev + rd * (1 - a) * i_rc,  a = exp(-dt / tau),  tau = rd * cd
    const double tau = c.params.rd * c.params.cd;
    const double du_dtau = c.decay * dt / (tau * tau) * (c.u_prev - c.params.rd * c.i_rc);
    const bool tau_free = !c.flags.tau;
    double g_rd = 0.0;
    if (!c.flags.rd) {
      g_rd = g_u * ((1.0 - c.decay) * c.i_rc + (tau_free ? du_dtau * c.params.cd : 0.0));
    }
    const double g_cd = (c.flags.cd || !tau_free) ? 0.0 : g_u * du_dtau * c.params.rd;
    carry = c.decay * g_u;

    fnn_backward_accumulate(model.nets[0], c.nets[0], g_r0, g.nets[0]);
    fnn_backward_accumulate(model.nets[1], c.nets[1], g_rd, g.nets[1]);
    fnn_backward_accumulate(model.nets[2], c.nets[2], g_cd, g.nets[2]);
  }
  return g;
}

void TrainingWindowing::validate() const {
  if (window_len < 1 || stride < 1 || stride > window_len) {
    throw InputError("training windows need 1 <= stride <= window length");
  }
}

std::vector<double> predict_series(const HybridModel& model, const SeriesData& data,
                                   std::span<const double> socs, std::span<const EcmParams> base,
                                   double u_d0) {
  WindowInput w = WindowInput::of(data, socs, base, 0, data.size());
  w.u_d0 = u_d0;
  return predict_window(model, w, false).v_pred;
}

NormStats input_stats(const SeriesData& data, std::size_t begin, std::size_t end) {
  std::vector<FnnInput> xs;
  xs.reserve(end - begin);
  for (std::size_t k = begin; k < end; ++k) {
    xs.push_back({data.current_a[k], data.voltage_v[k], data.temp_c[k]});
  }
  return NormStats::from_samples(xs);
}

namespace {

struct PrePass {
  std::vector<double> u_d;
  double loss = 0.0;
};

PrePass sequential_pass(const HybridModel& model, const TrainingSet& set, std::size_t begin,
                        std::size_t end) {
  const WindowInput w = WindowInput::of(set.data, set.socs, set.base, 0, end);
  WindowPass pass = predict_window(model, w, false);
  const std::span<const double> v(pass.v_pred);
  const std::span<const double> y(set.data.voltage_v);
  PrePass out;
  out.loss = loss_mse(v.subspan(begin, end - begin), y.subspan(begin, end - begin));
  out.u_d = std::move(pass.u_d);
  return out;
}

}  // namespace

TrainingResult train_offline(const TrainingSet& set, const BatteryConfig& cfg,
                             const std::array<FnnConfig, 3>& configs, const TrainOptions& opts) {
  opts.windowing.validate();
  const std::size_t n = set.data.size();
  const std::size_t end = opts.end == 0 ? n : opts.end;
  if (end > n || opts.begin >= end) {
    throw InputError("training range [" + std::to_string(opts.begin) + ", " +
                     std::to_string(end) + ") is empty or exceeds the series");
  }
  if (set.socs.size() != n || set.base.size() != n) {
    throw InputError("train_offline: SOC/base parameter trajectories are not aligned");
  }
  for (const auto& c : configs) c.validate();

  HybridModel model =
      HybridModel::fresh(configs, input_stats(set.data, opts.begin, end), cfg.ocv, cfg.dt_s);
  std::array<OptimizerState, 3> optim;
  for (std::size_t j = 0; j < 3; ++j) {
    optim[j] = OptimizerState::make(model.nets[j], configs[j].optimizer);
  }

  std::vector<std::size_t> starts;
  for (std::size_t s = opts.begin; s < end; s += opts.windowing.stride) starts.push_back(s);

  std::size_t max_epochs = 0;
  for (const auto& c : configs) max_epochs = std::max(max_epochs, c.epochs);

  TrainingResult result{model, {}, 0, false, false, {}};
  PrePass pre = sequential_pass(model, set, opts.begin, end);
  if (!std::isfinite(pre.loss)) throw NumericalError("initial training loss is not finite");
  result.loss_history.push_back(pre.loss);
  result.model.meta.baseline_loss = pre.loss;
  double best = pre.loss;
  std::size_t stale = 0;
  Rng rng(opts.shuffle_seed);

  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    for (std::size_t i = starts.size(); i > 1; --i) {
      std::swap(starts[i - 1], starts[rng.next() % i]);
    }
    for (const std::size_t s : starts) {
      const std::size_t e = std::min(s + opts.windowing.window_len, end);
      WindowInput w = WindowInput::of(set.data, set.socs, set.base, s, e);
      w.u_d0 = s == 0 ? 0.0 : pre.u_d[s - 1];
      const WindowPass pass = predict_window(model, w, true);
      const auto grads = backward_window(model, pass, w.voltage);
      for (std::size_t j = 0; j < 3; ++j) {
        if (epoch <= configs[j].epochs) {
          optimizer_step(model.nets[j], grads.nets[j], optim[j], configs[j].learning_rate);
        }
      }
    }

    const double prev = result.loss_history.back();
    pre = sequential_pass(model, set, opts.begin, end);
    result.loss_history.push_back(pre.loss);
    if (opts.on_epoch) opts.on_epoch(epoch, pre.loss);
    if (!std::isfinite(pre.loss)) {
      result.diverged = true;
      result.diagnostic = "training loss became non-finite at epoch " + std::to_string(epoch);
      break;
    }
    if (pre.loss < best) {
      best = pre.loss;
      result.best_epoch = epoch;
      result.model.nets = model.nets;
    }
    const double rel = (prev - pre.loss) / prev;
    stale = rel < opts.rel_tol ? stale + 1 : 0;
    if (stale >= opts.patience) {
      result.converged = true;
      break;
    }
  }

  result.model.meta.epochs_run = result.loss_history.size() - 1;
  result.model.meta.final_loss = best;
  result.model.meta.seed = configs[0].seed;
  return result;
}

}  // namespace hybrid_ecm
