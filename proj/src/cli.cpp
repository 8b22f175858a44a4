#include "hybrid_ecm/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "hybrid_ecm/config.hpp"
#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/json_io.hpp"
#include "hybrid_ecm/text.hpp"

namespace hybrid_ecm {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::mutex g_log_mutex;

void log(const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << msg << '\n';
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void timing(const std::string& phase, double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", seconds);
  log("timing: " + phase + " " + buf + " s");
}

/// out.csv + ".truth.csv" -> out.truth.csv
fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

void write_xy(const fs::path& path, std::span<const double> x, std::span<const double> y) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "x,y\n";
  for (std::size_t k = 0; k < x.size(); ++k) {
    out << format_double(x[k]) << ',' << format_double(y[k]) << '\n';
  }
}

std::vector<double> steps_axis(std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) x[k] = static_cast<double>(k);
  return x;
}

/// Options every subcommand accepts.
struct Common {
  std::optional<std::string> config;
  std::optional<std::string> echo;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration");
  sub->add_option("--echo", c.echo, "Effective-config output (default: next to the main output)");
  sub->add_option("--seed", c.seed, "Master seed");
}

/// Ingestion options shared by the subcommands that read telemetry.
struct Ingest {
  std::optional<std::string> map;
  bool invert_current = false;
};

void add_ingest(CLI::App* sub, Ingest& in) {
  sub->add_option("--map", in.map, "Column mapping, e.g. time=Time,current=Current");
  sub->add_flag("--invert-current", in.invert_current, "Input current is charge-positive");
}

RunConfig base_config(const Common& c) {
  RunConfig cfg = c.config ? load_config(*c.config) : RunConfig{};
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void apply_ingest(RunConfig& cfg, const Ingest& in) {
  if (in.map) cfg.input.map = *in.map;
  if (in.invert_current) cfg.input.invert_current = true;
}

/// Flag value if given, else "<cmd>.<role>" from the config paths; the result
/// is written back so the echo carries it.
std::optional<std::string> resolve(RunConfig& cfg, const std::string& cmd, const std::string& role,
                                   const std::optional<std::string>& flag) {
  const std::string key = cmd + "." + role;
  if (flag) cfg.paths[key] = *flag;
  const auto it = cfg.paths.find(key);
  if (it == cfg.paths.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

std::string require_path(RunConfig& cfg, const std::string& cmd, const std::string& role,
                         const std::optional<std::string>& flag, const std::string& flag_name) {
  auto p = resolve(cfg, cmd, role, flag);
  if (!p) throw InputError(cmd + ": " + flag_name + " is required");
  return *p;
}

void guard_outputs(const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  for (const auto& o : outputs) {
    for (const auto& i : inputs) {
      std::error_code ec;
      if (fs::exists(i, ec) && fs::exists(o, ec) && fs::equivalent(i, o, ec)) {
        throw InputError("output " + o.string() + " would overwrite input " + i.string());
      }
    }
  }
}

void echo_config(const RunConfig& cfg, const Common& c, const fs::path& main_out) {
  const fs::path path = c.echo ? fs::path(*c.echo) : sibling(main_out, ".config.json");
  save_config(cfg, path);
}

OcvCurve load_ocv_file(const fs::path& path) {
  try {
    return ocv_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": not an OCV file (" + e.what() + ")");
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

SeriesData load_telemetry(const RunConfig& cfg, const fs::path& path) {
  try {
    return load_series(path, cfg.battery.dt_s, cfg.input.column_map());
  } catch (const InputError& e) {
    const std::string msg = e.what();
    if (msg.find(path.string()) != std::string::npos) throw;
    throw InputError(path.string() + ": " + msg);
  }
}

/// Coulomb-counted SOC from the configured soc0 or the first-voltage OCV inversion.
std::vector<double> reference_socs(const RunConfig& cfg, const BatteryConfig& batt,
                                   const SeriesData& data) {
  const double soc0 = cfg.battery.soc0 ? *cfg.battery.soc0 : batt.ocv.invert(data.voltage_v[0]);
  auto socs = coulomb_count(data.current_a, soc0, batt);
  socs.resize(data.size());
  return socs;
}

Identification identify_checked(const SeriesData& data, const BatteryConfig& batt,
                                std::span<const double> socs, const FfrlsOptions& opts,
                                const std::string& source) {
  Identification id = identify_series(data, batt.ocv, socs, batt, opts);
  const std::size_t valid = static_cast<std::size_t>(std::count(id.valid.begin(), id.valid.end(), 1));
  if (valid == 0) {
    throw NumericalError(source + ": identification is singular (no step produced physical parameters)");
  }
  if (id.ill_conditioned) {
    log("warning: " + source + ": FFRLS covariance ill-conditioned (max cond " +
        format_double(id.max_p_condition) + ", " + std::to_string(id.degenerate_steps) +
        " degenerate steps); hold-last parameters used");
  }
  if (id.invalid_steps > 0) {
    log(source + ": " + std::to_string(id.invalid_steps) + " non-physical steps held at last valid");
  }
  return id;
}

struct MetricRow {
  std::string scenario;
  std::string model;
  std::string quantity;
  double mse = 0.0;
  double rmse = 0.0;
  double improvement_pct = 0.0;
};

/// Baseline and candidate rows; improvement is on MSE for voltage and on RMSE for SOC.
std::vector<MetricRow> compare(const std::string& scenario, const std::string& quantity,
                               std::span<const double> base, std::span<const double> cand,
                               std::span<const double> truth) {
  MetricRow b{scenario, "ecm", quantity, mse(base, truth), rmse(base, truth), 0.0};
  MetricRow c{scenario, "hybrid", quantity, mse(cand, truth), rmse(cand, truth), 0.0};
  c.improvement_pct = quantity == "voltage" ? improvement_pct(b.mse, c.mse)
                                            : improvement_pct(b.rmse, c.rmse);
  return {b, c};
}

void write_metrics(const fs::path& json_path, const std::vector<MetricRow>& rows) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    arr.push_back({{"scenario", r.scenario},
                   {"model", r.model},
                   {"quantity", r.quantity},
                   {"mse", r.mse},
                   {"rmse", r.rmse},
                   {"improvement_pct", r.improvement_pct}});
  }
  write_text_file(json_path, arr.dump(1) + "\n");
  std::ofstream csv(sibling(json_path, ".csv"), std::ios::binary);
  if (!csv) throw InputError("cannot write " + sibling(json_path, ".csv").string());
  csv << "scenario,model,quantity,mse,rmse,improvement_pct\n";
  for (const auto& r : rows) {
    csv << r.scenario << ',' << r.model << ',' << r.quantity << ',' << format_double(r.mse) << ','
        << format_double(r.rmse) << ',' << format_double(r.improvement_pct) << '\n';
  }
}

std::vector<MetricRow> read_metrics(const fs::path& path) {
  const auto j = read_json_file(path);
  std::vector<MetricRow> rows;
  try {
    for (const auto& r : j) {
      rows.push_back({r.at("scenario").get<std::string>(), r.at("model").get<std::string>(),
                      r.value("quantity", std::string("soc")), r.at("mse").get<double>(),
                      r.at("rmse").get<double>(), r.at("improvement_pct").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": not a metrics file (" + e.what() + ")");
  }
  return rows;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  Common common;
  std::optional<std::string> scenario, cycle, out;
  std::optional<double> temp, duration, soc0, amplitude, sigma_v;
};

int cmd_gen(GenArgs& a) {
  RunConfig cfg = base_config(a.common);
  if (a.common.seed) {
    cfg.synth.truth.seed = *a.common.seed;
    cfg.synth.cycle.seed = *a.common.seed + 1000;
  }
  if (a.scenario) cfg.apply_scenario(*a.scenario, cfg.seed);
  if (a.cycle) cfg.synth.cycle.kind = cycle_from_string(*a.cycle);
  if (a.temp) cfg.synth.truth.ambient_c = *a.temp;
  if (a.duration) cfg.synth.cycle.duration_s = *a.duration;
  if (a.soc0) cfg.synth.soc0 = *a.soc0;
  if (a.amplitude) cfg.synth.cycle.amplitude_a = *a.amplitude;
  if (a.sigma_v) cfg.synth.truth.sigma_v = *a.sigma_v;
  const fs::path out = require_path(cfg, "gen", "out", a.out, "--out");
  cfg.validate();

  const BatteryConfig batt = cfg.battery.battery();
  const auto currents = gen_cycle(cfg.synth.cycle, batt.dt_s);
  const TruthRun run = simulate_truth(cfg.synth.truth, batt, currents, cfg.synth.soc0);
  if (run.soc_exhausted) {
    log("warning: gen: SOC exhausted after " + std::to_string(run.soc_true.size()) +
        " samples; series truncated");
  }
  if (run.soc_true.size() < 2) throw InputError("gen: fewer than 2 samples generated");
  write_csv(out, run.measured);
  write_truth_csv(sibling(out, ".truth.csv"), run);
  write_xy(sibling(out, ".voltage.xy.csv"), run.measured.time_s, run.measured.voltage_v);
  echo_config(cfg, a.common, out);
  std::cout << "gen: wrote " << run.soc_true.size() << " samples to " << out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- fit-ocv

struct FitOcvArgs {
  Common common;
  Ingest ingest;
  std::optional<std::string> input, out;
  int degree = 9;
  double soc0 = 1.0;
};

int cmd_fit_ocv(FitOcvArgs& a) {
  RunConfig cfg = base_config(a.common);
  apply_ingest(cfg, a.ingest);
  const fs::path in = require_path(cfg, "fit-ocv", "input", a.input, "--input");
  const fs::path out = require_path(cfg, "fit-ocv", "out", a.out, "--out");
  guard_outputs({in}, {out});
  cfg.validate();

  const SeriesData data = load_telemetry(cfg, in);
  BatteryConfig batt = cfg.battery.battery();
  auto socs = coulomb_count(data.current_a, a.soc0, batt);
  socs.resize(data.size());
  for (std::size_t k = 0; k < socs.size(); ++k) {
    if (socs[k] < 0.0 || socs[k] > 1.0) {
      throw InputError(in.string() + ": coulomb-counted SOC leaves [0, 1] at step " +
                       std::to_string(k) + "; check capacity or --soc0");
    }
  }
  const OcvCurve curve = fit_ocv(socs, data.voltage_v, a.degree);
  std::vector<double> fitted(socs.size());
  for (std::size_t k = 0; k < socs.size(); ++k) fitted[k] = curve(socs[k]);

  ordered_json j = ocv_to_json(curve);
  j["degree"] = a.degree;
  j["fit_rmse_v"] = rmse(fitted, data.voltage_v);
  const auto warnings = ocv_range_warnings(curve);
  j["warnings"] = warnings;
  for (const auto& w : warnings) log("warning: fit-ocv: " + w);
  write_text_file(out, j.dump(1) + "\n");
  write_xy(sibling(out, ".xy.csv"), socs, fitted);
  echo_config(cfg, a.common, out);
  std::cout << "fit-ocv: degree " << a.degree << " over SOC [" << format_double(curve.soc_lo())
            << ", " << format_double(curve.soc_hi()) << "], rmse "
            << format_double(j["fit_rmse_v"].get<double>()) << " V\n";
  return kExitOk;
}

// ---------------------------------------------------------------- identify

struct IdentifyArgs {
  Common common;
  Ingest ingest;
  std::optional<std::string> input, out, ocv;
  std::optional<double> soc0, lambda;
};

void apply_battery_flags(RunConfig& cfg, const std::optional<std::string>& ocv,
                         const std::optional<double>& soc0) {
  if (ocv) cfg.battery.ocv = load_ocv_file(*ocv);
  if (soc0) cfg.battery.soc0 = *soc0;
}

int cmd_identify(IdentifyArgs& a) {
  RunConfig cfg = base_config(a.common);
  apply_ingest(cfg, a.ingest);
  apply_battery_flags(cfg, a.ocv, a.soc0);
  if (a.lambda) cfg.ffrls.lambda = *a.lambda;
  const fs::path in = require_path(cfg, "identify", "input", a.input, "--input");
  const fs::path out = require_path(cfg, "identify", "out", a.out, "--out");
  guard_outputs({in}, {out});
  cfg.validate();

  const SeriesData data = load_telemetry(cfg, in);
  const BatteryConfig batt = cfg.battery.battery();
  const auto socs = reference_socs(cfg, batt, data);
  const Identification id = identify_checked(data, batt, socs, cfg.ffrls, in.string());
  write_identification_csv(out, id);
  std::vector<double> r0(id.params.size()), rd(id.params.size()), cd(id.params.size());
  for (std::size_t k = 0; k < id.params.size(); ++k) {
    r0[k] = id.params[k].r0;
    rd[k] = id.params[k].rd;
    cd[k] = id.params[k].cd;
  }
  write_xy(sibling(out, ".r0.xy.csv"), data.time_s, r0);
  write_xy(sibling(out, ".rd.xy.csv"), data.time_s, rd);
  write_xy(sibling(out, ".cd.xy.csv"), data.time_s, cd);
  echo_config(cfg, a.common, out);
  std::cout << "identify: " << id.params.size() << " steps, " << id.invalid_steps
            << " held, final r0 " << format_double(id.params.back().r0) << " rd "
            << format_double(id.params.back().rd) << " cd " << format_double(id.params.back().cd)
            << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  Ingest ingest;
  std::optional<std::string> input, params, out, ocv, loss_history, scenario;
  std::optional<double> soc0, holdout;
  std::optional<std::size_t> epochs, window, stride;
};

std::vector<EcmParams> base_params(const RunConfig& cfg, const BatteryConfig& batt,
                                   const SeriesData& data, std::span<const double> socs,
                                   const std::optional<std::string>& params_path,
                                   const std::string& source) {
  if (params_path) {
    auto p = read_params_csv(*params_path);
    if (p.size() != data.size()) {
      throw InputError(*params_path + ": " + std::to_string(p.size()) + " parameter rows, " +
                       source + " has " + std::to_string(data.size()) + " samples");
    }
    return p;
  }
  return identify_checked(data, batt, socs, cfg.ffrls, source).params;
}

int cmd_train(TrainArgs& a) {
  RunConfig cfg = base_config(a.common);
  apply_ingest(cfg, a.ingest);
  apply_battery_flags(cfg, a.ocv, a.soc0);
  if (a.epochs) {
    for (auto& f : cfg.fnn) f.epochs = *a.epochs;
  }
  if (a.window) cfg.training.windowing.window_len = *a.window;
  if (a.stride) cfg.training.windowing.stride = *a.stride;
  if (a.holdout) cfg.training.holdout_fraction = *a.holdout;
  const fs::path in = require_path(cfg, "train", "input", a.input, "--input");
  const fs::path out = require_path(cfg, "train", "out", a.out, "--out");
  const auto params_path = resolve(cfg, "train", "params", a.params);
  const fs::path loss_path = resolve(cfg, "train", "loss_history", a.loss_history)
                                 .value_or(sibling(out, ".loss.csv").string());
  std::vector<fs::path> inputs{in};
  if (params_path) inputs.emplace_back(*params_path);
  guard_outputs(inputs, {out, loss_path});
  cfg.validate();

  const SeriesData data = load_telemetry(cfg, in);
  const BatteryConfig batt = cfg.battery.battery();
  const auto socs = reference_socs(cfg, batt, data);
  const auto base = base_params(cfg, batt, data, socs, params_path, in.string());

  const std::size_t n = data.size();
  const auto held = static_cast<std::size_t>(
      std::llround(cfg.training.holdout_fraction * static_cast<double>(n)));
  const std::size_t split = n - held;
  const std::size_t begin = std::min(cfg.ffrls.warmup_skip, split > 0 ? split - 1 : 0);
  if (split < 2 || begin >= split) {
    throw InputError(in.string() + ": too few samples left for training after warm-up/hold-out");
  }

  TrainOptions opts;
  opts.windowing = cfg.training.windowing;
  opts.rel_tol = cfg.training.rel_tol;
  opts.patience = cfg.training.patience;
  opts.shuffle_seed = cfg.training.shuffle_seed;
  opts.begin = begin;
  opts.end = split;

  const Stopwatch sw;
  TrainingResult res = train_offline({data, socs, base}, batt, cfg.fnn_configs(), opts);
  timing("train", sw.seconds());
  if (res.diverged) throw NumericalError(in.string() + ": " + res.diagnostic);

  save_model(res.model, out);
  {
    std::ofstream loss(loss_path, std::ios::binary);
    if (!loss) throw InputError("cannot write " + loss_path.string());
    loss << "epoch,loss\n";
    for (std::size_t e = 0; e < res.loss_history.size(); ++e) {
      loss << e << ',' << format_double(res.loss_history[e]) << '\n';
    }
  }
  write_xy(sibling(out, ".loss.xy.csv"), steps_axis(res.loss_history.size()), res.loss_history);

  std::cout << "train: " << res.model.meta.epochs_run << " epochs, loss "
            << format_double(res.model.meta.baseline_loss) << " -> "
            << format_double(res.model.meta.final_loss) << " (best epoch " << res.best_epoch
            << ")\n";

  if (held > 0) {
    const auto v_base = simulate_series(base, data.current_a, socs, batt);
    const auto v_hyb = predict_series(res.model, data, socs, base);
    const std::span<const double> vb(v_base), vh(v_hyb), vm(data.voltage_v);
    const std::string label = a.scenario.value_or(
        cfg.synth.scenario.empty() ? in.stem().string() : cfg.synth.scenario);
    const auto rows = compare(label, "voltage", vb.subspan(split), vh.subspan(split), vm.subspan(split));
    write_metrics(sibling(out, ".metrics.json"), rows);
    std::cout << "train: held-out voltage MSE ecm " << format_double(rows[0].mse) << " hybrid "
              << format_double(rows[1].mse) << " (improvement "
              << format_double(rows[1].improvement_pct) << "%)\n";
  }
  echo_config(cfg, a.common, out);
  return kExitOk;
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
  Common common;
  Ingest ingest;
  std::optional<std::string> input, model, out, truth, freeze, ocv;
  std::optional<double> soc0;
  bool plain = false;
};

int cmd_estimate(EstimateArgs& a) {
  RunConfig cfg = base_config(a.common);
  apply_ingest(cfg, a.ingest);
  if (a.ocv) cfg.battery.ocv = load_ocv_file(*a.ocv);
  if (a.soc0) cfg.ekf.x0 = Eigen::Vector2d(*a.soc0, 0.0);
  const fs::path in = require_path(cfg, "estimate", "input", a.input, "--input");
  const fs::path out = require_path(cfg, "estimate", "out", a.out, "--out");
  const auto model_path = resolve(cfg, "estimate", "model", a.model);
  const auto truth_path = resolve(cfg, "estimate", "truth", a.truth);
  const auto freeze_path = resolve(cfg, "estimate", "freeze_ffrls", a.freeze);
  if (!model_path && !a.plain) throw InputError("estimate: --model is required unless --plain-ecm");
  std::vector<fs::path> inputs{in};
  for (const auto& p : {model_path, truth_path, freeze_path}) {
    if (p) inputs.emplace_back(*p);
  }
  guard_outputs(inputs, {out});
  cfg.validate();

  const SeriesData data = load_telemetry(cfg, in);
  BatteryConfig batt = cfg.battery.battery();
  std::optional<HybridModel> model;
  if (model_path) {
    model = load_model(*model_path);
    if (std::abs(model->dt_s - batt.dt_s) > 1e-12) {
      throw InputError(*model_path + ": model dt " + format_double(model->dt_s) +
                       " s does not match the configured dt " + format_double(batt.dt_s) + " s");
    }
    batt.ocv = model->ocv;
  }
  EstimateOptions opts;
  opts.ffrls = cfg.ffrls;
  if (freeze_path) opts.frozen_params = read_params_csv(*freeze_path);

  std::optional<TruthSeries> truth;
  if (truth_path) {
    truth = read_truth_csv(*truth_path);
    if (truth->soc_true.size() != data.size()) {
      throw InputError(*truth_path + ": " + std::to_string(truth->soc_true.size()) +
                       " rows, telemetry has " + std::to_string(data.size()));
    }
  }

  const Stopwatch sw;
  const EstimationResult res =
      estimate_soc_series(data, a.plain ? nullptr : &*model, batt, cfg.ekf, opts);
  timing("estimate", sw.seconds());

  std::ofstream f(out, std::ios::binary);
  if (!f) throw InputError("cannot write " + out.string());
  f << "step,time_s," << (truth ? "soc_true," : "")
    << "soc_est,u_d_est,voltage_meas,voltage_pred,innovation\n";
  for (std::size_t k = 0; k < data.size(); ++k) {
    f << k << ',' << format_double(data.time_s[k]) << ',';
    if (truth) f << format_double(truth->soc_true[k]) << ',';
    f << format_double(res.soc[k]) << ',' << format_double(res.u_d[k]) << ','
      << format_double(data.voltage_v[k]) << ',' << format_double(res.voltage_pred[k]) << ','
      << format_double(res.innovation[k]) << '\n';
  }
  f.close();
  write_xy(sibling(out, ".soc.xy.csv"), data.time_s, res.soc);
  echo_config(cfg, a.common, out);

  std::cout << "estimate: " << (a.plain ? "plain ECM" : "hybrid") << ", " << data.size()
            << " steps, final SOC " << format_double(res.soc.back());
  if (truth) std::cout << ", RMSE " << format_double(rmse(res.soc, truth->soc_true));
  std::cout << '\n';
  if (res.clamp_events > 0) {
    log("estimate: " + std::to_string(res.clamp_events) + " steps with clamped parameters");
  }
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  Common common;
  std::optional<std::string> baseline, candidate, truth, out, scenario;
  std::string quantity = "soc";
};

std::vector<double> column(const std::map<std::string, std::vector<double>>& cols,
                           const std::string& name, const std::string& file) {
  const auto it = cols.find(name);
  if (it == cols.end()) throw InputError(file + ": missing column '" + name + "'");
  return it->second;
}

int cmd_evaluate(EvaluateArgs& a) {
  RunConfig cfg = base_config(a.common);
  const std::string base_p = require_path(cfg, "evaluate", "baseline", a.baseline, "--baseline");
  const std::string cand_p = require_path(cfg, "evaluate", "candidate", a.candidate, "--candidate");
  const auto truth_p = resolve(cfg, "evaluate", "truth", a.truth);
  const fs::path out = require_path(cfg, "evaluate", "out", a.out, "--out");
  if (a.quantity != "soc" && a.quantity != "voltage") {
    throw InputError("evaluate: --quantity must be soc or voltage");
  }
  std::vector<fs::path> inputs{base_p, cand_p};
  if (truth_p) inputs.emplace_back(*truth_p);
  guard_outputs(inputs, {out, sibling(out, ".csv")});
  cfg.validate();

  const auto bc = read_csv_columns(base_p);
  const auto cc = read_csv_columns(cand_p);
  const std::string pred_col = a.quantity == "soc" ? "soc_est" : "voltage_pred";
  const auto bp = column(bc, pred_col, base_p);
  const auto cp = column(cc, pred_col, cand_p);
  std::vector<double> truth;
  if (a.quantity == "voltage") {
    truth = column(bc, "voltage_meas", base_p);
  } else if (truth_p) {
    truth = read_truth_csv(*truth_p).soc_true;
  } else {
    truth = column(bc, "soc_true", base_p);
  }
  if (bp.size() != truth.size() || cp.size() != truth.size()) {
    throw InputError("evaluate: trajectories (" + std::to_string(bp.size()) + ", " +
                     std::to_string(cp.size()) + " rows) and truth (" +
                     std::to_string(truth.size()) + " rows) differ in length");
  }
  const std::string label = a.scenario.value_or(
      cfg.synth.scenario.empty() ? fs::path(cand_p).stem().string() : cfg.synth.scenario);
  const auto rows = compare(label, a.quantity, bp, cp, truth);
  write_metrics(out, rows);

  std::vector<double> eb(truth.size()), ec(truth.size());
  for (std::size_t k = 0; k < truth.size(); ++k) {
    eb[k] = bp[k] - truth[k];
    ec[k] = cp[k] - truth[k];
  }
  const auto x = steps_axis(truth.size());
  write_xy(sibling(out, ".baseline_error.xy.csv"), x, eb);
  write_xy(sibling(out, ".candidate_error.xy.csv"), x, ec);
  echo_config(cfg, a.common, out);
  std::cout << "evaluate: " << a.quantity << " RMSE ecm " << format_double(rows[0].rmse)
            << " hybrid " << format_double(rows[1].rmse) << ", improvement "
            << format_double(rows[1].improvement_pct) << "%\n";
  return kExitOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  Common common;
  std::vector<std::string> metrics;
  std::optional<std::string> scenarios, workdir, out;
};

/// gen -> train (with hold-out) -> estimate plain/hybrid -> evaluate, in workdir/<name>.
int run_scenario_pipeline(const std::string& name, const fs::path& dir, const Common& common,
                          std::vector<fs::path>& metric_files) {
  fs::create_directories(dir);
  const auto p = [&](const std::string& f) { return (dir / f).string(); };
  std::vector<std::string> cfg_args;
  if (common.config) cfg_args = {"--config", *common.config};
  const std::string seed = std::to_string(common.seed.value_or(7));
  auto with_cfg = [&](std::vector<std::string> v) {
    v.insert(v.end(), cfg_args.begin(), cfg_args.end());
    return v;
  };
  const std::vector<std::vector<std::string>> steps = {
      with_cfg({"gen", "--scenario", name, "--seed", seed, "--out", p("telemetry.csv")}),
      with_cfg({"train", "--input", p("telemetry.csv"), "--out", p("model.json"), "--holdout",
                "0.3333333333333333", "--scenario", name, "--echo", p("train.config.json")}),
      with_cfg({"estimate", "--plain-ecm", "--input", p("telemetry.csv"), "--model", p("model.json"),
                "--truth", p("telemetry.truth.csv"), "--out", p("soc_ecm.csv")}),
      with_cfg({"estimate", "--input", p("telemetry.csv"), "--model", p("model.json"), "--truth",
                p("telemetry.truth.csv"), "--out", p("soc_hybrid.csv")}),
      with_cfg({"evaluate", "--baseline", p("soc_ecm.csv"), "--candidate", p("soc_hybrid.csv"),
                "--truth", p("telemetry.truth.csv"), "--scenario", name, "--out",
                p("soc_metrics.json")}),
  };
  for (const auto& args : steps) {
    const int rc = run_cli(args);
    if (rc != kExitOk) {
      log("report: scenario " + name + " failed at '" + args[0] + "' (exit " + std::to_string(rc) + ")");
      return rc;
    }
  }
  metric_files = {dir / "model.metrics.json", dir / "soc_metrics.json"};
  return kExitOk;
}

int cmd_report(ReportArgs& a) {
  RunConfig cfg = base_config(a.common);
  const fs::path out = require_path(cfg, "report", "out", a.out, "--out");
  std::vector<fs::path> files(a.metrics.begin(), a.metrics.end());

  if (a.scenarios) {
    const fs::path workdir = resolve(cfg, "report", "workdir", a.workdir).value_or("report_runs");
    std::vector<std::string> names;
    for (const auto& s : split(*a.scenarios, ',')) {
      if (!trim(s).empty()) names.push_back(trim(s));
    }
    for (const auto& name : names) (void)scenario_preset(name);  // reject unknown names up front

    std::vector<std::vector<fs::path>> produced(names.size());
    std::vector<int> codes(names.size(), kExitOk);
    std::atomic<std::size_t> next{0};
    const unsigned workers = std::min<unsigned>(thread_cap(), static_cast<unsigned>(names.size()));
    auto worker = [&] {
      for (std::size_t i = next++; i < names.size(); i = next++) {
        codes[i] = run_scenario_pipeline(names[i], workdir / names[i], a.common, produced[i]);
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (codes[i] != kExitOk) return codes[i];
      files.insert(files.end(), produced[i].begin(), produced[i].end());
    }
  }
  if (files.empty()) throw InputError("report: give --metrics files or --scenarios");
  guard_outputs(files, {out});
  cfg.validate();

  // One row per (scenario, quantity), in first-seen order.
  struct Row {
    std::string scenario, quantity;
    std::optional<MetricRow> ecm, hybrid;
  };
  std::vector<Row> table;
  for (const auto& f : files) {
    for (const auto& m : read_metrics(f)) {
      auto it = std::find_if(table.begin(), table.end(), [&](const Row& r) {
        return r.scenario == m.scenario && r.quantity == m.quantity;
      });
      if (it == table.end()) {
        table.push_back({m.scenario, m.quantity, {}, {}});
        it = table.end() - 1;
      }
      (m.model == "ecm" ? it->ecm : it->hybrid) = m;
    }
  }

  ordered_json j = ordered_json::array();
  std::ofstream csv(out, std::ios::binary);
  if (!csv) throw InputError("cannot write " + out.string());
  csv << "scenario,quantity,ecm_mse,ecm_rmse,hybrid_mse,hybrid_rmse,improvement_pct\n";
  std::string md = "| scenario | quantity | ECM MSE | ECM RMSE | hybrid MSE | hybrid RMSE | improvement % |\n"
                   "|---|---|---|---|---|---|---|\n";
  auto num = [](const std::optional<MetricRow>& r, double MetricRow::*field) {
    return r ? format_double((*r).*field) : std::string();
  };
  for (const auto& r : table) {
    const std::string imp = r.hybrid ? format_double(r.hybrid->improvement_pct) : std::string();
    csv << r.scenario << ',' << r.quantity << ',' << num(r.ecm, &MetricRow::mse) << ','
        << num(r.ecm, &MetricRow::rmse) << ',' << num(r.hybrid, &MetricRow::mse) << ','
        << num(r.hybrid, &MetricRow::rmse) << ',' << imp << '\n';
    md += "| " + r.scenario + " | " + r.quantity + " | " + num(r.ecm, &MetricRow::mse) + " | " +
          num(r.ecm, &MetricRow::rmse) + " | " + num(r.hybrid, &MetricRow::mse) + " | " +
          num(r.hybrid, &MetricRow::rmse) + " | " + imp + " |\n";
    ordered_json row{{"scenario", r.scenario}, {"quantity", r.quantity}};
    row["ecm"] = r.ecm ? ordered_json{{"mse", r.ecm->mse}, {"rmse", r.ecm->rmse}} : ordered_json(nullptr);
    row["hybrid"] = r.hybrid ? ordered_json{{"mse", r.hybrid->mse}, {"rmse", r.hybrid->rmse}}
                             : ordered_json(nullptr);
    row["improvement_pct"] = r.hybrid ? ordered_json(r.hybrid->improvement_pct) : ordered_json(nullptr);
    j.push_back(row);
  }
  csv.close();
  write_text_file(sibling(out, ".json"), j.dump(1) + "\n");
  write_text_file(sibling(out, ".md"), md);
  echo_config(cfg, a.common, out);
  std::cout << md;
  return kExitOk;
}

}  // namespace

unsigned thread_cap() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HYBRID_ECM_THREADS")) {
    const auto v = parse_double(trim(env));
    if (v && *v >= 1.0) return static_cast<unsigned>(*v);
  }
  return hw;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Grey-box battery modeling: FFRLS identification, neural corrections, EKF SOC"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hybrid-ecm 0.1.0");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Synthetic telemetry and truth CSVs");
  add_common(g, gen.common);
  g->add_option("--scenario", gen.scenario, "Preset: cold-dynamic or mild-hppc");
  g->add_option("--cycle", gen.cycle, "hppc, dynamic or constant");
  g->add_option("--temp", gen.temp, "Ambient temperature, degC");
  g->add_option("--duration", gen.duration, "Cycle duration, s");
  g->add_option("--soc0", gen.soc0, "Initial SOC");
  g->add_option("--amplitude", gen.amplitude, "Cycle amplitude, A");
  g->add_option("--sigma-v", gen.sigma_v, "Voltage noise, V");
  g->add_option("--out", gen.out, "Telemetry CSV (truth goes to <stem>.truth.csv)");

  FitOcvArgs fit;
  auto* f = app.add_subcommand("fit-ocv", "OCV polynomial from a low-rate discharge");
  add_common(f, fit.common);
  add_ingest(f, fit.ingest);
  f->add_option("--input", fit.input, "Discharge telemetry CSV");
  f->add_option("--out", fit.out, "OCV JSON");
  f->add_option("--degree", fit.degree, "Polynomial degree")->check(CLI::Range(1, 15));
  f->add_option("--soc0", fit.soc0, "SOC at the first sample")->check(CLI::Range(0.0, 1.0));

  IdentifyArgs ident;
  auto* i = app.add_subcommand("identify", "Per-step FFRLS parameters");
  add_common(i, ident.common);
  add_ingest(i, ident.ingest);
  i->add_option("--input", ident.input, "Telemetry CSV");
  i->add_option("--out", ident.out, "Parameter CSV");
  i->add_option("--ocv", ident.ocv, "OCV JSON (default: built-in reference curve)");
  i->add_option("--soc0", ident.soc0, "Initial SOC (default: OCV inversion of the first voltage)");
  i->add_option("--lambda", ident.lambda, "Forgetting factor");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Offline training of the correction networks");
  add_common(t, train.common);
  add_ingest(t, train.ingest);
  t->add_option("--input", train.input, "Telemetry CSV");
  t->add_option("--params", train.params, "Parameter CSV from identify (default: run FFRLS)");
  t->add_option("--out", train.out, "Model JSON");
  t->add_option("--ocv", train.ocv, "OCV JSON");
  t->add_option("--soc0", train.soc0, "Initial SOC");
  t->add_option("--loss-history", train.loss_history, "Loss CSV (default <stem>.loss.csv)");
  t->add_option("--holdout", train.holdout, "Trailing fraction held out for evaluation");
  t->add_option("--epochs", train.epochs, "Epoch budget for all three networks");
  t->add_option("--window", train.window, "Truncated-BPTT window length");
  t->add_option("--stride", train.stride, "Window stride");
  t->add_option("--scenario", train.scenario, "Label for held-out metrics");

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Online EKF SOC estimation");
  add_common(e, est.common);
  add_ingest(e, est.ingest);
  e->add_option("--input", est.input, "Telemetry CSV");
  e->add_option("--model", est.model, "Model JSON");
  e->add_option("--out", est.out, "SOC trajectory CSV");
  e->add_option("--truth", est.truth, "Truth CSV to include soc_true");
  e->add_option("--ocv", est.ocv, "OCV JSON for --plain-ecm without a model");
  e->add_option("--soc0", est.soc0, "Initial SOC guess for the filter");
  e->add_flag("--plain-ecm", est.plain, "Skip the neural corrections");
  e->add_option("--freeze-ffrls", est.freeze, "Use this parameter CSV instead of streaming FFRLS");

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Metrics of two trajectories against truth");
  add_common(v, ev.common);
  v->add_option("--baseline", ev.baseline, "Plain-ECM trajectory CSV");
  v->add_option("--candidate", ev.candidate, "Hybrid trajectory CSV");
  v->add_option("--truth", ev.truth, "Truth CSV (soc only)");
  v->add_option("--quantity", ev.quantity, "soc or voltage");
  v->add_option("--scenario", ev.scenario, "Scenario label");
  v->add_option("--out", ev.out, "Metrics JSON (CSV alongside)");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Aggregate metrics across scenarios");
  add_common(r, rep.common);
  r->add_option("--metrics", rep.metrics, "Metrics JSON files");
  r->add_option("--scenarios", rep.scenarios, "Comma-separated presets to run end to end");
  r->add_option("--workdir", rep.workdir, "Directory for per-scenario artifacts");
  r->add_option("--out", rep.out, "Report CSV (JSON and Markdown alongside)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitInput;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (f->parsed()) return cmd_fit_ocv(fit);
    if (i->parsed()) return cmd_identify(ident);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_estimate(est);
    if (v->parsed()) return cmd_evaluate(ev);
    if (r->parsed()) return cmd_report(rep);
  } catch (const InputError& ex) {
    log(std::string("error: ") + ex.what());
    return kExitInput;
  } catch (const NumericalError& ex) {
    log(std::string("numerical error: ") + ex.what());
    return kExitNumerical;
  } catch (const fs::filesystem_error& ex) {
    log(std::string("error: ") + ex.what());
    return kExitInput;
  } catch (const std::exception& ex) {
    log(std::string("internal error: ") + ex.what());
    return kExitNumerical;
  }
  return kExitInput;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"hybrid-ecm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace hybrid_ecm
