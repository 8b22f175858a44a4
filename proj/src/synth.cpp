#include "hybrid_ecm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/random.hpp"
#include "hybrid_ecm/text.hpp"

namespace hybrid_ecm {

void TruthConfig::validate() const {
  if (!(r0_ref > 0.0 && rd1_ref > 0.0 && cd1_ref > 0.0)) {
    throw InputError("truth circuit: r0, rd1, cd1 must be positive");
  }
  if (rd2_ref < 0.0 || cd2_ref < 0.0) throw InputError("truth circuit: rd2, cd2 must be >= 0");
  if (sigma_v < 0.0 || sigma_i < 0.0) throw InputError("truth circuit: noise levels must be >= 0");
  if (substeps < 1) throw InputError("truth circuit: substeps must be >= 1");
}

std::string to_string(CycleKind kind) {
  switch (kind) {
    case CycleKind::hppc:
      return "hppc";
    case CycleKind::dynamic:
      return "dynamic";
    case CycleKind::constant:
      return "constant";
  }
  return "hppc";
}

CycleKind cycle_from_string(const std::string& name) {
  if (name == "hppc") return CycleKind::hppc;
  if (name == "dynamic") return CycleKind::dynamic;
  if (name == "constant") return CycleKind::constant;
  throw InputError("unknown cycle '" + name + "' (expected hppc, dynamic or constant)");
}

void CycleSpec::validate() const {
  if (!(duration_s > 0.0)) throw InputError("cycle duration must be positive");
  if (!(lead_rest_s >= 0.0)) throw InputError("cycle lead rest must be >= 0");
  if (kind == CycleKind::hppc && !(pulse_s > 0.0 && rest_s > 0.0)) {
    throw InputError("hppc pulse and rest durations must be positive");
  }
  if (kind == CycleKind::dynamic) {
    if (!(corr_time_s > 0.0)) throw InputError("dynamic cycle correlation time must be positive");
    if (!(slew_a_per_s > 0.0)) throw InputError("dynamic cycle slew must be positive");
    if (!(i_max_a >= i_min_a)) throw InputError("dynamic cycle needs i_max >= i_min");
  }
}

std::vector<double> gen_cycle(const CycleSpec& spec, double dt_s) {
  spec.validate();
  if (!(dt_s > 0.0)) throw InputError("gen_cycle: dt must be positive");
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s / dt_s));
  std::vector<double> out(n, 0.0);
  switch (spec.kind) {
    case CycleKind::constant:
      std::fill(out.begin(), out.end(), spec.amplitude_a);
      break;
    case CycleKind::hppc: {
      const double period = spec.pulse_s + spec.rest_s;
      for (std::size_t k = 0; k < n; ++k) {
        const double phase = std::fmod(static_cast<double>(k) * dt_s, period);
        out[k] = phase < spec.pulse_s - 1e-9 ? spec.amplitude_a : 0.0;
      }
      break;
    }
    case CycleKind::dynamic: {
      // Ornstein-Uhlenbeck target around the mean, followed by a slew limiter.
      Rng rng(spec.seed);
      const double theta = dt_s / spec.corr_time_s;
      const double kick = spec.amplitude_a * std::sqrt(2.0 * theta);
      const double max_step = spec.slew_a_per_s * dt_s;
      double target = spec.mean_a;
      double i = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        target += theta * (spec.mean_a - target) + kick * rng.normal();
        i += std::clamp(target - i, -max_step, max_step);
        i = std::clamp(i, spec.i_min_a, spec.i_max_a);
        out[k] = i;
      }
      break;
    }
  }
  const auto lead = static_cast<std::size_t>(std::llround(spec.lead_rest_s / dt_s));
  out.insert(out.begin(), lead, 0.0);
  return out;
}

namespace {

struct Branch {
  double r = 0.0;
  double c = 0.0;
  double u = 0.0;

  void step(double h, double i) {
    if (r <= 0.0 || c <= 0.0) return;
    const double a = std::exp(-h / (r * c));
    u = a * u + r * (1.0 - a) * i;
  }
};

}  // namespace

TruthRun simulate_truth(const TruthConfig& cfg, const BatteryConfig& batt,
                        std::span<const double> currents, double soc0) {
  cfg.validate();
  batt.validate();
  if (!(soc0 >= 0.0 && soc0 <= 1.0)) throw InputError("simulate_truth: soc0 must lie in [0, 1]");
  if (currents.empty()) throw InputError("simulate_truth: empty current profile");

  const double temp_factor = 1.0 + cfg.alpha_per_c * (25.0 - cfg.ambient_c);
  if (!(temp_factor > 0.0)) throw InputError("simulate_truth: temperature factor is not positive");
  auto soc_factor = [&](double soc) {
    return soc < 0.5 ? 1.0 + cfg.beta * (0.5 - soc) : 1.0;
  };

  TruthRun run;
  Rng rng(cfg.seed);
  Branch b1{0.0, cfg.cd1_ref, 0.0};
  Branch b2{0.0, cfg.cd2_ref, 0.0};
  const double h = batt.dt_s / cfg.substeps;
  double soc = soc0;

  for (std::size_t k = 0; k < currents.size(); ++k) {
    if (soc < 0.0) {
      run.soc_exhausted = true;
      break;
    }
    const double i_prev = k == 0 ? currents[0] : currents[k - 1];
    const double i_now = currents[k];
    for (int m = 0; m < cfg.substeps; ++m) {
      const double w = (m + 0.5) / cfg.substeps;
      const double i = i_prev + (i_now - i_prev) * w;
      const double f = temp_factor * soc_factor(soc);
      b1.r = cfg.rd1_ref * f;
      b2.r = cfg.rd2_ref * f;
      b1.step(h, i);
      b2.step(h, i);
    }
    const double r0 = cfg.r0_ref * temp_factor * soc_factor(soc);
    const double v = batt.ocv(soc) - b1.u - b2.u - i_now * r0;

    run.soc_true.push_back(soc);
    run.u_d1.push_back(b1.u);
    run.u_d2.push_back(b2.u);
    run.voltage_true.push_back(v);
    run.current_true.push_back(i_now);
    run.measured.time_s.push_back(static_cast<double>(k) * batt.dt_s);
    run.measured.voltage_v.push_back(v + cfg.sigma_v * rng.normal());
    run.measured.current_a.push_back(i_now + cfg.sigma_i * rng.normal());
    run.measured.temp_c.push_back(cfg.ambient_c);

    soc = soc_step(soc, i_now, batt);
  }
  run.measured.dt_s = batt.dt_s;
  run.measured.t0_s = 0.0;
  return run;
}

double reference_ocv_volts(double soc) {
  return 3.45 + 0.70 * soc + 0.05 * std::pow(soc, 8) - 0.95 * std::exp(-soc / 0.1);
}

OcvCurve default_ocv_curve() {
  std::vector<double> s(101);
  std::vector<double> v(101);
  for (int j = 0; j <= 100; ++j) {
    s[j] = j / 100.0;
    v[j] = reference_ocv_volts(s[j]);
  }
  return fit_ocv(s, v, 9);
}

void write_truth_csv(const std::filesystem::path& path, const TruthRun& run) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "time_s,soc_true,u_d1,u_d2,voltage_true,current_true\n";
  for (std::size_t k = 0; k < run.soc_true.size(); ++k) {
    out << format_double(run.measured.time_s[k]) << ',' << format_double(run.soc_true[k]) << ','
        << format_double(run.u_d1[k]) << ',' << format_double(run.u_d2[k]) << ','
        << format_double(run.voltage_true[k]) << ',' << format_double(run.current_true[k]) << '\n';
  }
}

TruthSeries read_truth_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  const auto header = split(trim(line), ',');
  int ti = -1;
  int si = -1;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const auto h = trim(header[j]);
    if (h == "time_s") ti = static_cast<int>(j);
    if (h == "soc_true") si = static_cast<int>(j);
  }
  if (ti < 0 || si < 0) throw InputError(path.string() + ": needs time_s and soc_true columns");
  TruthSeries out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const auto max_col = static_cast<std::size_t>(std::max(ti, si));
    if (cells.size() <= max_col) {
      throw InputError(path.string() + ": row " + std::to_string(row) + " is short");
    }
    const auto t = parse_double(trim(cells[static_cast<std::size_t>(ti)]));
    const auto s = parse_double(trim(cells[static_cast<std::size_t>(si)]));
    if (!t || !s) throw InputError(path.string() + ": non-numeric value at row " + std::to_string(row));
    out.time_s.push_back(*t);
    out.soc_true.push_back(*s);
    ++row;
  }
  return out;
}

Scenario scenario_preset(const std::string& name, std::uint64_t seed) {
  Scenario s;
  s.name = name;
  s.truth.seed = seed;
  s.cycle.seed = seed + 1000;
  s.cycle.lead_rest_s = 60.0;
  if (name == "cold-dynamic") {
    s.truth.ambient_c = -20.0;
    s.cycle.kind = CycleKind::dynamic;
    s.cycle.mean_a = 1.5;
    s.cycle.amplitude_a = 1.5;
    s.cycle.corr_time_s = 30.0;
    s.cycle.duration_s = 6000.0;
  } else if (name == "mild-hppc") {
    s.truth.ambient_c = 10.0;
    s.cycle.kind = CycleKind::hppc;
    s.cycle.amplitude_a = 2.9;
    s.cycle.duration_s = 6000.0;
  } else {
    throw InputError("unknown scenario '" + name + "' (expected cold-dynamic or mild-hppc)");
  }
  return s;
}

}  // namespace hybrid_ecm
