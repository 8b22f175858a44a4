#include "hybrid_ecm/config.hpp"

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/json_io.hpp"

namespace hybrid_ecm {

using nlohmann::ordered_json;

namespace {

constexpr std::array<const char*, 3> kNets{"r0", "rd", "cd"};

ordered_json matrix2(const Eigen::Matrix2d& m) {
  return ordered_json::array({ordered_json::array({m(0, 0), m(0, 1)}),
                              ordered_json::array({m(1, 0), m(1, 1)})});
}

Eigen::Matrix2d matrix2_from(const ordered_json& j) {
  const auto rows = j.get<std::array<std::array<double, 2>, 2>>();
  Eigen::Matrix2d m;
  m << rows[0][0], rows[0][1], rows[1][0], rows[1][1];
  return m;
}

/// Every key of `doc` must exist in `schema`; null schema entries accept any value.
void check_keys(const ordered_json& doc, const ordered_json& schema, const std::string& where) {
  if (!doc.is_object()) throw InputError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw InputError("config: unknown key '" + path + "'");
    const auto& s = schema.at(key);
    if (path == "paths") {
      if (!value.is_object()) throw InputError("config: 'paths' must be an object");
      for (const auto& [k, v] : value.items()) {
        if (!v.is_string()) throw InputError("config: paths." + k + " must be a string");
      }
      continue;
    }
    if (s.is_object() && !value.is_null()) check_keys(value, s, path);
  }
}

}  // namespace

ColumnMap InputSection::column_map() const {
  ColumnMap m = map.empty() ? ColumnMap{} : ColumnMap::parse(map);
  m.invert_current = invert_current;
  return m;
}

BatteryConfig BatterySection::battery() const {
  BatteryConfig b;
  b.capacity_coulombs = capacity_ah * BatteryConfig::kCoulombsPerAh;
  b.dt_s = dt_s;
  b.ocv = ocv ? *ocv : default_ocv_curve();
  return b;
}

void RunConfig::validate() const {
  if (!(battery.capacity_ah > 0.0)) throw InputError("config: battery.capacity_ah must be positive");
  if (!(battery.dt_s > 0.0)) throw InputError("config: battery.dt_s must be positive");
  if (battery.soc0 && !(*battery.soc0 >= 0.0 && *battery.soc0 <= 1.0)) {
    throw InputError("config: battery.soc0 must lie in [0, 1]");
  }
  if (!(ffrls.lambda > 0.0 && ffrls.lambda <= 1.0)) throw InputError("config: ffrls.lambda must be in (0, 1]");
  if (!(ffrls.p0_scale > 0.0)) throw InputError("config: ffrls.p0_scale must be positive");
  require_physical(ffrls.prior, TauBounds::for_dt(battery.dt_s), "config ffrls.prior");
  for (const auto& c : fnn) c.validate();
  training.windowing.validate();
  if (!(training.rel_tol >= 0.0)) throw InputError("config: training.rel_tol must be >= 0");
  if (training.patience < 1) throw InputError("config: training.patience must be >= 1");
  if (!(training.holdout_fraction >= 0.0 && training.holdout_fraction < 1.0)) {
    throw InputError("config: training.holdout_fraction must be in [0, 1)");
  }
  ekf.validate();
  synth.truth.validate();
  synth.cycle.validate();
  if (!(synth.soc0 >= 0.0 && synth.soc0 <= 1.0)) throw InputError("config: synth.soc0 must lie in [0, 1]");
}

std::array<FnnConfig, 3> RunConfig::fnn_configs() const {
  auto out = fnn;
  for (std::size_t j = 0; j < 3; ++j) out[j].seed = seed + j;
  return out;
}

void RunConfig::apply_scenario(const std::string& name, std::uint64_t preset_seed) {
  const Scenario s = scenario_preset(name, preset_seed);
  synth.scenario = s.name;
  synth.truth = s.truth;
  synth.cycle = s.cycle;
  synth.soc0 = s.soc0;
}

ordered_json config_to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["input"] = {{"map", c.input.map}, {"invert_current", c.input.invert_current}};

  ordered_json b;
  b["capacity_ah"] = c.battery.capacity_ah;
  b["dt_s"] = c.battery.dt_s;
  b["ocv"] = c.battery.ocv ? ocv_to_json(*c.battery.ocv) : ordered_json(nullptr);
  b["soc0"] = c.battery.soc0 ? ordered_json(*c.battery.soc0) : ordered_json(nullptr);
  j["battery"] = b;

  j["ffrls"] = {{"lambda", c.ffrls.lambda},
                {"p0_scale", c.ffrls.p0_scale},
                {"prior", {{"r0", c.ffrls.prior.r0}, {"rd", c.ffrls.prior.rd}, {"cd", c.ffrls.prior.cd}}},
                {"warmup_skip", c.ffrls.warmup_skip}};

  ordered_json nets;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& f = c.fnn[i];
    nets[kNets[i]] = {{"hidden_sizes", f.hidden_sizes},
                      {"epochs", f.epochs},
                      {"learning_rate", f.learning_rate},
                      {"optimizer", to_string(f.optimizer)},
                      {"output_scale", f.output_scale}};
  }
  j["fnn"] = nets;

  j["training"] = {{"window_len", c.training.windowing.window_len},
                   {"stride", c.training.windowing.stride},
                   {"rel_tol", c.training.rel_tol},
                   {"patience", c.training.patience},
                   {"shuffle_seed", c.training.shuffle_seed},
                   {"holdout_fraction", c.training.holdout_fraction}};

  j["ekf"] = {{"q", matrix2(c.ekf.q)},
              {"r", c.ekf.r},
              {"p0", matrix2(c.ekf.p0)},
              {"x0", c.ekf.x0 ? ordered_json::array({(*c.ekf.x0)(0), (*c.ekf.x0)(1)})
                              : ordered_json(nullptr)}};

  const auto& t = c.synth.truth;
  const auto& y = c.synth.cycle;
  j["synth"] = {{"scenario", c.synth.scenario},
                {"soc0", c.synth.soc0},
                {"truth",
                 {{"r0_ref", t.r0_ref},
                  {"rd1_ref", t.rd1_ref},
                  {"cd1_ref", t.cd1_ref},
                  {"rd2_ref", t.rd2_ref},
                  {"cd2_ref", t.cd2_ref},
                  {"alpha_per_c", t.alpha_per_c},
                  {"beta", t.beta},
                  {"sigma_v", t.sigma_v},
                  {"sigma_i", t.sigma_i},
                  {"ambient_c", t.ambient_c},
                  {"seed", t.seed},
                  {"substeps", t.substeps}}},
                {"cycle",
                 {{"kind", to_string(y.kind)},
                  {"amplitude_a", y.amplitude_a},
                  {"pulse_s", y.pulse_s},
                  {"rest_s", y.rest_s},
                  {"corr_time_s", y.corr_time_s},
                  {"mean_a", y.mean_a},
                  {"i_min_a", y.i_min_a},
                  {"i_max_a", y.i_max_a},
                  {"slew_a_per_s", y.slew_a_per_s},
                  {"duration_s", y.duration_s},
                  {"lead_rest_s", y.lead_rest_s},
                  {"seed", y.seed}}}};

  ordered_json paths = ordered_json::object();
  for (const auto& [k, v] : c.paths) paths[k] = v;
  j["paths"] = paths;
  return j;
}

RunConfig config_from_json(const ordered_json& doc) {
  RunConfig base;
  ordered_json merged = config_to_json(base);
  check_keys(doc, merged, "");

  // A named scenario seeds the synth section before explicit fields apply.
  if (doc.contains("synth") && doc["synth"].contains("scenario") &&
      doc["synth"]["scenario"].is_string() && !doc["synth"]["scenario"].get<std::string>().empty()) {
    const auto name = doc["synth"]["scenario"].get<std::string>();
    const auto seed = doc.contains("seed") && doc["seed"].is_number_unsigned()
                          ? doc["seed"].get<std::uint64_t>()
                          : base.seed;
    base.apply_scenario(name, seed);
    merged = config_to_json(base);
  }
  merged.merge_patch(doc);

  RunConfig c;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.input.map = merged.at("input").at("map").get<std::string>();
    c.input.invert_current = merged.at("input").at("invert_current").get<bool>();

    const auto& b = merged.at("battery");
    c.battery.capacity_ah = b.at("capacity_ah").get<double>();
    c.battery.dt_s = b.at("dt_s").get<double>();
    if (b.contains("ocv") && !b.at("ocv").is_null()) c.battery.ocv = ocv_from_json(b.at("ocv"));
    if (b.contains("soc0") && !b.at("soc0").is_null()) c.battery.soc0 = b.at("soc0").get<double>();

    const auto& f = merged.at("ffrls");
    c.ffrls.lambda = f.at("lambda").get<double>();
    c.ffrls.p0_scale = f.at("p0_scale").get<double>();
    c.ffrls.prior = {f.at("prior").at("r0").get<double>(), f.at("prior").at("rd").get<double>(),
                     f.at("prior").at("cd").get<double>()};
    c.ffrls.warmup_skip = f.at("warmup_skip").get<std::size_t>();

    for (std::size_t i = 0; i < 3; ++i) {
      const auto& n = merged.at("fnn").at(kNets[i]);
      auto& cfg = c.fnn[i];
      cfg.hidden_sizes = n.at("hidden_sizes").get<std::array<std::size_t, 2>>();
      cfg.epochs = n.at("epochs").get<std::size_t>();
      cfg.learning_rate = n.at("learning_rate").get<double>();
      cfg.optimizer = optimizer_from_string(n.at("optimizer").get<std::string>());
      cfg.output_scale = n.at("output_scale").get<double>();
    }

    const auto& t = merged.at("training");
    c.training.windowing.window_len = t.at("window_len").get<std::size_t>();
    c.training.windowing.stride = t.at("stride").get<std::size_t>();
    c.training.rel_tol = t.at("rel_tol").get<double>();
    c.training.patience = t.at("patience").get<std::size_t>();
    c.training.shuffle_seed = t.at("shuffle_seed").get<std::uint64_t>();
    c.training.holdout_fraction = t.at("holdout_fraction").get<double>();

    const auto& e = merged.at("ekf");
    c.ekf.q = matrix2_from(e.at("q"));
    c.ekf.r = e.at("r").get<double>();
    c.ekf.p0 = matrix2_from(e.at("p0"));
    if (e.contains("x0") && !e.at("x0").is_null()) {
      const auto x = e.at("x0").get<std::array<double, 2>>();
      c.ekf.x0 = Eigen::Vector2d(x[0], x[1]);
    }

    const auto& s = merged.at("synth");
    c.synth.scenario = s.at("scenario").get<std::string>();
    c.synth.soc0 = s.at("soc0").get<double>();
    const auto& tr = s.at("truth");
    auto& tc = c.synth.truth;
    tc.r0_ref = tr.at("r0_ref").get<double>();
    tc.rd1_ref = tr.at("rd1_ref").get<double>();
    tc.cd1_ref = tr.at("cd1_ref").get<double>();
    tc.rd2_ref = tr.at("rd2_ref").get<double>();
    tc.cd2_ref = tr.at("cd2_ref").get<double>();
    tc.alpha_per_c = tr.at("alpha_per_c").get<double>();
    tc.beta = tr.at("beta").get<double>();
    tc.sigma_v = tr.at("sigma_v").get<double>();
    tc.sigma_i = tr.at("sigma_i").get<double>();
    tc.ambient_c = tr.at("ambient_c").get<double>();
    tc.seed = tr.at("seed").get<std::uint64_t>();
    tc.substeps = tr.at("substeps").get<int>();
    const auto& cy = s.at("cycle");
    auto& cs = c.synth.cycle;
    cs.kind = cycle_from_string(cy.at("kind").get<std::string>());
    cs.amplitude_a = cy.at("amplitude_a").get<double>();
    cs.pulse_s = cy.at("pulse_s").get<double>();
    cs.rest_s = cy.at("rest_s").get<double>();
    cs.corr_time_s = cy.at("corr_time_s").get<double>();
    cs.mean_a = cy.at("mean_a").get<double>();
    cs.i_min_a = cy.at("i_min_a").get<double>();
    cs.i_max_a = cy.at("i_max_a").get<double>();
    cs.slew_a_per_s = cy.at("slew_a_per_s").get<double>();
    cs.duration_s = cy.at("duration_s").get<double>();
    cs.lead_rest_s = cy.at("lead_rest_s").get<double>();
    cs.seed = cy.at("seed").get<std::uint64_t>();

    for (const auto& [k, v] : merged.at("paths").items()) c.paths[k] = v.get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("config: ") + ex.what());
  }
  c.validate();
  if (!c.input.map.empty()) (void)c.input.column_map();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(read_json_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  write_text_file(path, config_to_json(cfg).dump(1) + "\n");
}

}  // namespace hybrid_ecm
