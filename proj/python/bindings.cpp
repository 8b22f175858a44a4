#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hybrid_ecm/cli.hpp"
#include "hybrid_ecm/config.hpp"
#include "hybrid_ecm/errors.hpp"

namespace py = pybind11;
using namespace py::literals;
using namespace hybrid_ecm;

namespace {

SeriesData make_series(const std::vector<double>& current, const std::vector<double>& voltage,
                       const std::vector<double>& temp, double dt_s) {
  if (current.size() != voltage.size() || current.size() != temp.size()) {
    throw InputError("current, voltage and temperature lengths differ");
  }
  SeriesData d;
  d.dt_s = dt_s;
  d.current_a = current;
  d.voltage_v = voltage;
  d.temp_c = temp;
  for (std::size_t k = 0; k < current.size(); ++k) d.time_s.push_back(static_cast<double>(k) * dt_s);
  d.validate();
  return d;
}

py::dict params_dict(const std::vector<EcmParams>& ps) {
  std::vector<double> r0, rd, cd;
  for (const auto& p : ps) {
    r0.push_back(p.r0);
    rd.push_back(p.rd);
    cd.push_back(p.cd);
  }
  return py::dict("r0"_a = r0, "rd"_a = rd, "cd"_a = cd);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Grey-box battery modeling core";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<EcmParams>(m, "EcmParams")
      .def(py::init<double, double, double>(), "r0"_a, "rd"_a, "cd"_a)
      .def_readwrite("r0", &EcmParams::r0)
      .def_readwrite("rd", &EcmParams::rd)
      .def_readwrite("cd", &EcmParams::cd)
      .def_property_readonly("tau", &EcmParams::tau)
      .def("__repr__", [](const EcmParams& p) {
        return "EcmParams(r0=" + std::to_string(p.r0) + ", rd=" + std::to_string(p.rd) +
               ", cd=" + std::to_string(p.cd) + ")";
      });

  m.def("theta_forward", [](const EcmParams& p, double dt) {
    const auto t = theta_forward(p, dt);
    return py::make_tuple(t.a1, t.a2, t.a3);
  }, "params"_a, "dt_s"_a = 1.0);

  m.def("params_from_theta", [](double a1, double a2, double a3, double dt) -> py::object {
    const auto r = params_from_theta({a1, a2, a3}, dt, TauBounds::for_dt(dt));
    if (r.status == InversionStatus::singular) throw InputError("theta is singular (a1 near +-1)");
    return py::make_tuple(r.params, r.ok());
  }, "a1"_a, "a2"_a, "a3"_a, "dt_s"_a = 1.0,
        "Returns (params, physical).");

  py::class_<OcvCurve>(m, "OcvCurve")
      .def(py::init(&OcvCurve::checked), "coeffs"_a, "soc_lo"_a = 0.0, "soc_hi"_a = 1.0)
      .def("__call__", &OcvCurve::operator(), "soc"_a)
      .def("slope", [](const OcvCurve& c, double s) { return c.eval(s).slope; }, "soc"_a)
      .def("invert", &OcvCurve::invert, "volts"_a, "tol"_a = 1e-6)
      .def_property_readonly("coeffs", &OcvCurve::coeffs)
      .def_property_readonly("soc_range", [](const OcvCurve& c) {
        return py::make_tuple(c.soc_lo(), c.soc_hi());
      });

  m.def("default_ocv_curve", &default_ocv_curve);
  m.def("fit_ocv", [](const std::vector<double>& s, const std::vector<double>& v, int degree) {
    return fit_ocv(s, v, degree);
  }, "soc"_a, "voltage"_a, "degree"_a = 9);

  m.def("gen_cycle", [](const std::string& kind, double duration_s, double amplitude_a,
                        std::uint64_t seed, double dt_s) {
    CycleSpec spec;
    spec.kind = cycle_from_string(kind);
    spec.duration_s = duration_s;
    spec.amplitude_a = amplitude_a;
    spec.seed = seed;
    return gen_cycle(spec, dt_s);
  }, "kind"_a, "duration_s"_a, "amplitude_a"_a = 2.9, "seed"_a = 1, "dt_s"_a = 1.0);

  m.def("simulate_scenario", [](const std::string& name, std::uint64_t seed) {
    const Scenario s = scenario_preset(name, seed);
    BatteryConfig batt;
    batt.ocv = default_ocv_curve();
    const auto currents = gen_cycle(s.cycle, batt.dt_s);
    const TruthRun run = simulate_truth(s.truth, batt, currents, s.soc0);
    return py::dict("time_s"_a = run.measured.time_s, "current_a"_a = run.measured.current_a,
                    "voltage_v"_a = run.measured.voltage_v, "temp_c"_a = run.measured.temp_c,
                    "soc_true"_a = run.soc_true, "voltage_true"_a = run.voltage_true);
  }, "name"_a, "seed"_a = 7, "Synthetic telemetry and truth for a named preset.");

  m.def("identify", [](const std::vector<double>& current, const std::vector<double>& voltage,
                       const std::vector<double>& socs, double dt_s, double lambda_) {
    BatteryConfig batt;
    batt.dt_s = dt_s;
    batt.ocv = default_ocv_curve();
    const auto data = make_series(current, voltage, std::vector<double>(current.size(), 25.0), dt_s);
    FfrlsOptions opts;
    opts.lambda = lambda_;
    return params_dict(identify_series(data, batt.ocv, socs, batt, opts).params);
  }, "current"_a, "voltage"_a, "soc"_a, "dt_s"_a = 1.0, "lambda_"_a = 0.99,
        "FFRLS over a series against the built-in OCV curve.");

  m.def("estimate_soc", [](const std::vector<double>& current, const std::vector<double>& voltage,
                           const std::vector<double>& temp, const std::string& model_path,
                           bool plain) {
    BatteryConfig batt;
    batt.ocv = default_ocv_curve();
    std::optional<HybridModel> model;
    if (!model_path.empty()) {
      model = load_model(model_path);
      batt.dt_s = model->dt_s;
      batt.ocv = model->ocv;
    }
    const auto data = make_series(current, voltage, temp, batt.dt_s);
    const auto res = estimate_soc_series(data, plain || !model ? nullptr : &*model, batt, EkfConfig{});
    return py::dict("soc"_a = res.soc, "u_d"_a = res.u_d, "voltage_pred"_a = res.voltage_pred,
                    "innovation"_a = res.innovation);
  }, "current"_a, "voltage"_a, "temp"_a, "model_path"_a = "", "plain"_a = false);

  m.def("mse", [](const std::vector<double>& p, const std::vector<double>& t) { return mse(p, t); });
  m.def("rmse", [](const std::vector<double>& p, const std::vector<double>& t) { return rmse(p, t); });
  m.def("improvement_pct", &improvement_pct, "baseline"_a, "candidate"_a);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    py::gil_scoped_release release;
    return run_cli(args);
  }, "args"_a, "Runs a hybrid-ecm subcommand; returns the exit code.");
}
