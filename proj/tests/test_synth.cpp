#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/synth.hpp"
#include "support.hpp"

using namespace hybrid_ecm;

namespace {

BatteryConfig default_battery() {
  BatteryConfig b;
  b.ocv = default_ocv_curve();
  return b;
}

TruthConfig first_order_truth() {
  TruthConfig t;
  t.r0_ref = 0.05;
  t.rd1_ref = 0.03;
  t.cd1_ref = 1000.0;
  t.rd2_ref = 0.0;
  t.cd2_ref = 0.0;
  t.ambient_c = 25.0;
  t.beta = 0.0;
  t.sigma_v = 0.0;
  return t;
}

CycleSpec dynamic_spec(double duration, std::uint64_t seed) {
  CycleSpec c;
  c.kind = CycleKind::dynamic;
  c.duration_s = duration;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("hppc pattern") {
  CycleSpec c;
  c.kind = CycleKind::hppc;
  c.amplitude_a = 2.9;
  c.pulse_s = 10.0;
  c.rest_s = 40.0;
  c.duration_s = 500.0;
  const auto i = gen_cycle(c, 1.0);
  REQUIRE(i.size() == 500);
  for (std::size_t k = 0; k < i.size(); ++k) CHECK(i[k] == (k % 50 < 10 ? 2.9 : 0.0));

  c.lead_rest_s = 30.0;
  const auto led = gen_cycle(c, 1.0);
  REQUIRE(led.size() == 530);
  for (std::size_t k = 0; k < 30; ++k) CHECK(led[k] == 0.0);
  CHECK(std::equal(i.begin(), i.end(), led.begin() + 30));
}

TEST_CASE("constant cycle") {
  CycleSpec c;
  c.kind = CycleKind::constant;
  c.amplitude_a = 0.0;
  c.duration_s = 100.0;
  const auto z = gen_cycle(c, 1.0);
  CHECK(z.size() == 100);
  CHECK(std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; }));
  c.amplitude_a = 1.3;
  const auto k = gen_cycle(c, 0.5);
  CHECK(k.size() == 200);
  CHECK(std::all_of(k.begin(), k.end(), [](double v) { return v == 1.3; }));
}

TEST_CASE("dynamic cycle is seeded, clipped and slew limited") {
  const CycleSpec c = dynamic_spec(5000.0, 42);
  const auto a = gen_cycle(c, 1.0);
  CHECK(a == gen_cycle(c, 1.0));
  CHECK(a != gen_cycle(dynamic_spec(5000.0, 43), 1.0));
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k] >= c.i_min_a);
    CHECK(a[k] <= c.i_max_a);
    if (k > 0) CHECK(std::abs(a[k] - a[k - 1]) <= c.slew_a_per_s * 1.0 + 1e-12);
  }
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  CHECK(mean == doctest::Approx(c.mean_a).epsilon(0.25));
}

TEST_CASE("cycle validation and names") {
  CycleSpec c;
  c.duration_s = 0.0;
  CHECK_THROWS_AS(gen_cycle(c, 1.0), InputError);
  c = {};
  c.slew_a_per_s = 0.0;
  c.kind = CycleKind::dynamic;
  CHECK_THROWS_AS(gen_cycle(c, 1.0), InputError);
  c = {};
  c.lead_rest_s = -1.0;
  CHECK_THROWS_AS(gen_cycle(c, 1.0), InputError);
  CHECK(cycle_from_string("hppc") == CycleKind::hppc);
  CHECK(to_string(CycleKind::dynamic) == "dynamic");
  CHECK_THROWS_AS(cycle_from_string("us06"), InputError);
}

TEST_CASE("the truth collapses to the first-order ECM") {
  const BatteryConfig b = default_battery();
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto i = gen_cycle(dynamic_spec(3000.0, seed), 1.0);
    const TruthRun run = simulate_truth(first_order_truth(), b, i, 0.95);
    const std::vector<EcmParams> ps(i.size(), EcmParams{0.05, 0.03, 1000.0});
    const auto v = simulate_series(ps, i, run.soc_true, b);
    double worst = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      worst = std::max(worst, std::abs(v[k] - run.measured.voltage_v[k]));
    }
    CHECK(worst < 1e-4);
    for (double u : run.u_d2) CHECK(u == 0.0);
  }
  CycleSpec h;
  h.duration_s = 2000.0;
  const auto i = gen_cycle(h, 1.0);
  const TruthRun run = simulate_truth(first_order_truth(), b, i, 0.95);
  const std::vector<EcmParams> ps(i.size(), EcmParams{0.05, 0.03, 1000.0});
  const auto v = simulate_series(ps, i, run.soc_true, b);
  for (std::size_t k = 0; k < v.size(); ++k) CHECK(std::abs(v[k] - run.voltage_true[k]) < 1e-4);
}

TEST_CASE("colder cells sag more under the same pulse") {
  const BatteryConfig b = default_battery();
  CycleSpec c;
  c.duration_s = 1000.0;
  const auto i = gen_cycle(c, 1.0);
  TruthConfig cold, mild;
  cold.sigma_v = mild.sigma_v = 0.0;
  cold.ambient_c = -20.0;
  mild.ambient_c = 10.0;
  const TruthRun rc = simulate_truth(cold, b, i, 0.9);
  const TruthRun rm = simulate_truth(mild, b, i, 0.9);
  for (std::size_t k = 0; k < i.size(); ++k) {
    const double sag_cold = b.ocv(rc.soc_true[k]) - rc.voltage_true[k];
    const double sag_mild = b.ocv(rm.soc_true[k]) - rm.voltage_true[k];
    if (i[k] > 0.0) CHECK(sag_cold > sag_mild);
  }
}

TEST_CASE("a resting cell reads its OCV") {
  const BatteryConfig b = default_battery();
  TruthConfig t;
  t.sigma_v = 0.0;
  const std::vector<double> zeros(300, 0.0);
  const TruthRun run = simulate_truth(t, b, zeros, 0.42);
  for (std::size_t k = 0; k < zeros.size(); ++k) {
    CHECK(run.soc_true[k] == 0.42);
    CHECK(run.measured.voltage_v[k] == b.ocv(0.42));
  }
}

TEST_CASE("true SOC follows coulomb counting exactly") {
  const BatteryConfig b = default_battery();
  const auto i = gen_cycle(dynamic_spec(4000.0, 5), 1.0);
  const TruthRun run = simulate_truth(TruthConfig{}, b, i, 1.0);
  REQUIRE_FALSE(run.soc_exhausted);
  double charge = 0.0;
  for (std::size_t k = 0; k < run.soc_true.size(); ++k) {
    CHECK(std::abs(run.soc_true[k] - (1.0 - charge / b.capacity_coulombs)) < 1e-9);
    charge += i[k] * b.dt_s;
  }
}

TEST_CASE("exhausted cells stop early") {
  const BatteryConfig b = default_battery();
  const std::vector<double> heavy(2000, 6.0);
  const TruthRun run = simulate_truth(TruthConfig{}, b, heavy, 0.1);
  CHECK(run.soc_exhausted);
  CHECK(run.soc_true.size() < heavy.size());
  CHECK(run.measured.size() == run.soc_true.size());
  CHECK(run.soc_true.back() >= 0.0);
}

TEST_CASE("noise is seeded") {
  const BatteryConfig b = default_battery();
  const auto i = gen_cycle(dynamic_spec(500.0, 1), 1.0);
  TruthConfig t;
  const TruthRun a = simulate_truth(t, b, i, 0.9);
  const TruthRun a2 = simulate_truth(t, b, i, 0.9);
  CHECK(a.measured.voltage_v == a2.measured.voltage_v);
  t.seed = 2;
  const TruthRun c = simulate_truth(t, b, i, 0.9);
  CHECK(a.measured.voltage_v != c.measured.voltage_v);
  CHECK(a.voltage_true == c.voltage_true);
  std::vector<double> resid;
  for (std::size_t k = 0; k < i.size(); ++k) resid.push_back(a.measured.voltage_v[k] - a.voltage_true[k]);
  CHECK(rmse(resid, std::vector<double>(resid.size(), 0.0)) == doctest::Approx(t.sigma_v).epsilon(0.15));
}

TEST_CASE("truth configuration checks") {
  const BatteryConfig b = default_battery();
  const std::vector<double> i(10, 1.0);
  TruthConfig t;
  t.r0_ref = -0.01;
  CHECK_THROWS_AS(simulate_truth(t, b, i, 0.9), InputError);
  t = {};
  t.sigma_v = -1.0;
  CHECK_THROWS_AS(simulate_truth(t, b, i, 0.9), InputError);
  CHECK_THROWS_AS(simulate_truth(TruthConfig{}, b, i, 1.5), InputError);
  CHECK_THROWS_AS(simulate_truth(TruthConfig{}, b, std::vector<double>{}, 0.5), InputError);
}

TEST_CASE("default OCV curve") {
  const OcvCurve c = default_ocv_curve();
  CHECK(c.is_monotone());
  CHECK(c.coeffs().size() == 10);
  for (double s = 0.0; s <= 1.0; s += 0.05) CHECK(std::abs(c(s) - reference_ocv_volts(s)) < 0.02);
  CHECK(c(0.0) >= 2.5 - 0.05);
  CHECK(c(1.0) <= 4.2 + 0.05);
}

TEST_CASE("scenario presets") {
  const Scenario cold = scenario_preset("cold-dynamic", 7);
  CHECK(cold.truth.ambient_c == -20.0);
  CHECK(cold.cycle.kind == CycleKind::dynamic);
  CHECK(cold.truth.seed == 7);
  const Scenario mild = scenario_preset("mild-hppc", 7);
  CHECK(mild.truth.ambient_c == 10.0);
  CHECK(mild.cycle.kind == CycleKind::hppc);
  CHECK_THROWS_AS(scenario_preset("hot", 7), InputError);
}

TEST_CASE("truth CSV round trip") {
  const BatteryConfig b = default_battery();
  const auto i = gen_cycle(dynamic_spec(200.0, 1), 1.0);
  const TruthRun run = simulate_truth(TruthConfig{}, b, i, 0.9);
  const auto dir = testing::scratch("truth_csv");
  write_truth_csv(dir / "x.truth.csv", run);
  const TruthSeries back = read_truth_csv(dir / "x.truth.csv");
  CHECK(back.soc_true == run.soc_true);
  CHECK(back.time_s == run.measured.time_s);
}
