#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "hybrid_ecm/ecm.hpp"
#include "hybrid_ecm/fnn.hpp"
#include "hybrid_ecm/random.hpp"
#include "hybrid_ecm/series.hpp"

namespace testing {

namespace fs = std::filesystem;
using namespace hybrid_ecm;

/// Fresh, empty scratch directory for one test case.
inline fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(HYBRID_ECM_TEST_TMP) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

/// Random telegraph current: +-amplitude, switching with probability p_switch.
inline std::vector<double> prbs(std::size_t n, std::uint64_t seed, double amplitude = 1.0,
                                double p_switch = 0.3) {
  Rng rng(seed);
  std::vector<double> out(n);
  double level = amplitude;
  for (auto& v : out) {
    if (rng.uniform() < p_switch) level = -level;
    v = level;
  }
  return out;
}

inline BatteryConfig linear_battery(double dt_s = 1.0) {
  BatteryConfig b;
  b.dt_s = dt_s;
  b.ocv = OcvCurve({3.2, 0.9});
  return b;
}

/// Telemetry produced by the first-order recurrence itself.
struct EcmData {
  SeriesData data;
  std::vector<double> socs;
  std::vector<EcmParams> params;
};

inline EcmData ecm_data(const EcmParams& p, const std::vector<double>& currents, double soc0,
                        const BatteryConfig& batt, double temp_c = 25.0) {
  EcmData out;
  const std::size_t n = currents.size();
  out.socs = coulomb_count(currents, soc0, batt);
  out.params.assign(n, p);
  SeriesData& d = out.data;
  d.dt_s = batt.dt_s;
  d.current_a = currents;
  d.voltage_v = simulate_series(out.params, currents, out.socs, batt);
  d.temp_c.assign(n, temp_c);
  for (std::size_t k = 0; k < n; ++k) d.time_s.push_back(static_cast<double>(k) * batt.dt_s);
  return out;
}

/// Visits every weight and bias of a model or gradient set in a fixed order.
template <typename Layered, typename Fn>
void each_weight(Layered& m, Fn&& fn) {
  for (auto& layer : m.layers) {
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c) fn(layer.w(r, c));
    }
    for (Eigen::Index r = 0; r < layer.b.size(); ++r) fn(layer.b(r));
  }
}

template <typename Layered>
std::vector<double> flatten(const Layered& m) {
  std::vector<double> out;
  each_weight(const_cast<Layered&>(m), [&](double& w) { out.push_back(w); });
  return out;
}

/// Overwrites every weight, output layer included, with uniform draws.
inline void randomize(FnnModel& m, Rng& rng, double scale = 1.0) {
  each_weight(m, [&](double& w) { w = rng.uniform(-scale, scale); });
}

}  // namespace testing
