#pragma once

// Synthetic battery oracle: a second-order RC cell whose resistances depend on
// temperature and SOC, plus drive-cycle generators. The truth deliberately
// exceeds what a first-order ECM can express.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hybrid_ecm/ecm.hpp"
#include "hybrid_ecm/series.hpp"

namespace hybrid_ecm {

struct TruthConfig {
  double r0_ref = 0.03;
  double rd1_ref = 0.02;
  double cd1_ref = 1500.0;
  /// Second branch is disabled when rd2_ref or cd2_ref is zero.
  double rd2_ref = 0.01;
  double cd2_ref = 20000.0;
  /// r(T) = r_ref * (1 + alpha * (25 - T))
  double alpha_per_c = 0.03;
  /// Below SOC 0.5 resistances scale by (1 + beta * (0.5 - SOC)).
  double beta = 0.5;
  double sigma_v = 0.002;
  double sigma_i = 0.0;
  double ambient_c = 25.0;
  std::uint64_t seed = 1;
  int substeps = 10;

  void validate() const;
};

enum class CycleKind { hppc, dynamic, constant };

std::string to_string(CycleKind kind);
CycleKind cycle_from_string(const std::string& name);

struct CycleSpec {
  CycleKind kind = CycleKind::hppc;
  double amplitude_a = 2.9;
  double pulse_s = 10.0;
  double rest_s = 40.0;
  double corr_time_s = 30.0;
  double mean_a = 1.5;
  double i_min_a = 0.0;
  double i_max_a = 6.0;
  double slew_a_per_s = 1.0;
  double duration_s = 3600.0;
  /// Zero-current samples prepended so a run starts from a rested cell.
  double lead_rest_s = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Rest lead (if any) followed by duration_s of the chosen profile.
std::vector<double> gen_cycle(const CycleSpec& spec, double dt_s);

struct TruthRun {
  SeriesData measured;
  std::vector<double> soc_true;
  std::vector<double> u_d1;
  std::vector<double> u_d2;
  std::vector<double> voltage_true;
  std::vector<double> current_true;
  bool soc_exhausted = false;
};

/// Integrates the truth circuit with `substeps` exponential sub-steps per
/// sample, current interpolated linearly between samples. SOC follows the
/// same left-rectangle coulomb counting as soc_step().
TruthRun simulate_truth(const TruthConfig& cfg, const BatteryConfig& batt,
                        std::span<const double> currents, double soc0);

/// Smooth reference OCV of a 2.5-4.2 V cell.
double reference_ocv_volts(double soc);

/// Degree-9 least-squares fit of reference_ocv_volts on 101 points.
OcvCurve default_ocv_curve();

/// time_s,soc_true,u_d1,u_d2,voltage_true,current_true
void write_truth_csv(const std::filesystem::path& path, const TruthRun& run);

struct TruthSeries {
  std::vector<double> time_s;
  std::vector<double> soc_true;
};
TruthSeries read_truth_csv(const std::filesystem::path& path);

/// Named scenario: battery, truth circuit and drive cycle.
struct Scenario {
  std::string name;
  TruthConfig truth;
  CycleSpec cycle;
  double soc0 = 1.0;
};

/// "cold-dynamic": -20 degC, dynamic cycle. "mild-hppc": 10 degC HPPC.
Scenario scenario_preset(const std::string& name, std::uint64_t seed = 7);

}  // namespace hybrid_ecm
