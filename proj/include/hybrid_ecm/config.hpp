#pragma once

// Run configuration shared by every CLI subcommand. All defaults are
// materialized so the echoed file alone reproduces a run.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>

#include "hybrid_ecm/ecm.hpp"
#include "hybrid_ecm/ekf.hpp"
#include "hybrid_ecm/ffrls.hpp"
#include "hybrid_ecm/hybrid.hpp"
#include "hybrid_ecm/synth.hpp"

namespace hybrid_ecm {

struct BatterySection {
  double capacity_ah = 2.9;
  double dt_s = 1.0;
  /// Absent: the built-in reference curve.
  std::optional<OcvCurve> ocv;
  /// Absent: inverted from the first measured voltage.
  std::optional<double> soc0;

  BatteryConfig battery() const;
};

struct TrainingSection {
  TrainingWindowing windowing;
  double rel_tol = 1e-6;
  std::size_t patience = 5;
  std::uint64_t shuffle_seed = 7;
  /// Fraction of the series held out at the end for evaluation (0 = none).
  double holdout_fraction = 0.0;
};

struct SynthSection {
  std::string scenario;  // label; empty when no preset was used
  TruthConfig truth;
  CycleSpec cycle;
  double soc0 = 1.0;
};

struct InputSection {
  /// Column mapping, see ColumnMap::parse. Empty uses canonical names.
  std::string map;
  bool invert_current = false;

  ColumnMap column_map() const;
};

struct RunConfig {
  std::uint64_t seed = 1;
  InputSection input;
  BatterySection battery;
  FfrlsOptions ffrls;
  std::array<FnnConfig, 3> fnn = default_fnn_configs(1);
  TrainingSection training;
  EkfConfig ekf;
  SynthSection synth;
  /// File paths keyed "<subcommand>.<role>", e.g. "train.input".
  std::map<std::string, std::string> paths;

  /// Range and consistency checks; throws InputError.
  void validate() const;

  /// Network configs with seeds seed, seed+1, seed+2.
  std::array<FnnConfig, 3> fnn_configs() const;

  /// Replaces the synth section with a named preset (keeps the label).
  void apply_scenario(const std::string& name, std::uint64_t seed);
};

nlohmann::ordered_json config_to_json(const RunConfig& cfg);

/// Overlays `doc` onto the defaults. Unknown keys and wrong types are InputErrors.
RunConfig config_from_json(const nlohmann::ordered_json& doc);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace hybrid_ecm
