#pragma once

// Telemetry ingestion, resampling and error metrics.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace hybrid_ecm {

struct RawRecord {
  double time_s = 0.0;
  double current_a = 0.0;
  double voltage_v = 0.0;
  double temp_c = 0.0;
};

/// Uniformly sampled telemetry; current is discharge-positive.
struct SeriesData {
  double dt_s = 1.0;
  double t0_s = 0.0;
  std::vector<double> time_s;
  std::vector<double> current_a;
  std::vector<double> voltage_v;
  std::vector<double> temp_c;

  std::size_t size() const { return time_s.size(); }

  /// Checks equal lengths, uniform time at dt_s (±1e-6 s), finiteness and
  /// the (0, 10) V voltage sanity band. Throws InputError.
  void validate() const;

  /// Samples [begin, end).
  SeriesData slice(std::size_t begin, std::size_t end) const;
};

/// Maps canonical column names (time_s, current_a, voltage_v, temp_c) to the
/// header names found in a file. Unmapped columns use their canonical name.
struct ColumnMap {
  std::map<std::string, std::string> names;
  bool invert_current = false;

  /// Parses "time=Time,current=Current,voltage=Voltage,temp=Temperature".
  /// Short keys (time, current, voltage, temp) and canonical keys are accepted.
  static ColumnMap parse(const std::string& spec);
  std::string column_for(const std::string& canonical) const;
};

std::vector<RawRecord> parse_csv(const std::filesystem::path& path, const ColumnMap& map = {});

/// Every column of a numeric CSV keyed by header name, in file order of rows.
/// Empty cells are errors; the row index is reported.
std::map<std::string, std::vector<double>> read_csv_columns(const std::filesystem::path& path);

/// Writes the canonical schema with full double precision.
void write_csv(const std::filesystem::path& path, const SeriesData& data);

/// Bin means of width dt_s anchored at the first timestamp. A trailing bin that
/// does not cover a full interval is dropped.
SeriesData resample(std::span<const RawRecord> raw, double dt_s);

/// Reads and resamples in one go.
SeriesData load_series(const std::filesystem::path& path, double dt_s, const ColumnMap& map = {});

double mse(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);

/// 100 * (baseline - candidate) / baseline.
double improvement_pct(double baseline_err, double candidate_err);

}  // namespace hybrid_ecm
