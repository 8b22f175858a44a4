#include "hybrid_ecm/series.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/text.hpp"

namespace hybrid_ecm {

namespace {

constexpr double kTimeTol = 1e-6;
const char* const kCanonical[] = {"time_s", "current_a", "voltage_v", "temp_c"};

std::string canonical_key(const std::string& key) {
  if (key == "time" || key == "time_s") return "time_s";
  if (key == "current" || key == "current_a") return "current_a";
  if (key == "voltage" || key == "voltage_v") return "voltage_v";
  if (key == "temp" || key == "temperature" || key == "temp_c") return "temp_c";
  throw InputError("unknown column key in --map: '" + key + "'");
}

}  // namespace

void SeriesData::validate() const {
  const std::size_t n = time_s.size();
  if (current_a.size() != n || voltage_v.size() != n || temp_c.size() != n) {
    throw InputError("series columns have unequal lengths");
  }
  if (!(dt_s > 0.0)) throw InputError("series dt must be positive");
  for (std::size_t k = 0; k < n; ++k) {
    if (!std::isfinite(time_s[k]) || !std::isfinite(current_a[k]) ||
        !std::isfinite(voltage_v[k]) || !std::isfinite(temp_c[k])) {
      throw InputError("non-finite value at sample " + std::to_string(k));
    }
    if (!(voltage_v[k] > 0.0 && voltage_v[k] < 10.0)) {
      throw InputError("voltage outside (0, 10) V at sample " + std::to_string(k));
    }
    if (k > 0 && std::abs(time_s[k] - time_s[k - 1] - dt_s) > kTimeTol) {
      throw InputError("non-uniform sampling at sample " + std::to_string(k) + " (t=" +
                       format_double(time_s[k]) + ")");
    }
  }
}

SeriesData SeriesData::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw InputError("series slice out of range");
  SeriesData out;
  out.dt_s = dt_s;
  auto cut = [&](const std::vector<double>& v) {
    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin),
                               v.begin() + static_cast<std::ptrdiff_t>(end));
  };
  out.time_s = cut(time_s);
  out.current_a = cut(current_a);
  out.voltage_v = cut(voltage_v);
  out.temp_c = cut(temp_c);
  out.t0_s = out.time_s.empty() ? t0_s : out.time_s.front();
  return out;
}

ColumnMap ColumnMap::parse(const std::string& spec) {
  ColumnMap map;
  for (const std::string& item : split(spec, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InputError("bad --map entry '" + item + "' (want key=name)");
    map.names[canonical_key(trim(item.substr(0, eq)))] = trim(item.substr(eq + 1));
  }
  return map;
}

std::string ColumnMap::column_for(const std::string& canonical) const {
  const auto it = names.find(canonical);
  return it == names.end() ? canonical : it->second;
}

std::vector<RawRecord> parse_csv(const std::filesystem::path& path, const ColumnMap& map) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (!line.empty()) {
      header = split(line, ',');
      break;
    }
  }
  if (header.empty()) throw InputError(path.string() + ": empty file");
  for (auto& h : header) h = trim(h);

  std::size_t index[4];
  for (int c = 0; c < 4; ++c) {
    const std::string want = map.column_for(kCanonical[c]);
    std::size_t found = header.size();
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == want) {
        found = j;
        break;
      }
    }
    if (found == header.size()) {
      throw InputError(path.string() + ": missing required column '" + want + "'");
    }
    index[c] = found;
  }

  std::vector<RawRecord> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    double values[4];
    for (int c = 0; c < 4; ++c) {
      if (index[c] >= cells.size()) {
        throw InputError(path.string() + ": row " + std::to_string(row) + " (line " +
                         std::to_string(line_no) + ") has too few cells");
      }
      const auto parsed = parse_double(trim(cells[index[c]]));
      if (!parsed) {
        throw InputError(path.string() + ": non-numeric value '" + cells[index[c]] +
                         "' in column '" + header[index[c]] + "' at row " +
                         std::to_string(row) + " (line " + std::to_string(line_no) + ")");
      }
      values[c] = *parsed;
    }
    out.push_back({values[0], map.invert_current ? -values[1] : values[1], values[2], values[3]});
    ++row;
  }
  if (out.empty()) throw InputError(path.string() + ": no data rows");
  return out;
}

void write_csv(const std::filesystem::path& path, const SeriesData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "time_s,current_a,voltage_v,temp_c\n";
  for (std::size_t k = 0; k < data.size(); ++k) {
    out << format_double(data.time_s[k]) << ',' << format_double(data.current_a[k]) << ','
        << format_double(data.voltage_v[k]) << ',' << format_double(data.temp_c[k]) << '\n';
  }
}

SeriesData resample(std::span<const RawRecord> raw, double dt_s) {
  if (!(dt_s > 0.0)) throw InputError("resample: dt must be positive");
  if (raw.size() < 2) throw InputError("resample: need at least 2 raw samples");
  for (std::size_t j = 1; j < raw.size(); ++j) {
    const double step = raw[j].time_s - raw[j - 1].time_s;
    if (!(step > 0.0)) {
      throw InputError("resample: time not strictly increasing at t=" +
                       format_double(raw[j].time_s));
    }
    if (step > dt_s + kTimeTol) {
      throw InputError("resample: gap of " + format_double(step) + " s after t=" +
                       format_double(raw[j - 1].time_s));
    }
  }

  // Nominal raw spacing decides whether the trailing bin is complete.
  const double raw_dt = (raw.back().time_s - raw.front().time_s) / static_cast<double>(raw.size() - 1);
  const double t0 = raw.front().time_s;

  SeriesData out;
  out.dt_s = dt_s;
  out.t0_s = t0;
  std::size_t j = 0;
  for (std::size_t bin = 0; j < raw.size(); ++bin) {
    const double start = t0 + static_cast<double>(bin) * dt_s;
    const double end = start + dt_s;
    double si = 0.0;
    double sv = 0.0;
    double st = 0.0;
    std::size_t count = 0;
    double last_t = start;
    while (j < raw.size() && raw[j].time_s < end - kTimeTol) {
      si += raw[j].current_a;
      sv += raw[j].voltage_v;
      st += raw[j].temp_c;
      last_t = raw[j].time_s;
      ++count;
      ++j;
    }
    if (count == 0) {
      throw InputError("resample: empty bin starting at t=" + format_double(start));
    }
    if (j == raw.size() && last_t + raw_dt < end - kTimeTol) break;  // incomplete tail
    const double c = static_cast<double>(count);
    out.time_s.push_back(start);
    out.current_a.push_back(si / c);
    out.voltage_v.push_back(sv / c);
    out.temp_c.push_back(st / c);
  }
  if (out.size() < 2) throw InputError("resample: fewer than 2 output samples");
  return out;
}

SeriesData load_series(const std::filesystem::path& path, double dt_s, const ColumnMap& map) {
  const auto raw = parse_csv(path, map);
  SeriesData s = resample(raw, dt_s);
  s.validate();
  return s;
}

std::map<std::string, std::vector<double>> read_csv_columns(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) header = split(line, ',');
  }
  if (header.empty()) throw InputError(path.string() + ": empty file");
  for (auto& h : header) h = trim(h);

  std::vector<std::vector<double>> cols(header.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw InputError(path.string() + ": row " + std::to_string(row) + " has " +
                       std::to_string(cells.size()) + " cells, header has " +
                       std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto v = parse_double(trim(cells[j]));
      if (!v) {
        throw InputError(path.string() + ": non-numeric value in column '" + header[j] +
                         "' at row " + std::to_string(row));
      }
      cols[j].push_back(*v);
    }
    ++row;
  }
  std::map<std::string, std::vector<double>> out;
  for (std::size_t j = 0; j < header.size(); ++j) out[header[j]] = std::move(cols[j]);
  return out;
}

double mse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw InputError("mse: length mismatch (" + std::to_string(pred.size()) + " vs " +
                     std::to_string(truth.size()) + ")");
  }
  if (pred.empty()) throw InputError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    s += e * e;
  }
  return s / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
  return std::sqrt(mse(pred, truth));
}

double improvement_pct(double baseline_err, double candidate_err) {
  if (!(baseline_err > 0.0)) throw InputError("improvement_pct: baseline error must be positive");
  return 100.0 * (baseline_err - candidate_err) / baseline_err;
}

}  // namespace hybrid_ecm
