#include <fstream>
#include <json.hpp>
#include <sstream>

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/hybrid.hpp"
#include "hybrid_ecm/json_io.hpp"

namespace hybrid_ecm {

using nlohmann::ordered_json;

namespace {

ordered_json matrix_json(const RowMatrix& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

RowMatrix matrix_from(const ordered_json& j, Eigen::Index rows, Eigen::Index cols,
                      const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw InputError("model file: " + what + " should have " + std::to_string(rows) + " rows");
  }
  RowMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw InputError("model file: " + what + " row " + std::to_string(r) + " should have " +
                       std::to_string(cols) + " columns");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

ordered_json net_json(const FnnModel& net) {
  ordered_json j;
  const auto sizes = net.layer_sizes();
  j["layer_sizes"] = {sizes[0], sizes[1], sizes[2], sizes[3]};
  j["activation"] = "tanh";
  j["output_scale"] = net.output_scale;
  j["norm_stats"] = {{"mean", net.norm.mean}, {"std", net.norm.stddev}};
  ordered_json weights = ordered_json::array();
  ordered_json biases = ordered_json::array();
  for (const auto& l : net.layers) {
    weights.push_back(matrix_json(l.w));
    biases.push_back(std::vector<double>(l.b.data(), l.b.data() + l.b.size()));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  j["optimizer"] = to_string(net.optimizer);
  return j;
}

FnnModel net_from(const ordered_json& j, const std::string& name) {
  FnnModel net;
  const auto sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  if (sizes.size() != 4 || sizes[0] != 3 || sizes[3] != 1 || sizes[1] < 1 || sizes[2] < 1) {
    throw InputError("model file: network '" + name + "' must have layer sizes [3, h1, h2, 1]");
  }
  if (j.at("activation").get<std::string>() != "tanh") {
    throw InputError("model file: network '" + name + "' uses an unsupported activation");
  }
  net.output_scale = j.at("output_scale").get<double>();
  net.norm.mean = j.at("norm_stats").at("mean").get<std::array<double, 3>>();
  net.norm.stddev = j.at("norm_stats").at("std").get<std::array<double, 3>>();
  for (double s : net.norm.stddev) {
    if (!(s > 0.0)) throw InputError("model file: network '" + name + "' has non-positive std");
  }
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  if (weights.size() != 3 || biases.size() != 3) {
    throw InputError("model file: network '" + name + "' needs three layers");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const auto in = static_cast<Eigen::Index>(sizes[i]);
    const auto out = static_cast<Eigen::Index>(sizes[i + 1]);
    const std::string what = name + " layer " + std::to_string(i);
    net.layers[i].w = matrix_from(weights[i], out, in, what + " weights");
    const auto b = biases[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(b.size()) != out) {
      throw InputError("model file: " + what + " bias has the wrong length");
    }
    net.layers[i].b = Eigen::Map<const Eigen::VectorXd>(b.data(), out);
  }
  net.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  return net;
}

const char* const kNetNames[3] = {"r0", "rd", "cd"};

}  // namespace

nlohmann::ordered_json ocv_to_json(const OcvCurve& curve) {
  ordered_json j;
  j["coeffs"] = curve.coeffs();
  j["valid_soc_range"] = {curve.soc_lo(), curve.soc_hi()};
  return j;
}

OcvCurve ocv_from_json(const nlohmann::ordered_json& j) {
  const auto range = j.at("valid_soc_range").get<std::array<double, 2>>();
  return OcvCurve::checked(j.at("coeffs").get<std::vector<double>>(), range[0], range[1]);
}

std::string model_to_json(const HybridModel& model) {
  ordered_json j;
  j["format_version"] = kModelFormatVersion;
  j["dt_s"] = model.dt_s;
  j["ocv"] = ocv_to_json(model.ocv);
  j["guards"] = {{"r0_floor", model.guards.r0_floor},
                 {"rd_floor", model.guards.rd_floor},
                 {"cd_floor", model.guards.cd_floor},
                 {"tau_min", model.guards.tau.min_s},
                 {"tau_max", model.guards.tau.max_s}};
  ordered_json nets;
  for (std::size_t i = 0; i < 3; ++i) nets[kNetNames[i]] = net_json(model.nets[i]);
  j["networks"] = std::move(nets);
  j["training"] = {{"seed", model.meta.seed},
                   {"epochs_run", model.meta.epochs_run},
                   {"final_loss", model.meta.final_loss},
                   {"baseline_loss", model.meta.baseline_loss}};
  return j.dump(1) + "\n";
}

HybridModel model_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (!j.contains("format_version")) throw InputError("model file: missing format_version");
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw InputError("model file: format_version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kModelFormatVersion) + ")");
    }
    HybridModel m;
    m.dt_s = j.at("dt_s").get<double>();
    m.ocv = ocv_from_json(j.at("ocv"));
    const auto& g = j.at("guards");
    m.guards.r0_floor = g.at("r0_floor").get<double>();
    m.guards.rd_floor = g.at("rd_floor").get<double>();
    m.guards.cd_floor = g.at("cd_floor").get<double>();
    m.guards.tau.min_s = g.at("tau_min").get<double>();
    m.guards.tau.max_s = g.at("tau_max").get<double>();
    for (std::size_t i = 0; i < 3; ++i) m.nets[i] = net_from(j.at("networks").at(kNetNames[i]), kNetNames[i]);
    if (!(m.nets[0].norm == m.nets[1].norm && m.nets[1].norm == m.nets[2].norm)) {
      throw InputError("model file: networks disagree on input normalization");
    }
    const auto& t = j.at("training");
    m.meta.seed = t.at("seed").get<std::uint64_t>();
    m.meta.epochs_run = t.at("epochs_run").get<std::size_t>();
    m.meta.final_loss = t.at("final_loss").get<double>();
    m.meta.baseline_loss = t.at("baseline_loss").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model file is corrupt: ") + e.what());
  }
}

void save_model(const HybridModel& model, const std::filesystem::path& path) {
  write_text_file(path, model_to_json(model));
}

HybridModel load_model(const std::filesystem::path& path) {
  return model_from_json(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed for " + path.string());
}

nlohmann::ordered_json read_json_file(const std::filesystem::path& path) {
  try {
    return ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace hybrid_ecm
