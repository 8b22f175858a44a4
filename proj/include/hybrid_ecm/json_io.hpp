#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>

#include "hybrid_ecm/ecm.hpp"

namespace hybrid_ecm {

/// {"coeffs": [...], "valid_soc_range": [lo, hi]}
nlohmann::ordered_json ocv_to_json(const OcvCurve& curve);
OcvCurve ocv_from_json(const nlohmann::ordered_json& j);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
nlohmann::ordered_json read_json_file(const std::filesystem::path& path);

}  // namespace hybrid_ecm
