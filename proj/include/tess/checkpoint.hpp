#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tess/forecaster.hpp"

// File layout:
//   8 bytes   magic "TESSCKP1"
//   8 bytes   header length n (uint64, little-endian)
//   n bytes   JSON header; "parameters" lists {name, rows, cols, offset, count}
//   rest      float64 little-endian values, row-major per parameter, offsets
//             counted in values from the start of the block

namespace tess {

inline constexpr char kCheckpointMagic[9] = "TESSCKP1";

struct CheckpointData {
    nlohmann::json header;
    std::map<std::string, Matrix> parameters;
};

/// Writes atomically (temp file, then rename).
void save_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                     const std::vector<NamedParameter>& params);
CheckpointData load_checkpoint(const std::filesystem::path& path);

/// Header carries config, ablation, seed and, if given, the threshold snapshot.
void save_forecaster(const std::filesystem::path& path, const PrefixForecaster& model,
                     const ThresholdSet* thresholds = nullptr);

struct LoadedForecaster {
    PrefixForecaster model;
    std::optional<ThresholdSet> thresholds;
};
LoadedForecaster load_forecaster(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const ThresholdSet& t);
void from_json(const nlohmann::json& j, ThresholdSet& t);

/// Write-temp-then-rename for text outputs.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace tess
