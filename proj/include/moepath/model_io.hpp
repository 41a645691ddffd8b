#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "moepath/moe_model.hpp"

namespace moepath {

/// Writes `model.json` plus `layer{l}.router.tnsr` / `layer{l}.expert{i}.tnsr`
/// (0-based indices) into `dir`, creating it if needed.
void save_model(const std::filesystem::path& dir, const MoEModel& model);

/// Inverse of save_model. Bit-identical round trip.
MoEModel load_model(const std::filesystem::path& dir);

nlohmann::json config_to_json(const MoEConfig& config);
MoEConfig config_from_json(const nlohmann::json& j);

/// Writes `data.json` (sample blob list) plus `sample{n}.tnsr` into `dir`.
void save_samples(const std::filesystem::path& dir, const std::vector<SampleBatch>& samples);
std::vector<SampleBatch> load_samples(const std::filesystem::path& dir);

/// Reads a JSON document, mapping I/O and parse failures to FormatError.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Pretty-printed JSON with a trailing newline. Doubles use shortest round-trip form.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace moepath
