#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cfstab/nn.hpp"

namespace cfstab {

inline constexpr int kModelFormatVersion = 1;

// {format_version, spec, layers:[{w, b}], meta:{seed, dataset_fingerprint,
// train_config}}. Doubles are written as shortest round-trip decimals.
nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& doc);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc, const TrainConfig& defaults = {});

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

// SHA-256 over spec and parameters; identifies the generating model.
std::string model_fingerprint(const Network& net);

// Writes `doc` as pretty-printed JSON followed by a newline.
void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace cfstab
