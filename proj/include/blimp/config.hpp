#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blimp/world.hpp"

namespace blimp {

struct SimConfig {
    WorldConfig world;
    std::string arena_path;  // empty when the arena is inline or built in
    int frame_port = 7787;
    int console_port = 7788;
    std::string runs_dir = "runs";
};

struct ConfigResult {
    std::optional<SimConfig> config;
    std::vector<std::string> errors;

    bool ok() const { return config.has_value(); }
};

/// Parses a config document. Relative arena paths resolve against `base_dir`.
/// Missing sections take their defaults.
ConfigResult parse_config(const nlohmann::json& doc, const std::string& base_dir = ".");
ConfigResult load_config(const std::string& path);

/// Fully resolved world parameters, as stored in replay headers.
nlohmann::json world_to_json(const WorldConfig& w);

/// Inverse of world_to_json. Throws std::invalid_argument on malformed input.
WorldConfig world_from_json(const nlohmann::json& doc);

}  // namespace blimp
