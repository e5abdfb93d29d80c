// JSON model configuration: a small schema over ModelSpec with defaults for
// every field, strict key checking, and a stable serialization for round
// trips. The JSON surface restricts resolution to the supported presets and
// anchors to three per scale; programmatic ModelSpec use is looser.
#pragma once

#include <string>

#include "yoloret/model.hpp"

namespace yoloret {
namespace config {

// Parses a JSON object. Missing keys take defaults (resolution 320, width
// multiplier 0.75, truncate_last 2); unknown keys are rejected.
model::ModelSpec config_parse(const std::string& text);

std::string config_serialize(const model::ModelSpec& spec);

// Reads the file and parses it.
model::ModelSpec config_load(const std::string& path);

}  // namespace config
}  // namespace yoloret
