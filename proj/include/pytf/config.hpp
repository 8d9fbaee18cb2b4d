#pragma once

#include <string>

#include "pytf/backbone.hpp"

namespace pytf {

// Flat `key = value` text config (lists comma-separated, '#' comments).
// Unknown keys are rejected; omitted keys keep their defaults.
BackboneConfig parse_config_text(const std::string& text);
BackboneConfig load_config_file(const std::string& path);
void save_config_file(const BackboneConfig& cfg, const std::string& path);

// 32-byte SHA-256 fingerprint of the canonical config text.
std::array<uint8_t, 32> config_fingerprint(const BackboneConfig& cfg);

}  // namespace pytf
