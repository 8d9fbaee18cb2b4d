#pragma once

#include <map>
#include <string>

#include "pytf/backbone.hpp"
#include "pytf/container.hpp"

namespace pytf {

// Checkpoint file = 32-byte config fingerprint (SHA-256 of the canonical
// config text) followed by a "PYTF1" container holding every parameter and
// running statistic by name.
void save_checkpoint(Model& model, const std::string& path,
                     const std::vector<NamedTensor>& extras = {});

// Strict load: fingerprint must match `cfg` and the tensor set must equal the
// model's parameter set exactly.
Model load_checkpoint(const std::string& path, const BackboneConfig& cfg);

// Load that also surfaces non-backbone tensors (e.g. a detection head saved
// alongside the backbone).
struct LoadedCheckpoint {
    Model model;
    std::map<std::string, Tensor> extras;
};
LoadedCheckpoint load_checkpoint_with_extras(const std::string& path, const BackboneConfig& cfg);

}  // namespace pytf
