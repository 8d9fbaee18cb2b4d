#pragma once

#include <string>
#include <vector>

#include "pytf/synth.hpp"

namespace pytf {

// Dataset directory layout:
//   <dir>/scenes/<id>.pytf   one-tensor container holding "image" [3,H,W]
//   <dir>/annotations.json   {"images": [ids...], "annotations": [...]}
void write_dataset_dir(const std::vector<SyntheticScene>& scenes, const std::string& dir);
std::vector<SyntheticScene> load_dataset_dir(const std::string& dir);

}  // namespace pytf
