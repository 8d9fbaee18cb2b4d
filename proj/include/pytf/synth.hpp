#pragma once

#include <string>
#include <vector>

#include "pytf/detection.hpp"
#include "pytf/tensor.hpp"

namespace pytf {

// Procedurally generated traffic-sign-like scene: colored canonical shapes
// (circle / triangle / octagon) on a textured noise background. The class id
// encodes a (shape, color) pair.
struct SyntheticScene {
    std::string id;
    Tensor image;  // [3, H, W] in [0, 1]
    std::vector<GroundTruthBox> boxes;
};

inline constexpr int64_t kMaxSyntheticClasses = 45;  // 3 shapes x 15 colors

// Deterministic in (seed, index): each scene draws from its own derived
// stream, so subsets and parallel generation agree with serial generation.
std::vector<SyntheticScene> gen_dataset(uint64_t seed, int64_t n_scenes, int64_t image_size,
                                        int64_t num_classes);

// RGB color of a class' sign (before brightness jitter), for tests.
std::array<float, 3> class_color(int64_t class_id);

}  // namespace pytf
