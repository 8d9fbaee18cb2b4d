#include "pytf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pytf/rng.hpp"

namespace pytf {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    const double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

// (u, v) in [0,1]^2 local shape coordinates; each shape tightly fills the box.
bool inside_shape(int64_t shape, double u, double v) {
    const double du = u - 0.5, dv = v - 0.5;
    switch (shape) {
        case 0:  // circle
            return du * du + dv * dv <= 0.25;
        case 1:  // triangle, apex up
            return v <= 1.0 && 2.0 * std::abs(du) <= v;
        default:  // regular octagon inscribed in the unit square
            return std::abs(du) <= 0.5 && std::abs(dv) <= 0.5 &&
                   std::abs(du) + std::abs(dv) <= 0.5 * std::sqrt(2.0);
    }
}

}  // namespace

std::array<float, 3> class_color(int64_t class_id) {
    const int64_t color_idx = class_id / 3;
    return hsv_to_rgb(static_cast<double>(color_idx) / 15.0, 0.9, 0.9);
}

std::vector<SyntheticScene> gen_dataset(uint64_t seed, int64_t n_scenes, int64_t image_size,
                                        int64_t num_classes) {
    if (image_size < 32 || image_size % 32 != 0)
        throw std::invalid_argument("gen_dataset: image_size must be a positive multiple of 32, got " +
                                    std::to_string(image_size));
    if (num_classes < 2 || num_classes > 43)
        throw std::invalid_argument("gen_dataset: num_classes must lie in [2, 43], got " +
                                    std::to_string(num_classes));
    if (n_scenes < 0) throw std::invalid_argument("gen_dataset: n_scenes must be non-negative");

    std::vector<SyntheticScene> scenes;
    scenes.reserve(static_cast<size_t>(n_scenes));
    const int64_t hw = image_size;

    for (int64_t idx = 0; idx < n_scenes; ++idx) {
        Rng rng = Rng::from(seed, static_cast<uint64_t>(idx));
        SyntheticScene sc;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "scene_%05lld_%08llx", static_cast<long long>(idx),
                      static_cast<unsigned long long>(mix64(seed, static_cast<uint64_t>(idx)) &
                                                      0xffffffffull));
        sc.id = buf;
        sc.image = Tensor({3, hw, hw});

        // Textured background: base color, two low-frequency waves, pixel noise.
        float base[3];
        for (float& b : base) b = static_cast<float>(rng.uniform(0.25, 0.55));
        struct Wave {
            double fx, fy, phase, amp;
        } waves[2];
        for (Wave& w : waves) {
            w.fx = rng.uniform(0.5, 3.0) * 2.0 * kPi / static_cast<double>(hw);
            w.fy = rng.uniform(0.5, 3.0) * 2.0 * kPi / static_cast<double>(hw);
            w.phase = rng.uniform(0.0, 2.0 * kPi);
            w.amp = rng.uniform(0.02, 0.08);
        }
        for (int64_t y = 0; y < hw; ++y)
            for (int64_t x = 0; x < hw; ++x) {
                double tex = 0.0;
                for (const Wave& w : waves)
                    tex += w.amp * std::sin(w.fx * static_cast<double>(x) +
                                            w.fy * static_cast<double>(y) + w.phase);
                const double noise = rng.uniform(-0.06, 0.06);
                for (int64_t c = 0; c < 3; ++c) {
                    const double v = static_cast<double>(base[c]) + tex + noise;
                    sc.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }

        // 0..4 signs, overlap-limited placement.
        const int64_t n_signs = rng.uniform_int(0, 4);
        const double max_scale = std::min<double>(64.0, static_cast<double>(hw) / 2.0);
        for (int64_t s = 0; s < n_signs; ++s) {
            const int64_t cls = rng.uniform_int(0, num_classes - 1);
            Box box;
            bool placed = false;
            for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
                const double scale = rng.uniform(8.0, max_scale);
                const double x1 = rng.uniform(0.0, static_cast<double>(hw) - scale);
                const double y1 = rng.uniform(0.0, static_cast<double>(hw) - scale);
                box = {x1, y1, x1 + scale, y1 + scale};
                placed = true;
                for (const GroundTruthBox& other : sc.boxes)
                    if (iou(box, other.box) > 0.3) {
                        placed = false;
                        break;
                    }
            }
            if (!placed) continue;  // crowded scene, skip this sign

            const auto rgb = class_color(cls);
            const float bright = static_cast<float>(rng.uniform(0.75, 1.15));
            const int64_t shape = cls % 3;
            const int64_t ylo = static_cast<int64_t>(std::floor(box.y1));
            const int64_t yhi = static_cast<int64_t>(std::ceil(box.y2));
            const int64_t xlo = static_cast<int64_t>(std::floor(box.x1));
            const int64_t xhi = static_cast<int64_t>(std::ceil(box.x2));
            const double span = box.x2 - box.x1;
            for (int64_t y = std::max<int64_t>(0, ylo); y < std::min(hw, yhi); ++y)
                for (int64_t x = std::max<int64_t>(0, xlo); x < std::min(hw, xhi); ++x) {
                    const double u = (static_cast<double>(x) + 0.5 - box.x1) / span;
                    const double v = (static_cast<double>(y) + 0.5 - box.y1) / span;
                    if (u < 0 || u > 1 || v < 0 || v > 1 || !inside_shape(shape, u, v)) continue;
                    for (int64_t c = 0; c < 3; ++c)
                        sc.image.at(c, y, x) =
                            std::clamp(rgb[static_cast<size_t>(c)] * bright, 0.0f, 1.0f);
                }
            sc.boxes.push_back({sc.id, cls, box});
        }
        scenes.push_back(std::move(sc));
    }
    return scenes;
}

}  // namespace pytf
