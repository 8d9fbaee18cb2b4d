#pragma once

#include "pytf/detection.hpp"
#include "pytf/module.hpp"

namespace pytf {

// Minimal dense detection head over F3 (stride-16 grid): a 1x1 convolution
// emitting per-cell (num_classes + 1 background) logits and 4 box offsets.
// Background is the last class index.
inline constexpr int64_t kHeadStride = 16;

template <typename T>
struct ToyHeadParamsT {
    int64_t num_classes = 0;
    ConvParamsT<T> conv;  // [num_classes + 5, D3, 1, 1]

    static ToyHeadParamsT make(int64_t num_classes, int64_t in_dim, Rng& rng) {
        ToyHeadParamsT p;
        p.num_classes = num_classes;
        p.conv = ConvParamsT<T>::make(num_classes + 5, in_dim, 1, 1, rng);
        return p;
    }
};

using ToyHeadParams = ToyHeadParamsT<float>;

template <typename T>
VarT<T> toy_head_forward(FwdCtx<T>& ctx, VarT<T> f3, ToyHeadParamsT<T>& p) {
    detail::opcheck(f3.shape().size() == 4 && f3.shape()[1] == p.conv.weight.shape[1],
                    "toy_head: feature channels " +
                        std::to_string(f3.shape().size() == 4 ? f3.shape()[1] : -1) +
                        " do not match head input dim " + std::to_string(p.conv.weight.shape[1]));
    return conv2d(f3, ctx.param(p.conv.weight), ctx.param(p.conv.bias), Conv2d::of(1, 1, 0));
}

// Cell-center anchored box encoding on a stride-s grid:
//   t = ((bx-cx)/s, (by-cy)/s, log(bw/s), log(bh/s))
// so zero offsets decode to the cell-sized box around the cell center.
std::array<double, 4> encode_box(const Box& b, double cx, double cy, double stride);
Box decode_box(const std::array<double, 4>& t, double cx, double cy, double stride);

// Per-cell training targets: class id (background = num_classes) and encoded
// offsets. A cell is positive when its center falls inside a ground-truth
// box; ties go to the smallest box.
struct CellTargets {
    std::vector<int64_t> cls;  // grid_h*grid_w, row-major
    Tensor offsets;            // [grid_h*grid_w, 4], zero at negatives
    std::vector<float> pos_mask;
    int64_t n_pos = 0;
};
CellTargets build_cell_targets(const std::vector<GroundTruthBox>& boxes, int64_t grid_h,
                               int64_t grid_w, double stride, int64_t num_classes);

// Decodes one image's head output [num_classes+5, H, W] into scored
// detections: per-cell argmax class, score threshold, then per-class greedy
// NMS.
std::vector<Detection> decode_detections(const Tensor& head_out, const std::string& image_id,
                                         double stride, double score_thresh, double nms_iou);

}  // namespace pytf
