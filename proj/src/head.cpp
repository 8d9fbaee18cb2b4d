#include "pytf/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pytf {

std::array<double, 4> encode_box(const Box& b, double cx, double cy, double stride) {
    const double bx = 0.5 * (b.x1 + b.x2);
    const double by = 0.5 * (b.y1 + b.y2);
    const double bw = b.x2 - b.x1;
    const double bh = b.y2 - b.y1;
    return {(bx - cx) / stride, (by - cy) / stride, std::log(bw / stride), std::log(bh / stride)};
}

Box decode_box(const std::array<double, 4>& t, double cx, double cy, double stride) {
    const double bx = cx + t[0] * stride;
    const double by = cy + t[1] * stride;
    const double bw = stride * std::exp(t[2]);
    const double bh = stride * std::exp(t[3]);
    return {bx - 0.5 * bw, by - 0.5 * bh, bx + 0.5 * bw, by + 0.5 * bh};
}

CellTargets build_cell_targets(const std::vector<GroundTruthBox>& boxes, int64_t grid_h,
                               int64_t grid_w, double stride, int64_t num_classes) {
    CellTargets t;
    const int64_t n = grid_h * grid_w;
    t.cls.assign(static_cast<size_t>(n), num_classes);  // background
    t.offsets = Tensor({std::max<int64_t>(n, 1), 4});
    t.pos_mask.assign(static_cast<size_t>(n), 0.0f);
    for (int64_t gy = 0; gy < grid_h; ++gy)
        for (int64_t gx = 0; gx < grid_w; ++gx) {
            const double cx = (static_cast<double>(gx) + 0.5) * stride;
            const double cy = (static_cast<double>(gy) + 0.5) * stride;
            const GroundTruthBox* best = nullptr;
            for (const GroundTruthBox& b : boxes) {
                if (cx < b.box.x1 || cx > b.box.x2 || cy < b.box.y1 || cy > b.box.y2) continue;
                if (best == nullptr || b.box.area() < best->box.area()) best = &b;
            }
            if (best == nullptr) continue;
            const int64_t cell = gy * grid_w + gx;
            t.cls[static_cast<size_t>(cell)] = best->class_id;
            const auto enc = encode_box(best->box, cx, cy, stride);
            for (int64_t k = 0; k < 4; ++k) t.offsets.at(cell, k) = static_cast<float>(enc[static_cast<size_t>(k)]);
            t.pos_mask[static_cast<size_t>(cell)] = 1.0f;
            ++t.n_pos;
        }
    return t;
}

std::vector<Detection> decode_detections(const Tensor& head_out, const std::string& image_id,
                                         double stride, double score_thresh, double nms_iou) {
    if (head_out.rank() != 3)
        throw std::invalid_argument("decode_detections: head output must be [C,H,W], got " +
                                    shape_str(head_out.shape));
    const int64_t ch = head_out.shape[0], gh = head_out.shape[1], gw = head_out.shape[2];
    if (ch < 6)
        throw std::invalid_argument("decode_detections: head output needs at least 6 channels");
    const int64_t num_classes = ch - 5;

    std::vector<Detection> cand;
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            // softmax over num_classes + 1 logits
            double mx = -1e30;
            for (int64_t c = 0; c <= num_classes; ++c)
                mx = std::max(mx, static_cast<double>(head_out.at(c, gy, gx)));
            double denom = 0.0;
            for (int64_t c = 0; c <= num_classes; ++c)
                denom += std::exp(static_cast<double>(head_out.at(c, gy, gx)) - mx);
            int64_t best_c = num_classes;
            double best_p = 0.0;
            for (int64_t c = 0; c <= num_classes; ++c) {
                const double p = std::exp(static_cast<double>(head_out.at(c, gy, gx)) - mx) / denom;
                if (p > best_p) {
                    best_p = p;
                    best_c = c;
                }
            }
            if (best_c == num_classes || best_p < score_thresh) continue;
            const double cx = (static_cast<double>(gx) + 0.5) * stride;
            const double cy = (static_cast<double>(gy) + 0.5) * stride;
            std::array<double, 4> t;
            for (int64_t k = 0; k < 4; ++k)
                t[static_cast<size_t>(k)] = static_cast<double>(head_out.at(num_classes + 1 + k, gy, gx));
            Detection d;
            d.image_id = image_id;
            d.class_id = best_c;
            d.box = decode_box(t, cx, cy, stride);
            d.score = best_p;
            if (!(d.box.x2 > d.box.x1) || !(d.box.y2 > d.box.y1)) continue;
            cand.push_back(std::move(d));
        }

    // per-class greedy NMS, score-descending (stable on ties)
    std::vector<size_t> order(cand.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return cand[a].score > cand[b].score; });
    std::vector<char> dead(cand.size(), 0);
    std::vector<Detection> out;
    for (size_t i = 0; i < order.size(); ++i) {
        if (dead[order[i]]) continue;
        const Detection& keep = cand[order[i]];
        out.push_back(keep);
        for (size_t j = i + 1; j < order.size(); ++j) {
            if (dead[order[j]]) continue;
            const Detection& other = cand[order[j]];
            if (other.class_id == keep.class_id && iou(keep.box, other.box) > nms_iou)
                dead[order[j]] = 1;
        }
    }
    return out;
}

}  // namespace pytf
