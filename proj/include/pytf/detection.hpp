#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pytf {

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double area() const { return (x2 - x1) * (y2 - y1); }

    void validate() const;
};

struct Detection {
    std::string image_id;
    int64_t class_id = 0;
    Box box;
    double score = 0.0;
};

struct GroundTruthBox {
    std::string image_id;
    int64_t class_id = 0;
    Box box;
};

// Intersection over union; 0 for disjoint boxes. Degenerate boxes rejected.
double iou(const Box& a, const Box& b);

// Greedy per-image matching for a single class at one IoU threshold.
// Detections are processed in descending score (stable on ties); each takes
// the unmatched ground truth of highest IoU >= thr in its image.
struct MatchResult {
    std::vector<size_t> order;  // detection indices, score-descending
    std::vector<char> tp;       // aligned with `order`
    int64_t unmatched_gt = 0;
};
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruthBox>& gts, double thr);

// 101-point interpolated average precision from score-ordered TP/FP labels.
double average_precision(const std::vector<char>& tp_in_score_order, int64_t n_gt);

struct EvalReport {
    // class id -> IoU threshold (in centi, e.g. 50, 55, ...) -> AP
    std::map<int64_t, std::map<int64_t, double>> per_class;
    double map_50 = 0.0;
    double map_75 = 0.0;
    double map = 0.0;  // mean over the threshold sweep
    std::vector<int64_t> thresholds_centi;

    std::string to_json() const;
    std::string text_table() const;
};

inline std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i <= 9; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

// Pools detections per class across images; classes with no ground truth are
// excluded from every aggregate. `image_universe`, when given, defines the
// valid image ids (otherwise the ids present in `gts`); detections that
// reference an unknown image id are rejected.
EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                    const std::vector<double>& thresholds = coco_thresholds(),
                    const std::optional<std::set<std::string>>& image_universe = std::nullopt);

// JSON interchange: detections are an array of {"image_id", "class_id",
// "bbox" [x1,y1,x2,y2], "score"}; ground truth drops "score" and may be either
// a bare array or {"images": [...], "annotations": [...]} to name signless
// images explicitly.
std::string detections_to_json(const std::vector<Detection>& dets);
std::vector<Detection> detections_from_json(const std::string& text);
std::string ground_truth_to_json(const std::vector<GroundTruthBox>& gts,
                                 const std::optional<std::vector<std::string>>& image_ids = std::nullopt);
struct GroundTruthFile {
    std::vector<GroundTruthBox> boxes;
    std::optional<std::set<std::string>> image_universe;
};
GroundTruthFile ground_truth_from_json(const std::string& text);

}  // namespace pytf
