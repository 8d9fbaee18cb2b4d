#include "pytf/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace pytf {

void Box::validate() const {
    if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2)) ||
        !(x2 > x1) || !(y2 > y1))
        throw std::invalid_argument("box: degenerate box [" + std::to_string(x1) + ", " +
                                    std::to_string(y1) + ", " + std::to_string(x2) + ", " +
                                    std::to_string(y2) + "]");
}

double iou(const Box& a, const Box& b) {
    a.validate();
    b.validate();
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    if (inter <= 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruthBox>& gts, double thr) {
    MatchResult res;
    res.order.resize(dets.size());
    std::iota(res.order.begin(), res.order.end(), size_t{0});
    std::stable_sort(res.order.begin(), res.order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });

    std::vector<char> gt_used(gts.size(), 0);
    res.tp.assign(dets.size(), 0);
    for (size_t oi = 0; oi < res.order.size(); ++oi) {
        const Detection& d = dets[res.order[oi]];
        double best = thr;
        int64_t best_gt = -1;
        for (size_t gi = 0; gi < gts.size(); ++gi) {
            if (gt_used[gi] || gts[gi].image_id != d.image_id) continue;
            const double ov = iou(d.box, gts[gi].box);
            if (ov >= best && (best_gt < 0 || ov > best)) {
                best = ov;
                best_gt = static_cast<int64_t>(gi);
            }
        }
        if (best_gt >= 0) {
            gt_used[static_cast<size_t>(best_gt)] = 1;
            res.tp[oi] = 1;
        }
    }
    res.unmatched_gt = static_cast<int64_t>(
        std::count(gt_used.begin(), gt_used.end(), 0));
    return res;
}

double average_precision(const std::vector<char>& tp, int64_t n_gt) {
    if (n_gt < 1) throw std::invalid_argument("average_precision: n_gt must be at least 1");
    const size_t n = tp.size();
    // precision/recall after each detection, then the monotone envelope.
    std::vector<double> precision(n), recall(n);
    int64_t cum_tp = 0;
    for (size_t i = 0; i < n; ++i) {
        cum_tp += tp[i] ? 1 : 0;
        precision[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(cum_tp) / static_cast<double>(n_gt);
    }
    for (size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double total = 0.0;
    size_t at = 0;
    for (int r = 0; r <= 100; ++r) {
        const double rec = static_cast<double>(r) / 100.0;
        while (at < n && recall[at] < rec) ++at;
        if (at < n) total += precision[at];
    }
    return total / 101.0;
}

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                    const std::vector<double>& thresholds,
                    const std::optional<std::set<std::string>>& image_universe) {
    if (thresholds.empty()) throw std::invalid_argument("evaluate: no IoU thresholds given");
    std::set<std::string> universe;
    if (image_universe) {
        universe = *image_universe;
        for (const GroundTruthBox& g : gts)
            if (!universe.count(g.image_id))
                throw std::invalid_argument("evaluate: ground truth references unknown image id '" +
                                            g.image_id + "'");
    } else {
        for (const GroundTruthBox& g : gts) universe.insert(g.image_id);
    }
    for (const Detection& d : dets) {
        if (!universe.count(d.image_id))
            throw std::invalid_argument("evaluate: detection references unknown image id '" +
                                        d.image_id + "'");
        if (!std::isfinite(d.score) || d.score < 0.0 || d.score > 1.0)
            throw std::invalid_argument("evaluate: detection score " + std::to_string(d.score) +
                                        " outside [0, 1]");
    }

    std::map<int64_t, std::vector<GroundTruthBox>> gt_by_class;
    for (const GroundTruthBox& g : gts) gt_by_class[g.class_id].push_back(g);
    std::map<int64_t, std::vector<Detection>> det_by_class;
    for (const Detection& d : dets) det_by_class[d.class_id].push_back(d);

    EvalReport rep;
    for (double t : thresholds)
        rep.thresholds_centi.push_back(static_cast<int64_t>(std::llround(t * 100.0)));

    for (const auto& [cls, cgts] : gt_by_class) {
        const auto dit = det_by_class.find(cls);
        static const std::vector<Detection> none;
        const std::vector<Detection>& cdets = dit == det_by_class.end() ? none : dit->second;
        for (size_t ti = 0; ti < thresholds.size(); ++ti) {
            MatchResult mr = match_detections(cdets, cgts, thresholds[ti]);
            rep.per_class[cls][rep.thresholds_centi[ti]] =
                average_precision(mr.tp, static_cast<int64_t>(cgts.size()));
        }
    }

    const double n_cls = static_cast<double>(rep.per_class.size());
    if (n_cls > 0) {
        double sweep = 0.0;
        for (int64_t tc : rep.thresholds_centi) {
            double m = 0.0;
            for (const auto& [cls, aps] : rep.per_class) m += aps.at(tc);
            m /= n_cls;
            sweep += m;
            if (tc == 50) rep.map_50 = m;
            if (tc == 75) rep.map_75 = m;
        }
        rep.map = sweep / static_cast<double>(rep.thresholds_centi.size());
    }
    return rep;
}

// ---------------------------------------------------------------------------
// JSON / text I/O
// ---------------------------------------------------------------------------

using nlohmann::json;

namespace {

json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 4)
        throw std::invalid_argument(std::string(what) + ": bbox must be [x1,y1,x2,y2]");
    Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    b.validate();
    return b;
}

}  // namespace

std::string detections_to_json(const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const Detection& d : dets)
        arr.push_back({{"image_id", d.image_id},
                       {"class_id", d.class_id},
                       {"bbox", box_to_json(d.box)},
                       {"score", d.score}});
    return arr.dump(2);
}

std::vector<Detection> detections_from_json(const std::string& text) {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw std::invalid_argument("detections: expected a JSON array");
    std::vector<Detection> out;
    for (const json& j : arr) {
        Detection d;
        d.image_id = j.at("image_id").get<std::string>();
        d.class_id = j.at("class_id").get<int64_t>();
        d.box = box_from_json(j.at("bbox"), "detections");
        d.score = j.at("score").get<double>();
        out.push_back(std::move(d));
    }
    return out;
}

std::string ground_truth_to_json(const std::vector<GroundTruthBox>& gts,
                                 const std::optional<std::vector<std::string>>& image_ids) {
    json ann = json::array();
    for (const GroundTruthBox& g : gts)
        ann.push_back(
            {{"image_id", g.image_id}, {"class_id", g.class_id}, {"bbox", box_to_json(g.box)}});
    if (!image_ids) return ann.dump(2);
    json obj;
    obj["images"] = *image_ids;
    obj["annotations"] = std::move(ann);
    return obj.dump(2);
}

GroundTruthFile ground_truth_from_json(const std::string& text) {
    const json root = json::parse(text);
    GroundTruthFile out;
    const json* ann = nullptr;
    if (root.is_array()) {
        ann = &root;
    } else if (root.is_object()) {
        if (!root.contains("annotations"))
            throw std::invalid_argument("ground truth: object form needs an 'annotations' array");
        ann = &root.at("annotations");
        std::set<std::string> uni;
        for (const json& id : root.at("images")) uni.insert(id.get<std::string>());
        out.image_universe = std::move(uni);
    } else {
        throw std::invalid_argument("ground truth: expected a JSON array or object");
    }
    for (const json& j : *ann) {
        GroundTruthBox g;
        g.image_id = j.at("image_id").get<std::string>();
        g.class_id = j.at("class_id").get<int64_t>();
        g.box = box_from_json(j.at("bbox"), "ground truth");
        out.boxes.push_back(std::move(g));
    }
    return out;
}

std::string EvalReport::to_json() const {
    json j;
    json pc = json::object();
    for (const auto& [cls, aps] : per_class) {
        json row = json::object();
        for (const auto& [tc, ap] : aps) row["ap_" + std::to_string(tc)] = ap;
        pc[std::to_string(cls)] = std::move(row);
    }
    j["per_class"] = std::move(pc);
    j["map_50"] = map_50;
    j["map_75"] = map_75;
    j["map"] = map;
    return j.dump(2);
}

std::string EvalReport::text_table() const {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof(line), "%8s %10s %10s %10s\n", "class", "AP50", "AP75", "AP");
    os << line;
    for (const auto& [cls, aps] : per_class) {
        double sweep = 0.0;
        for (const auto& [tc, ap] : aps) sweep += ap;
        sweep /= static_cast<double>(aps.size());
        const double a50 = aps.count(50) ? aps.at(50) : 0.0;
        const double a75 = aps.count(75) ? aps.at(75) : 0.0;
        std::snprintf(line, sizeof(line), "%8lld %10.4f %10.4f %10.4f\n",
                      static_cast<long long>(cls), a50, a75, sweep);
        os << line;
    }
    std::snprintf(line, sizeof(line), "%8s %10.4f %10.4f %10.4f\n", "mean", map_50, map_75, map);
    os << line;
    return os.str();
}

}  // namespace pytf
