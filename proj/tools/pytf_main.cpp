// Command-line surface: dataset generation, training, inference, evaluation,
// gradient verification, and shape inspection for the pyramid transformer.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pytf/checkpoint.hpp"
#include "pytf/config.hpp"
#include "pytf/dataset.hpp"
#include "pytf/detection.hpp"
#include "pytf/gradsuite.hpp"
#include "pytf/train.hpp"

namespace fs = std::filesystem;
using namespace pytf;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << text;
}

int cmd_gen(uint64_t seed, int64_t scenes, int64_t size, int64_t classes, const std::string& out) {
    auto data = gen_dataset(seed, scenes, size, classes);
    write_dataset_dir(data, out);
    int64_t boxes = 0;
    for (const auto& sc : data) boxes += static_cast<int64_t>(sc.boxes.size());
    std::printf("wrote %zu scenes (%lld boxes) to %s\n", data.size(), static_cast<long long>(boxes),
                out.c_str());
    return 0;
}

int cmd_shapes(const std::string& config_path, int64_t size) {
    BackboneConfig cfg =
        config_path.empty() ? BackboneConfig::default_config() : load_config_file(config_path);
    if (size > 0) cfg.image_h = cfg.image_w = size;
    cfg.validate();
    std::printf("%-8s %10s %10s %8s %8s\n", "level", "stride", "channels", "height", "width");
    int64_t stride = 1;
    for (int k = 0; k < 4; ++k) {
        stride *= cfg.stages[static_cast<size_t>(k)].reduction_ratio;
        std::printf("F%-7d %10lld %10lld %8lld %8lld\n", k + 1, static_cast<long long>(stride),
                    static_cast<long long>(cfg.stages[static_cast<size_t>(k)].dim_out),
                    static_cast<long long>(cfg.image_h / stride),
                    static_cast<long long>(cfg.image_w / stride));
    }
    std::printf("class    %10s %10lld %8d %8d\n", "-",
                static_cast<long long>(cfg.stages[3].dim_out), 1, 1);
    return 0;
}

int cmd_gradcheck(uint64_t seed) {
    auto results = run_grad_suite(seed);
    for (const auto& r : results)
        std::printf("[%s] %-42s max_rel_err %.3e (tol %.0e)\n", r.pass ? "PASS" : "FAIL",
                    r.name.c_str(), r.max_err, r.tol);
    const bool ok = grad_suite_passed(results);
    std::printf("%s: %zu checks\n", ok ? "gradcheck passed" : "gradcheck FAILED", results.size());
    return ok ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, int64_t epochs,
              uint64_t seed, int64_t classes, const std::string& out_ckpt,
              const std::string& out_log) {
    BackboneConfig cfg =
        config_path.empty() ? BackboneConfig::default_config() : load_config_file(config_path);
    ToyTrainConfig tcfg;
    tcfg.epochs = epochs;
    tcfg.seed = seed;
    tcfg.num_classes = classes;
    auto scenes = load_dataset_dir(data_dir);
    TrainOutput result = train_toy(cfg, tcfg, scenes);
    std::vector<NamedTensor> extras = {{"head.conv.weight", result.head.conv.weight},
                                       {"head.conv.bias", result.head.conv.bias}};
    save_checkpoint(result.model, out_ckpt, extras);
    if (!out_log.empty()) write_file(out_log, result.log.to_json());
    std::printf("trained %lld epochs, %zu steps; final loss %.4f; checkpoint %s\n",
                static_cast<long long>(epochs), result.log.losses.size(),
                result.log.losses.empty() ? 0.0 : result.log.losses.back(), out_ckpt.c_str());
    return 0;
}

int cmd_infer(const std::string& config_path, const std::string& ckpt, const std::string& data_dir,
              const std::string& out, double score_thresh, double nms_iou) {
    BackboneConfig cfg =
        config_path.empty() ? BackboneConfig::default_config() : load_config_file(config_path);
    LoadedCheckpoint lc = load_checkpoint_with_extras(ckpt, cfg);
    auto wit = lc.extras.find("head.conv.weight");
    auto bit = lc.extras.find("head.conv.bias");
    if (wit == lc.extras.end() || bit == lc.extras.end())
        throw std::runtime_error("infer: checkpoint has no detection head tensors");
    ToyHeadParams head;
    head.conv.weight = wit->second;
    head.conv.bias = bit->second;
    head.num_classes = head.conv.weight.shape[0] - 5;
    auto scenes = load_dataset_dir(data_dir);
    auto dets = infer_scenes(lc.model, head, scenes, score_thresh, nms_iou);
    write_file(out, detections_to_json(dets));
    std::printf("wrote %zu detections to %s\n", dets.size(), out.c_str());
    return 0;
}

int cmd_eval(const std::string& dets_path, const std::string& gt_path, const std::string& out) {
    auto dets = detections_from_json(read_file(dets_path));
    GroundTruthFile gt = ground_truth_from_json(read_file(gt_path));
    EvalReport rep = evaluate(dets, gt.boxes, coco_thresholds(), gt.image_universe);
    std::cout << rep.text_table();
    if (!out.empty()) write_file(out, rep.to_json());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pyramid transformer backbone, detection evaluator and training harness"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "generate a synthetic detection dataset");
    uint64_t gen_seed = 7;
    int64_t gen_scenes = 200, gen_size = 256, gen_classes = 6;
    std::string gen_out;
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--scenes", gen_scenes, "number of scenes");
    gen->add_option("--size", gen_size, "square image size (multiple of 32)");
    gen->add_option("--classes", gen_classes, "number of classes in [2,43]");
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* shapes = app.add_subcommand("shapes", "print the feature pyramid shape table");
    std::string shapes_cfg;
    int64_t shapes_size = 0;
    shapes->add_option("--config", shapes_cfg, "backbone config file");
    shapes->add_option("--size", shapes_size, "input size override");

    auto* gradcheck = app.add_subcommand("gradcheck", "run the double-precision gradient suite");
    uint64_t gc_seed = 1234;
    gradcheck->add_option("--seed", gc_seed, "suite seed");

    auto* train = app.add_subcommand("train", "train the toy detector");
    std::string tr_cfg, tr_data, tr_out = "model.ckpt", tr_log;
    int64_t tr_epochs = 8, tr_classes = 6;
    uint64_t tr_seed = 7;
    train->add_option("--config", tr_cfg, "backbone config file");
    train->add_option("--data", tr_data, "dataset directory")->required();
    train->add_option("--epochs", tr_epochs, "training epochs");
    train->add_option("--seed", tr_seed, "training seed");
    train->add_option("--classes", tr_classes, "number of classes");
    train->add_option("--out", tr_out, "output checkpoint path");
    train->add_option("--log", tr_log, "output TrainLog JSON path");

    auto* infer = app.add_subcommand("infer", "run inference over a dataset directory");
    std::string in_cfg, in_ckpt, in_data, in_out = "detections.json";
    double in_thresh = 0.05, in_nms = 0.5;
    infer->add_option("--config", in_cfg, "backbone config file");
    infer->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
    infer->add_option("--data", in_data, "dataset directory")->required();
    infer->add_option("--out", in_out, "output detections JSON");
    infer->add_option("--score-thresh", in_thresh, "score threshold");
    infer->add_option("--nms-iou", in_nms, "NMS IoU threshold");

    auto* eval = app.add_subcommand("eval", "evaluate detections against ground truth");
    std::string ev_dets, ev_gt, ev_out;
    eval->add_option("--dets", ev_dets, "detections JSON")->required();
    eval->add_option("--gt", ev_gt, "ground-truth JSON")->required();
    eval->add_option("--out", ev_out, "report JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints usage/help
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_seed, gen_scenes, gen_size, gen_classes, gen_out);
        if (shapes->parsed()) return cmd_shapes(shapes_cfg, shapes_size);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
        if (train->parsed())
            return cmd_train(tr_cfg, tr_data, tr_epochs, tr_seed, tr_classes, tr_out, tr_log);
        if (infer->parsed()) return cmd_infer(in_cfg, in_ckpt, in_data, in_out, in_thresh, in_nms);
        if (eval->parsed()) return cmd_eval(ev_dets, ev_gt, ev_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
