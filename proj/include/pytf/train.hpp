#pragma once

#include <unordered_map>

#include "pytf/backbone.hpp"
#include "pytf/head.hpp"
#include "pytf/synth.hpp"

namespace pytf {

struct ToyTrainConfig {
    int64_t epochs = 8;
    int64_t batch_size = 8;
    double lr = 1e-4;
    double weight_decay = 2e-4;
    double warmup_frac = 0.05;  // fraction of total steps, linear warmup
    double drop_path = 0.2;
    double lambda_reg = 1.0;
    double val_score_thresh = 0.05;
    double val_nms_iou = 0.5;
    int64_t num_classes = 6;
    uint64_t seed = 7;

    std::string canonical_text() const;
};

struct TrainLog {
    uint64_t seed = 0;
    std::string config;
    std::vector<double> losses;      // one per optimizer step
    std::vector<double> val_map50;   // one per epoch

    std::string to_json() const;
};

// Warmup from lr/warmup_steps at step 0 to lr at warmup end, then step decays
// x0.1 at 7/12 and 11/12 of the epoch span.
double lr_at_step(int64_t step, int64_t warmup_steps, double base_lr, int64_t steps_per_epoch,
                  int64_t epochs);

// Adam with decoupled weight decay; decay applies to rank>=2 tensors only.
class AdamW {
public:
    AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<std::pair<Tensor*, Tensor>>& params_and_grads, double lr);

private:
    struct Slot {
        Tensor m, v;
    };
    std::unordered_map<Tensor*, Slot> slots_;
    double wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Cross-entropy over per-cell classes plus masked smooth-L1 on the offsets of
// positive cells, normalized per positive coordinate.
Var detection_loss(FwdCtxF& ctx, Var head_out, const std::vector<CellTargets>& targets,
                   double lambda_reg);

struct TrainOutput {
    TrainLog log;
    Model model;
    ToyHeadParams head;
};

TrainOutput train_toy(const BackboneConfig& bcfg, const ToyTrainConfig& tcfg,
                      const std::vector<SyntheticScene>& scenes);

// Deterministic 80/20 split by shuffled index; returns (train, val) index sets.
std::pair<std::vector<size_t>, std::vector<size_t>> split_dataset(size_t n, uint64_t seed);

std::vector<Detection> infer_scenes(Model& model, ToyHeadParams& head,
                                    const std::vector<SyntheticScene>& scenes, double score_thresh,
                                    double nms_iou, int64_t batch_size = 8);

}  // namespace pytf
