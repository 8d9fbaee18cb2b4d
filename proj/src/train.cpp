#include "pytf/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace pytf {

std::string ToyTrainConfig::canonical_text() const {
    std::ostringstream os;
    os << "epochs = " << epochs << "\n"
       << "batch_size = " << batch_size << "\n"
       << "lr = " << lr << "\n"
       << "weight_decay = " << weight_decay << "\n"
       << "warmup_frac = " << warmup_frac << "\n"
       << "drop_path = " << drop_path << "\n"
       << "lambda_reg = " << lambda_reg << "\n"
       << "num_classes = " << num_classes << "\n"
       << "seed = " << seed << "\n";
    return os.str();
}

std::string TrainLog::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["config"] = config;
    j["losses"] = losses;
    j["val_map50"] = val_map50;
    return j.dump(2);
}

double lr_at_step(int64_t step, int64_t warmup_steps, double base_lr, int64_t steps_per_epoch,
                  int64_t epochs) {
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const int64_t epoch = step / std::max<int64_t>(1, steps_per_epoch);
    const int64_t first_drop = epochs * 7 / 12;
    const int64_t second_drop = epochs * 11 / 12;
    double lr = base_lr;
    if (first_drop > 0 && epoch >= first_drop) lr *= 0.1;
    if (second_drop > 0 && epoch >= second_drop) lr *= 0.1;
    return lr;
}

void AdamW::step(const std::vector<std::pair<Tensor*, Tensor>>& params_and_grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [p, g] : params_and_grads) {
        auto it = slots_.find(p);
        if (it == slots_.end())
            it = slots_.emplace(p, Slot{Tensor::zeros(p->shape), Tensor::zeros(p->shape)}).first;
        Slot& s = it->second;
        const bool decay = p->rank() >= 2;
        for (int64_t i = 0; i < p->numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double m = beta1_ * static_cast<double>(s.m[i]) + (1.0 - beta1_) * gi;
            const double v = beta2_ * static_cast<double>(s.v[i]) + (1.0 - beta2_) * gi * gi;
            s.m[i] = static_cast<float>(m);
            s.v[i] = static_cast<float>(v);
            double upd = (m / bc1) / (std::sqrt(v / bc2) + eps_);
            if (decay) upd += wd_ * static_cast<double>((*p)[i]);
            (*p)[i] = static_cast<float>(static_cast<double>((*p)[i]) - lr * upd);
        }
    }
}

Var detection_loss(FwdCtxF& ctx, Var head_out, const std::vector<CellTargets>& targets,
                   double lambda_reg) {
    const Shape& s = head_out.shape();
    detail::opcheck(s.size() == 4, "detection_loss: head output must be [B,C,H,W]");
    const int64_t b = s[0], ch = s[1], gh = s[2], gw = s[3];
    detail::opcheck(static_cast<int64_t>(targets.size()) == b,
                    "detection_loss: " + std::to_string(targets.size()) + " target sets for batch " +
                        std::to_string(b));
    const int64_t nc = ch - 5;
    const int64_t cells = gh * gw;
    const int64_t n = b * cells;

    std::vector<int64_t> cls;
    cls.reserve(static_cast<size_t>(n));
    Tensor tgt_off({n, 4});
    Tensor mask({n, 1});
    int64_t n_pos = 0;
    for (int64_t i = 0; i < b; ++i) {
        const CellTargets& t = targets[static_cast<size_t>(i)];
        detail::opcheck(static_cast<int64_t>(t.cls.size()) == cells,
                        "detection_loss: target grid does not match head grid");
        for (int64_t c = 0; c < cells; ++c) {
            cls.push_back(t.cls[static_cast<size_t>(c)]);
            for (int64_t k = 0; k < 4; ++k) tgt_off.at(i * cells + c, k) = t.offsets.at(c, k);
            mask[i * cells + c] = t.pos_mask[static_cast<size_t>(c)];
        }
        n_pos += t.n_pos;
    }

    Var logits = reshape(permute(narrow(head_out, 1, 0, nc + 1), {0, 2, 3, 1}), {n, nc + 1});
    Var ce = scale(mean_all(take_rows(log_softmax(logits, 1), cls)), -1.0);

    Var offs = reshape(permute(narrow(head_out, 1, nc + 1, 4), {0, 2, 3, 1}), {n, 4});
    Var sl = mul(smooth_l1(offs, tgt_off, 1.0), ctx.g.leaf(std::move(mask), false));
    Var reg = scale(sum_all(sl), 1.0 / static_cast<double>(std::max<int64_t>(1, 4 * n_pos)));

    return add(ce, scale(reg, lambda_reg));
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_dataset(size_t n, uint64_t seed) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng = Rng::from(seed, 0x5914);
    for (size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    const size_t n_train = std::max<size_t>(1, n * 8 / 10);
    std::vector<size_t> train(idx.begin(), idx.begin() + static_cast<int64_t>(std::min(n_train, n)));
    std::vector<size_t> val(idx.begin() + static_cast<int64_t>(std::min(n_train, n)), idx.end());
    return {std::move(train), std::move(val)};
}

namespace {

Tensor stack_images(const std::vector<SyntheticScene>& scenes, const std::vector<size_t>& which) {
    const Shape& s0 = scenes[which[0]].image.shape;
    Tensor batch({static_cast<int64_t>(which.size()), s0[0], s0[1], s0[2]});
    const int64_t per = shape_numel(s0);
    for (size_t i = 0; i < which.size(); ++i) {
        const Tensor& img = scenes[which[i]].image;
        if (img.shape != s0)
            throw std::invalid_argument("train: scene image shapes differ (" + shape_str(img.shape) +
                                        " vs " + shape_str(s0) + ")");
        std::copy(img.data.begin(), img.data.end(),
                  batch.data.begin() + static_cast<int64_t>(i) * per);
    }
    return batch;
}

}  // namespace

TrainOutput train_toy(const BackboneConfig& bcfg, const ToyTrainConfig& tcfg,
                      const std::vector<SyntheticScene>& scenes) {
    if (scenes.empty()) throw std::invalid_argument("train: empty dataset");
    bcfg.validate();

    TrainOutput out{TrainLog{}, build_backbone<float>(bcfg), ToyHeadParams{}};
    Rng head_rng = Rng::from(bcfg.seed, 0xbead);
    out.head = ToyHeadParams::make(tcfg.num_classes, bcfg.stages[2].dim_out, head_rng);
    out.log.seed = tcfg.seed;
    out.log.config = bcfg.canonical_text() + tcfg.canonical_text();

    auto [train_idx, val_idx] = split_dataset(scenes.size(), tcfg.seed);
    const int64_t bs = std::min<int64_t>(tcfg.batch_size, static_cast<int64_t>(train_idx.size()));
    const int64_t steps_per_epoch = static_cast<int64_t>(train_idx.size()) / bs;
    const int64_t total_steps = steps_per_epoch * tcfg.epochs;
    const int64_t warmup_steps =
        std::max<int64_t>(1, static_cast<int64_t>(std::llround(tcfg.warmup_frac *
                                                               static_cast<double>(total_steps))));

    AdamW opt(tcfg.weight_decay);
    const double stride = static_cast<double>(kHeadStride);
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        // epoch-local deterministic shuffle
        Rng shuffle_rng = Rng::from(tcfg.seed, 0xe90c + static_cast<uint64_t>(epoch));
        std::vector<size_t> order = train_idx;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

        for (int64_t sb = 0; sb < steps_per_epoch; ++sb, ++step) {
            std::vector<size_t> batch_idx(order.begin() + sb * bs, order.begin() + (sb + 1) * bs);
            Tensor images = stack_images(scenes, batch_idx);
            const int64_t gh = images.shape[2] / kHeadStride;
            const int64_t gw = images.shape[3] / kHeadStride;
            std::vector<CellTargets> targets;
            for (size_t si : batch_idx)
                targets.push_back(
                    build_cell_targets(scenes[si].boxes, gh, gw, stride, tcfg.num_classes));

            Graph g;
            FwdCtxF ctx(g);
            ctx.train = true;
            ctx.params_require_grad = true;
            ctx.drop_path = tcfg.drop_path;
            Rng dp_rng = Rng::from(tcfg.seed, 0xd209 + static_cast<uint64_t>(step));
            ctx.rng = &dp_rng;

            FeaturePyramid pyr = forward_pyramid(ctx, out.model, std::move(images));
            Var head_out = toy_head_forward(ctx, pyr.levels[2], out.head);
            Var loss = detection_loss(ctx, head_out, targets, tcfg.lambda_reg);
            const double loss_v = static_cast<double>(loss.value()[0]);
            if (!std::isfinite(loss_v))
                throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
            g.backward(loss, Tensor::scalar(1.0f));

            std::vector<std::pair<Tensor*, Tensor>> pg;
            for (auto& [store, var] : ctx.bound)
                if (var.grad_ready()) pg.emplace_back(store, var.grad());
            opt.step(pg, lr_at_step(step, warmup_steps, tcfg.lr, steps_per_epoch, tcfg.epochs));
            out.log.losses.push_back(loss_v);
        }

        // end-of-epoch validation mAP@0.50
        std::vector<SyntheticScene> val_scenes;
        for (size_t vi : val_idx) val_scenes.push_back(scenes[vi]);
        if (!val_scenes.empty()) {
            std::vector<Detection> dets = infer_scenes(out.model, out.head, val_scenes,
                                                       tcfg.val_score_thresh, tcfg.val_nms_iou);
            std::set<std::string> universe;
            std::vector<GroundTruthBox> gts;
            for (const SyntheticScene& sc : val_scenes) {
                universe.insert(sc.id);
                gts.insert(gts.end(), sc.boxes.begin(), sc.boxes.end());
            }
            EvalReport rep = evaluate(dets, gts, {0.5}, universe);
            out.log.val_map50.push_back(rep.map_50);
        } else {
            out.log.val_map50.push_back(0.0);
        }
    }
    return out;
}

std::vector<Detection> infer_scenes(Model& model, ToyHeadParams& head,
                                    const std::vector<SyntheticScene>& scenes, double score_thresh,
                                    double nms_iou, int64_t batch_size) {
    std::vector<Detection> all;
    for (size_t at = 0; at < scenes.size(); at += static_cast<size_t>(batch_size)) {
        std::vector<size_t> which;
        for (size_t i = at; i < std::min(scenes.size(), at + static_cast<size_t>(batch_size)); ++i)
            which.push_back(i);
        Tensor images = stack_images(scenes, which);
        Graph g;
        FwdCtxF ctx(g);  // eval: no grads, running stats, no drop path
        FeaturePyramid pyr = forward_pyramid(ctx, model, std::move(images));
        Var head_out = toy_head_forward(ctx, pyr.levels[2], head);
        const Tensor& ho = head_out.value();
        const int64_t ch = ho.shape[1], gh = ho.shape[2], gw = ho.shape[3];
        for (size_t i = 0; i < which.size(); ++i) {
            Tensor one({ch, gh, gw});
            std::copy(ho.data.begin() + static_cast<int64_t>(i) * ch * gh * gw,
                      ho.data.begin() + static_cast<int64_t>(i + 1) * ch * gh * gw, one.data.begin());
            std::vector<Detection> dets =
                decode_detections(one, scenes[which[i]].id, static_cast<double>(kHeadStride),
                                  score_thresh, nms_iou);
            all.insert(all.end(), dets.begin(), dets.end());
        }
    }
    return all;
}

}  // namespace pytf
