#pragma once

#include <array>
#include <string>
#include <vector>

#include "pytf/pyramid.hpp"

namespace pytf {

struct BackboneConfig {
    int64_t input_channels = 3;
    int64_t image_h = 256, image_w = 256;
    int64_t class_token_stage = 3;  // 1-based stage index
    uint64_t seed = 42;
    std::array<StageConfig, 4> stages;

    int64_t total_stride() const {
        int64_t s = 1;
        for (const auto& st : stages) s *= st.reduction_ratio;
        return s;
    }

    int64_t stride_at(int64_t stage_num) const {  // 1-based
        int64_t s = 1;
        for (int64_t k = 0; k < stage_num; ++k) s *= stages[static_cast<size_t>(k)].reduction_ratio;
        return s;
    }

    void validate() const {
        auto fail = [](const std::string& field, const std::string& why) {
            throw std::invalid_argument("backbone config: " + field + ": " + why);
        };
        if (input_channels < 1) fail("input_channels", "must be positive");
        for (size_t k = 0; k < 4; ++k) {
            const std::string where = "stage" + std::to_string(k + 1);
            stages[k].validate("backbone config: " + where);
            if (stages[k].reduction_ratio != 2 && stages[k].reduction_ratio != 4)
                fail(where + ".reduction_ratio", "backbone stages must reduce by 2 or 4, got " +
                                                     std::to_string(stages[k].reduction_ratio));
            const int64_t want_in = k == 0 ? input_channels : stages[k - 1].dim_out;
            if (stages[k].dim_in != want_in)
                fail(where + ".dim_in", "must chain from the previous stage (expected " +
                                            std::to_string(want_in) + ", got " +
                                            std::to_string(stages[k].dim_in) + ")");
        }
        if (class_token_stage < 1 || class_token_stage > 4)
            fail("class_token_stage", "must lie in [1, 4], got " + std::to_string(class_token_stage));
        if (image_h < total_stride() || image_w < total_stride() || image_h % total_stride() != 0 ||
            image_w % total_stride() != 0)
            fail("image_size", "must be a positive multiple of the total stride " +
                                   std::to_string(total_stride()));
    }

    // Fixed-order, whitespace-normalized encoding; the checkpoint fingerprint
    // is a SHA-256 over exactly this text.
    std::string canonical_text() const;

    static BackboneConfig default_config();
};

template <typename T>
struct StageParamsT {
    PyramidBlockParamsT<T> pb;
    std::vector<NormalBlockParamsT<T>> nbs;
};

template <typename T>
struct ModelT {
    BackboneConfig cfg;
    std::array<StageParamsT<T>, 4> stages;
    PositionalEmbeddingT<T> pos;
    std::vector<TensorT<T>> class_tokens;  // stages class_token_stage..4, fixed

    TensorT<T>& class_token_for(int64_t stage_num) {
        return class_tokens.at(static_cast<size_t>(stage_num - cfg.class_token_stage));
    }
};

using Model = ModelT<float>;

// Deterministic construction: every draw comes from one seeded stream in a
// fixed order, so identical seeds give bit-identical parameters.
template <typename T>
ModelT<T> build_backbone(const BackboneConfig& cfg) {
    cfg.validate();
    ModelT<T> m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    for (size_t k = 0; k < 4; ++k) {
        const StageConfig& sc = cfg.stages[k];
        m.stages[k].pb = PyramidBlockParamsT<T>::make(sc, rng);
        for (int64_t i = 0; i < sc.nb_depth; ++i)
            m.stages[k].nbs.push_back(NormalBlockParamsT<T>::make(sc, rng));
    }
    const int64_t cts = cfg.class_token_stage;
    const int64_t grid_h = cfg.image_h / cfg.stride_at(cts);
    const int64_t grid_w = cfg.image_w / cfg.stride_at(cts);
    m.pos = PositionalEmbeddingT<T>::make(grid_h, grid_w,
                                          cfg.stages[static_cast<size_t>(cts - 1)].dim_out, rng);
    for (int64_t k = cts; k <= 4; ++k) {
        TensorT<T> tok({1, 1, cfg.stages[static_cast<size_t>(k - 1)].dim_out});
        for (auto& v : tok.data) v = static_cast<T>(rng.normal(0.0, 0.02));
        m.class_tokens.push_back(std::move(tok));
    }
    return m;
}

template <typename T>
struct FeaturePyramidT {
    std::array<VarT<T>, 4> levels;  // F1..F4 at strides 4/8/16/32
    VarT<T> class_token;            // [B, 1, D4]
};

using FeaturePyramid = FeaturePyramidT<float>;

namespace detail {

// Class-token attach without positional injection (stages past the
// configured class-token stage re-seed a stage-local fixed token).
template <typename T>
TokenSequenceT<T> attach_class_only(FwdCtx<T>& ctx, const TokenSequenceT<T>& seq,
                                    const TensorT<T>& cls) {
    const int64_t b = seq.batch(), d = seq.dim();
    opcheck(cls.shape == Shape({1, 1, d}), "attach_class: class token shape " + shape_str(cls.shape) +
                                               " must be [1,1," + std::to_string(d) + "]");
    VarT<T> cls_b = add(ctx.fixed(cls), ctx.g.leaf(TensorT<T>::zeros({b, 1, d}), false));
    return {concat<T>({seq.tokens, cls_b}, 1), true, seq.spatial_hw};
}

}  // namespace detail

template <typename T>
FeaturePyramidT<T> forward_pyramid(FwdCtx<T>& ctx, ModelT<T>& m, VarT<T> image) {
    const TensorT<T>& iv = image.value();
    detail::opcheck(iv.rank() == 4, "forward_pyramid: input must be [B,C,H,W], got " +
                                        shape_str(iv.shape));
    detail::opcheck(iv.shape[1] == m.cfg.input_channels,
                    "forward_pyramid: input has " + std::to_string(iv.shape[1]) +
                        " channels, config expects " + std::to_string(m.cfg.input_channels));
    const int64_t ts = m.cfg.total_stride();
    detail::opcheck(iv.shape[2] % ts == 0 && iv.shape[3] % ts == 0,
                    "forward_pyramid: input " + std::to_string(iv.shape[2]) + "x" +
                        std::to_string(iv.shape[3]) + " must be a multiple of " + std::to_string(ts));
    detail::opcheck(iv.all_finite(), "forward_pyramid: non-finite input");

    FeaturePyramidT<T> pyr;
    VarT<T> x = image;
    const int64_t cts = m.cfg.class_token_stage;
    for (size_t k = 0; k < 4; ++k) {
        const StageConfig& sc = m.cfg.stages[k];
        const int64_t stage_num = static_cast<int64_t>(k) + 1;
        x = pyramid_block(ctx, x, sc, m.stages[k].pb);
        TokenSequenceT<T> seq = img2seq(x);
        if (stage_num == cts)
            seq = attach_class_and_pos(ctx, seq, m.class_token_for(stage_num), m.pos);
        else if (stage_num > cts)
            seq = detail::attach_class_only(ctx, seq, m.class_token_for(stage_num));
        for (auto& nb : m.stages[k].nbs) seq = normal_block(ctx, seq, sc, nb);
        if (seq.has_class_token) pyr.class_token = narrow(seq.tokens, 1, seq.spatial_length(), 1);
        x = seq2img(seq);
        pyr.levels[k] = x;
    }
    return pyr;
}

template <typename T>
FeaturePyramidT<T> forward_pyramid(FwdCtx<T>& ctx, ModelT<T>& m, TensorT<T> image) {
    return forward_pyramid(ctx, m, ctx.input(std::move(image)));
}

// ---------------------------------------------------------------------------
// Parameter traversal
// ---------------------------------------------------------------------------

enum class ParamKind { Learnable, Buffer, Fixed };

namespace detail {

template <typename T, typename F>
void visit_ln(const std::string& p, LayerNormParamsT<T>& ln, F&& fn) {
    fn(p + ".gamma", ln.gamma, ParamKind::Learnable);
    fn(p + ".beta", ln.beta, ParamKind::Learnable);
}

template <typename T, typename F>
void visit_conv(const std::string& p, ConvParamsT<T>& c, F&& fn) {
    fn(p + ".weight", c.weight, ParamKind::Learnable);
    fn(p + ".bias", c.bias, ParamKind::Learnable);
}

template <typename T, typename F>
void visit_bn(const std::string& p, BatchNormParamsT<T>& b, F&& fn) {
    fn(p + ".gamma", b.gamma, ParamKind::Learnable);
    fn(p + ".beta", b.beta, ParamKind::Learnable);
    fn(p + ".running_mean", b.running.mean, ParamKind::Buffer);
    fn(p + ".running_var", b.running.var, ParamKind::Buffer);
}

template <typename T, typename F>
void visit_attn(const std::string& p, AttentionParamsT<T>& a, F&& fn) {
    fn(p + ".wq", a.wq, ParamKind::Learnable);
    fn(p + ".bq", a.bq, ParamKind::Learnable);
    fn(p + ".wk", a.wk, ParamKind::Learnable);
    fn(p + ".bk", a.bk, ParamKind::Learnable);
    fn(p + ".wv", a.wv, ParamKind::Learnable);
    fn(p + ".bv", a.bv, ParamKind::Learnable);
    fn(p + ".wo", a.wo, ParamKind::Learnable);
    fn(p + ".bo", a.bo, ParamKind::Learnable);
}

template <typename T, typename F>
void visit_ffn(const std::string& p, FfnParamsT<T>& f, F&& fn) {
    fn(p + ".w1", f.w1, ParamKind::Learnable);
    fn(p + ".b1", f.b1, ParamKind::Learnable);
    fn(p + ".w2", f.w2, ParamKind::Learnable);
    fn(p + ".b2", f.b2, ParamKind::Learnable);
}

template <typename T, typename F>
void visit_pcm(const std::string& p, PcmParamsT<T>& c, F&& fn) {
    visit_conv(p + ".conv1", c.conv1, fn);
    visit_bn(p + ".bn1", c.bn1, fn);
    visit_conv(p + ".conv2", c.conv2, fn);
    visit_bn(p + ".bn2", c.bn2, fn);
    visit_conv(p + ".conv3", c.conv3, fn);
}

}  // namespace detail

template <typename T, typename F>
void visit_params(ModelT<T>& m, F&& fn) {
    for (size_t k = 0; k < 4; ++k) {
        const std::string sp = "stage" + std::to_string(k + 1);
        PyramidBlockParamsT<T>& pb = m.stages[k].pb;
        for (size_t j = 0; j < pb.prm_branches.size(); ++j)
            detail::visit_conv(sp + ".pb.prm" + std::to_string(j), pb.prm_branches[j], fn);
        detail::visit_pcm(sp + ".pb.pcm", pb.pcm, fn);
        detail::visit_ln(sp + ".pb.ln_attn", pb.ln_attn, fn);
        detail::visit_attn(sp + ".pb.attn", pb.attn, fn);
        detail::visit_ln(sp + ".pb.ln_ffn", pb.ln_ffn, fn);
        detail::visit_ffn(sp + ".pb.ffn", pb.ffn, fn);
        for (size_t i = 0; i < m.stages[k].nbs.size(); ++i) {
            const std::string np = sp + ".nb" + std::to_string(i);
            NormalBlockParamsT<T>& nb = m.stages[k].nbs[i];
            detail::visit_ln(np + ".ln_attn", nb.ln_attn, fn);
            detail::visit_attn(np + ".attn", nb.attn, fn);
            detail::visit_pcm(np + ".local", nb.local, fn);
            detail::visit_ln(np + ".ln_ffn", nb.ln_ffn, fn);
            detail::visit_ffn(np + ".ffn", nb.ffn, fn);
        }
    }
    fn("pos_table", m.pos.table, ParamKind::Learnable);
    for (size_t i = 0; i < m.class_tokens.size(); ++i)
        fn("class_token.stage" + std::to_string(m.cfg.class_token_stage + static_cast<int64_t>(i)),
           m.class_tokens[i], ParamKind::Fixed);
}

// Element count of the learnable parameters (running statistics and fixed
// class tokens excluded).
template <typename T>
int64_t param_count(ModelT<T>& m) {
    int64_t n = 0;
    visit_params(m, [&](const std::string&, TensorT<T>& t, ParamKind kind) {
        if (kind == ParamKind::Learnable) n += t.numel();
    });
    return n;
}

}  // namespace pytf
