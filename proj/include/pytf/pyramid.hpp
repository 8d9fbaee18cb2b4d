#pragma once

#include <array>
#include <vector>

#include "pytf/transformer.hpp"

namespace pytf {

// Per-stage hyperparameters. Standalone blocks accept reduction 1; the
// backbone additionally restricts stage ratios to {2, 4}.
struct StageConfig {
    int64_t reduction_ratio = 2;
    std::vector<int64_t> dilations = {1};
    int64_t dim_in = 0;
    int64_t dim_out = 0;
    int64_t num_heads = 1;
    int64_t nb_depth = 0;
    double ffn_expansion = 4.0;

    int64_t ffn_hidden() const {
        return std::max<int64_t>(1, static_cast<int64_t>(ffn_expansion * static_cast<double>(dim_out)));
    }

    void validate(const std::string& where) const {
        auto fail = [&](const std::string& field, const std::string& why) {
            throw std::invalid_argument(where + "." + field + ": " + why);
        };
        if (reduction_ratio != 1 && reduction_ratio != 2 && reduction_ratio != 4)
            fail("reduction_ratio", "must be 1, 2 or 4, got " + std::to_string(reduction_ratio));
        if (dilations.empty()) fail("dilations", "must not be empty");
        for (int64_t s : dilations)
            if (s < 1) fail("dilations", "every dilation must be >= 1");
        if (dim_in < 1) fail("dim_in", "must be positive");
        if (dim_out < 1) fail("dim_out", "must be positive");
        if (dim_out % static_cast<int64_t>(dilations.size()) != 0)
            fail("dim_out", std::to_string(dim_out) + " not divisible by the " +
                                std::to_string(dilations.size()) + " dilation branches");
        if (num_heads < 1 || dim_out % num_heads != 0)
            fail("num_heads", "dim_out " + std::to_string(dim_out) + " not divisible by num_heads " +
                                  std::to_string(num_heads));
        if (nb_depth < 0) fail("nb_depth", "must be non-negative");
        if (!(ffn_expansion > 0.0)) fail("ffn_expansion", "must be positive");
    }
};

// Cumulative-stride factorization of the three PCM convolutions.
inline std::array<int64_t, 3> pcm_strides(int64_t reduction) {
    switch (reduction) {
        case 4: return {2, 2, 1};
        case 2: return {2, 1, 1};
        case 1: return {1, 1, 1};
        default:
            throw std::invalid_argument("pcm: unsupported reduction ratio " + std::to_string(reduction));
    }
}

// Stacked conv -> BN -> GELU -> conv -> BN -> GELU -> conv.
template <typename T>
struct PcmParamsT {
    ConvParamsT<T> conv1, conv2, conv3;
    BatchNormParamsT<T> bn1, bn2;

    static PcmParamsT make(int64_t in_ch, int64_t out_ch, Rng& rng) {
        PcmParamsT p;
        p.conv1 = ConvParamsT<T>::make(out_ch, in_ch, 3, 3, rng);
        p.conv2 = ConvParamsT<T>::make(out_ch, out_ch, 3, 3, rng);
        p.conv3 = ConvParamsT<T>::make(out_ch, out_ch, 3, 3, rng);
        p.bn1 = BatchNormParamsT<T>::make(out_ch);
        p.bn2 = BatchNormParamsT<T>::make(out_ch);
        return p;
    }
};

template <typename T>
struct PyramidBlockParamsT {
    std::vector<ConvParamsT<T>> prm_branches;  // one conv per dilation, stride r
    PcmParamsT<T> pcm;
    LayerNormParamsT<T> ln_attn, ln_ffn;
    AttentionParamsT<T> attn;
    FfnParamsT<T> ffn;

    static PyramidBlockParamsT make(const StageConfig& cfg, Rng& rng) {
        PyramidBlockParamsT p;
        const int64_t branch_ch = cfg.dim_out / static_cast<int64_t>(cfg.dilations.size());
        for (size_t i = 0; i < cfg.dilations.size(); ++i)
            p.prm_branches.push_back(ConvParamsT<T>::make(branch_ch, cfg.dim_in, 3, 3, rng));
        p.pcm = PcmParamsT<T>::make(cfg.dim_in, cfg.dim_out, rng);
        p.ln_attn = LayerNormParamsT<T>::make(cfg.dim_out);
        p.ln_ffn = LayerNormParamsT<T>::make(cfg.dim_out);
        p.attn = AttentionParamsT<T>::make(cfg.dim_out, cfg.num_heads, rng);
        p.ffn = FfnParamsT<T>::make(cfg.dim_out, cfg.ffn_hidden(), rng);
        return p;
    }
};

template <typename T>
struct NormalBlockParamsT {
    LayerNormParamsT<T> ln_attn, ln_ffn;
    AttentionParamsT<T> attn;
    PcmParamsT<T> local;  // stride-1 stack over the spatial tokens
    FfnParamsT<T> ffn;

    static NormalBlockParamsT make(const StageConfig& cfg, Rng& rng) {
        NormalBlockParamsT p;
        p.ln_attn = LayerNormParamsT<T>::make(cfg.dim_out);
        p.ln_ffn = LayerNormParamsT<T>::make(cfg.dim_out);
        p.attn = AttentionParamsT<T>::make(cfg.dim_out, cfg.num_heads, rng);
        p.local = PcmParamsT<T>::make(cfg.dim_out, cfg.dim_out, rng);
        p.ffn = FfnParamsT<T>::make(cfg.dim_out, cfg.ffn_hidden(), rng);
        return p;
    }
};

namespace detail {

inline void check_reducible(const Shape& s, int64_t r, const char* op) {
    if (s[2] % r != 0 || s[3] % r != 0)
        throw std::invalid_argument(std::string(op) + ": spatial extents " + std::to_string(s[2]) + "x" +
                                    std::to_string(s[3]) + " not divisible by reduction " +
                                    std::to_string(r) + "; pad the input to multiples of " +
                                    std::to_string(r));
}

}  // namespace detail

// Pyramid Reduction Module: parallel stride-r convolutions, one per dilation
// rate, each emitting dim_out/|S| channels, concatenated along channels.
// Branch j uses padding dilation_j*(k-1)/2 so all branches align spatially.
template <typename T>
VarT<T> prm(FwdCtx<T>& ctx, VarT<T> h, const StageConfig& cfg, PyramidBlockParamsT<T>& params) {
    detail::opcheck(h.shape().size() == 4, "prm: input must be [B,C,H,W], got " + shape_str(h.shape()));
    detail::check_reducible(h.shape(), cfg.reduction_ratio, "prm");
    detail::opcheck(params.prm_branches.size() == cfg.dilations.size(),
                    "prm: params hold " + std::to_string(params.prm_branches.size()) +
                        " branches for " + std::to_string(cfg.dilations.size()) + " dilations");
    std::vector<VarT<T>> branches;
    for (size_t j = 0; j < cfg.dilations.size(); ++j) {
        ConvParamsT<T>& cp = params.prm_branches[j];
        const int64_t k = cp.weight.shape[2];
        const int64_t dil = cfg.dilations[j];
        Conv2d cv = Conv2d::of(cfg.reduction_ratio, dil, dil * (k - 1) / 2);
        branches.push_back(conv2d(h, ctx.param(cp.weight), ctx.param(cp.bias), cv));
    }
    return concat(branches, 1);
}

// Parallel Convolutional Module: three stacked 3x3 convolutions whose strides
// multiply to the reduction ratio, with BN + activation between them.
template <typename T>
VarT<T> pcm(FwdCtx<T>& ctx, VarT<T> h, int64_t reduction, PcmParamsT<T>& p, double bn_eps = 1e-5,
            double bn_momentum = 0.1) {
    detail::opcheck(h.shape().size() == 4, "pcm: input must be [B,C,H,W], got " + shape_str(h.shape()));
    detail::check_reducible(h.shape(), reduction, "pcm");
    const auto strides = pcm_strides(reduction);
    VarT<T> x = conv2d(h, ctx.param(p.conv1.weight), ctx.param(p.conv1.bias), Conv2d::of(strides[0], 1, 1));
    x = batch_norm(x, ctx.param(p.bn1.gamma), ctx.param(p.bn1.beta), p.bn1.running, ctx.train, bn_eps,
                   bn_momentum);
    x = gelu(x);
    x = conv2d(x, ctx.param(p.conv2.weight), ctx.param(p.conv2.bias), Conv2d::of(strides[1], 1, 1));
    x = batch_norm(x, ctx.param(p.bn2.gamma), ctx.param(p.bn2.beta), p.bn2.running, ctx.train, bn_eps,
                   bn_momentum);
    x = gelu(x);
    x = conv2d(x, ctx.param(p.conv3.weight), ctx.param(p.conv3.bias), Conv2d::of(strides[2], 1, 1));
    return x;
}

// Pyramid Block: h_ms = PRM(h); g = MHSA(LN(Img2Seq(h_ms))); fused = g +
// Img2Seq(PCM(h)); out = Seq2Img(fused + FFN(LN(fused))).
template <typename T>
VarT<T> pyramid_block(FwdCtx<T>& ctx, VarT<T> h, const StageConfig& cfg,
                      PyramidBlockParamsT<T>& params) {
    detail::opcheck(h.shape().size() == 4 && h.shape()[1] == cfg.dim_in,
                    "pyramid_block: input channels " +
                        std::to_string(h.shape().size() == 4 ? h.shape()[1] : -1) + " must equal dim_in " +
                        std::to_string(cfg.dim_in));
    VarT<T> ms = prm(ctx, h, cfg, params);
    TokenSequenceT<T> seq = img2seq(ms);
    TokenSequenceT<T> g = mhsa(ctx, layer_norm_seq(ctx, seq, params.ln_attn), params.attn);
    TokenSequenceT<T> local = img2seq(pcm(ctx, h, cfg.reduction_ratio, params.pcm));
    VarT<T> fused = add(drop_path(ctx, g.tokens), local.tokens);
    TokenSequenceT<T> fseq{fused, false, seq.spatial_hw};
    TokenSequenceT<T> f = ffn(ctx, layer_norm_seq(ctx, fseq, params.ln_ffn), params.ffn);
    TokenSequenceT<T> out{add(fused, drop_path(ctx, f.tokens)), false, seq.spatial_hw};
    return seq2img(out);
}

// Normal Block: no PRM. g = MHSA(LN(seq)); the local branch applies the
// stride-1 convolution stack to the spatial tokens only (the class token
// bypasses it, contributing zero); fused = seq + g + local; out = fused +
// FFN(LN(fused)).
template <typename T>
TokenSequenceT<T> normal_block(FwdCtx<T>& ctx, const TokenSequenceT<T>& seq, const StageConfig& cfg,
                               NormalBlockParamsT<T>& params) {
    detail::opcheck(seq.dim() == cfg.dim_out, "normal_block: sequence dim " + std::to_string(seq.dim()) +
                                                  " must equal dim_out " + std::to_string(cfg.dim_out));
    detail::opcheck(seq.spatial_hw.has_value(), "normal_block: sequence has no spatial_hw");
    TokenSequenceT<T> g = mhsa(ctx, layer_norm_seq(ctx, seq, params.ln_attn), params.attn);

    TokenSequenceT<T> sp = spatial_tokens(seq);
    VarT<T> local_map = pcm(ctx, seq2img(sp), int64_t{1}, params.local);
    VarT<T> local = img2seq(local_map).tokens;
    if (seq.has_class_token) {
        VarT<T> zero_cls = ctx.g.leaf(TensorT<T>::zeros({seq.batch(), 1, seq.dim()}), false);
        local = concat<T>({local, zero_cls}, 1);
    }

    VarT<T> fused = add(seq.tokens, add(drop_path(ctx, g.tokens), drop_path(ctx, local)));
    TokenSequenceT<T> fseq{fused, seq.has_class_token, seq.spatial_hw};
    TokenSequenceT<T> f = ffn(ctx, layer_norm_seq(ctx, fseq, params.ln_ffn), params.ffn);
    return {add(fused, drop_path(ctx, f.tokens)), seq.has_class_token, seq.spatial_hw};
}

}  // namespace pytf
