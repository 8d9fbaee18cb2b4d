#pragma once

#include <optional>
#include <utility>

#include "pytf/module.hpp"

namespace pytf {

// Token sequence [B, L, D]. When a class token is present it occupies the
// LAST position (x_0 = [patch tokens || class token]); spatial_hw describes
// the grid the spatial tokens were flattened from.
template <typename T>
struct TokenSequenceT {
    VarT<T> tokens;
    bool has_class_token = false;
    std::optional<std::pair<int64_t, int64_t>> spatial_hw;

    int64_t batch() const { return tokens.shape()[0]; }
    int64_t length() const { return tokens.shape()[1]; }
    int64_t dim() const { return tokens.shape()[2]; }
    int64_t spatial_length() const { return length() - (has_class_token ? 1 : 0); }
};

using TokenSequence = TokenSequenceT<float>;

// [B, D, H, W] -> tokens [B, H*W, D] with token y*W + x = feature_map[:, :, y, x].
template <typename T>
TokenSequenceT<T> img2seq(VarT<T> feature_map) {
    const Shape& s = feature_map.shape();
    detail::opcheck(s.size() == 4, "img2seq: input must be [B,D,H,W], got " + shape_str(s));
    const int64_t b = s[0], d = s[1], h = s[2], w = s[3];
    VarT<T> t = reshape(permute(feature_map, {0, 2, 3, 1}), {b, h * w, d});
    return {t, false, std::make_pair(h, w)};
}

// Inverse of img2seq on the spatial tokens; a class token, if present, is
// stripped before reshaping.
template <typename T>
VarT<T> seq2img(const TokenSequenceT<T>& seq) {
    detail::opcheck(seq.spatial_hw.has_value(), "seq2img: sequence has no spatial_hw");
    const auto [h, w] = *seq.spatial_hw;
    detail::opcheck(h * w == seq.spatial_length(),
                    "seq2img: grid " + std::to_string(h) + "x" + std::to_string(w) +
                        " does not match spatial length " + std::to_string(seq.spatial_length()));
    VarT<T> t = seq.tokens;
    if (seq.has_class_token) t = narrow(t, 1, 0, seq.spatial_length());
    return permute(reshape(t, {seq.batch(), h, w, seq.dim()}), {0, 3, 1, 2});
}

// Spatial part of a sequence (class token dropped, metadata preserved).
template <typename T>
TokenSequenceT<T> spatial_tokens(const TokenSequenceT<T>& seq) {
    if (!seq.has_class_token) return seq;
    return {narrow(seq.tokens, 1, 0, seq.spatial_length()), false, seq.spatial_hw};
}

// Learnable absolute positional table over a nominal grid, with the class
// slot stored last; bilinearly resized over the spatial grid on mismatch.
template <typename T>
struct PositionalEmbeddingT {
    TensorT<T> table;  // [1, grid_h*grid_w + 1, D]
    int64_t grid_h = 0, grid_w = 0;

    static PositionalEmbeddingT make(int64_t grid_h, int64_t grid_w, int64_t dim, Rng& rng) {
        PositionalEmbeddingT p;
        p.grid_h = grid_h;
        p.grid_w = grid_w;
        p.table = TensorT<T>({1, grid_h * grid_w + 1, dim});
        for (auto& v : p.table.data) v = static_cast<T>(rng.trunc_normal(0.0, 0.02));
        return p;
    }
};

// x_0 = [x_patch || x_cls] + x_pos. The class token is broadcast over the
// batch; the positional table is interpolated over the spatial grid when the
// sequence grid differs from the table's nominal grid (class slot unchanged).
template <typename T>
TokenSequenceT<T> attach_class_and_pos(FwdCtx<T>& ctx, const TokenSequenceT<T>& seq,
                                       const TensorT<T>& cls, PositionalEmbeddingT<T>& pos) {
    detail::opcheck(!seq.has_class_token, "attach_class_and_pos: sequence already has a class token");
    detail::opcheck(seq.spatial_hw.has_value(), "attach_class_and_pos: sequence has no spatial_hw");
    const int64_t b = seq.batch(), d = seq.dim();
    detail::opcheck(cls.shape == Shape({1, 1, d}), "attach_class_and_pos: class token shape " +
                                                       shape_str(cls.shape) + " must be [1,1," +
                                                       std::to_string(d) + "]");
    detail::opcheck(pos.table.shape == Shape({1, pos.grid_h * pos.grid_w + 1, d}),
                    "attach_class_and_pos: positional table shape " + shape_str(pos.table.shape) +
                        " does not match its grid/dim");

    // Broadcast the fixed class token over the batch.
    VarT<T> cls_var = ctx.fixed(cls);
    VarT<T> cls_b = add(cls_var, ctx.g.leaf(TensorT<T>::zeros({b, 1, d}), false));
    VarT<T> tokens = concat<T>({seq.tokens, cls_b}, 1);

    const auto [h, w] = *seq.spatial_hw;
    VarT<T> table = ctx.param(pos.table);
    VarT<T> ptab;
    if (h == pos.grid_h && w == pos.grid_w) {
        ptab = table;
    } else {
        VarT<T> sp = reshape(narrow(table, 1, 0, pos.grid_h * pos.grid_w), {pos.grid_h, pos.grid_w, d});
        VarT<T> rs = reshape(bilinear_resize_hw(sp, h, w), {1, h * w, d});
        VarT<T> cslot = narrow(table, 1, pos.grid_h * pos.grid_w, 1);
        ptab = concat<T>({rs, cslot}, 1);
    }
    return {add(tokens, ptab), true, seq.spatial_hw};
}

// ---------------------------------------------------------------------------
// Attention / FFN / encoder block
// ---------------------------------------------------------------------------

// Scaled dot-product multi-head self-attention (the MHSA term only; residual
// and layer norm live in the enclosing block).
template <typename T>
TokenSequenceT<T> mhsa(FwdCtx<T>& ctx, const TokenSequenceT<T>& seq, AttentionParamsT<T>& p) {
    const int64_t b = seq.batch(), l = seq.length(), d = seq.dim();
    const int64_t heads = p.num_heads;
    detail::opcheck(heads >= 1 && d % heads == 0, "mhsa: dim " + std::to_string(d) +
                                                      " not divisible by num_heads " +
                                                      std::to_string(heads));
    detail::opcheck(p.wq.shape == Shape({d, d}), "mhsa: projection shape " + shape_str(p.wq.shape) +
                                                     " must be [" + std::to_string(d) + "," +
                                                     std::to_string(d) + "]");
    const int64_t hd = d / heads;

    auto split_heads = [&](VarT<T> x) {
        return permute(reshape(x, {b, l, heads, hd}), {0, 2, 1, 3});  // [B, H, L, hd]
    };
    VarT<T> q = split_heads(linear(seq.tokens, ctx.param(p.wq), ctx.param(p.bq)));
    VarT<T> k = split_heads(linear(seq.tokens, ctx.param(p.wk), ctx.param(p.bk)));
    VarT<T> v = split_heads(linear(seq.tokens, ctx.param(p.wv), ctx.param(p.bv)));

    VarT<T> scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
    VarT<T> attn = softmax(scores, -1);
    VarT<T> ctxv = matmul(attn, v);  // [B, H, L, hd]
    VarT<T> merged = reshape(permute(ctxv, {0, 2, 1, 3}), {b, l, d});
    VarT<T> out = linear(merged, ctx.param(p.wo), ctx.param(p.bo));
    return {out, seq.has_class_token, seq.spatial_hw};
}

// Token-wise two-layer MLP with GELU.
template <typename T>
TokenSequenceT<T> ffn(FwdCtx<T>& ctx, const TokenSequenceT<T>& seq, FfnParamsT<T>& p) {
    const int64_t d = seq.dim();
    detail::opcheck(p.w1.rank() == 2 && p.w1.shape[0] == d,
                    "ffn: w1 shape " + shape_str(p.w1.shape) + " must start at dim " + std::to_string(d));
    detail::opcheck(p.w2.rank() == 2 && p.w2.shape[0] == p.w1.shape[1] && p.w2.shape[1] == d,
                    "ffn: w2 shape " + shape_str(p.w2.shape) + " must map hidden " +
                        std::to_string(p.w1.shape[1]) + " back to dim " + std::to_string(d));
    VarT<T> h = gelu(linear(seq.tokens, ctx.param(p.w1), ctx.param(p.b1)));
    VarT<T> out = linear(h, ctx.param(p.w2), ctx.param(p.b2));
    return {out, seq.has_class_token, seq.spatial_hw};
}

template <typename T>
TokenSequenceT<T> layer_norm_seq(FwdCtx<T>& ctx, const TokenSequenceT<T>& seq, LayerNormParamsT<T>& p,
                                 double eps = 1e-6) {
    return {layer_norm(seq.tokens, ctx.param(p.gamma), ctx.param(p.beta), eps), seq.has_class_token,
            seq.spatial_hw};
}

template <typename T>
struct VitBlockParamsT {
    LayerNormParamsT<T> ln_attn, ln_ffn;
    AttentionParamsT<T> attn;
    FfnParamsT<T> ffn;
    static VitBlockParamsT make(int64_t dim, int64_t heads, int64_t hidden, Rng& rng) {
        return {LayerNormParamsT<T>::make(dim), LayerNormParamsT<T>::make(dim),
                AttentionParamsT<T>::make(dim, heads, rng), FfnParamsT<T>::make(dim, hidden, rng)};
    }
};

// Pre-norm encoder block: y = x + MHSA(LN(x)); out = y + FFN(LN(y)).
template <typename T>
TokenSequenceT<T> vit_block(FwdCtx<T>& ctx, const TokenSequenceT<T>& seq, VitBlockParamsT<T>& p) {
    TokenSequenceT<T> attn_out = mhsa(ctx, layer_norm_seq(ctx, seq, p.ln_attn), p.attn);
    VarT<T> y = add(seq.tokens, drop_path(ctx, attn_out.tokens));
    TokenSequenceT<T> yseq{y, seq.has_class_token, seq.spatial_hw};
    TokenSequenceT<T> ffn_out = ffn(ctx, layer_norm_seq(ctx, yseq, p.ln_ffn), p.ffn);
    return {add(y, drop_path(ctx, ffn_out.tokens)), seq.has_class_token, seq.spatial_hw};
}

}  // namespace pytf
