#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pytf/ops.hpp"
#include "pytf/rng.hpp"

namespace pytf {

// Per-forward context: owns the graph handle, the train/eval switch, the
// drop-path configuration, and the mapping from parameter stores to the graph
// leaves bound during this forward (used by the optimizer to read gradients).
template <typename T>
struct FwdCtx {
    GraphT<T>& g;
    bool train = false;
    bool params_require_grad = false;
    double drop_path = 0.0;  // residual-branch drop probability, train only
    Rng* rng = nullptr;
    std::vector<std::pair<TensorT<T>*, VarT<T>>> bound;

    explicit FwdCtx(GraphT<T>& graph) : g(graph) {}

    // Learnable parameter: bound so the training loop can read its gradient.
    VarT<T> param(TensorT<T>& t) {
        VarT<T> v = g.leaf(t, params_require_grad);
        if (params_require_grad) bound.emplace_back(&t, v);
        return v;
    }

    // Non-learnable state (fixed class tokens): never differentiated.
    VarT<T> fixed(const TensorT<T>& t) { return g.leaf(t, false); }

    VarT<T> input(TensorT<T> t, bool requires_grad = false) { return g.leaf(std::move(t), requires_grad); }
};

using FwdCtxF = FwdCtx<float>;
using FwdCtxD = FwdCtx<double>;

// Stochastic depth: per-sample Bernoulli keep mask scaled by 1/keep, applied
// to a residual branch [B, ...]. Identity when not training.
template <typename T>
VarT<T> drop_path(FwdCtx<T>& ctx, VarT<T> branch) {
    if (!ctx.train || ctx.drop_path <= 0.0) return branch;
    if (ctx.rng == nullptr)
        throw std::invalid_argument("drop_path: training forward needs an RNG stream");
    const int64_t b = branch.shape()[0];
    Shape ms(branch.shape().size(), 1);
    ms[0] = b;
    TensorT<T> mask(ms);
    const T keep = static_cast<T>(1.0 - ctx.drop_path);
    for (int64_t i = 0; i < b; ++i)
        mask[i] = ctx.rng->uniform() < static_cast<double>(keep) ? T(1) / keep : T(0);
    return mul(branch, ctx.g.leaf(std::move(mask), false));
}

// ---------------------------------------------------------------------------
// Parameter bundles
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormParamsT {
    TensorT<T> gamma, beta;
    static LayerNormParamsT make(int64_t dim) {
        return {TensorT<T>::ones({dim}), TensorT<T>::zeros({dim})};
    }
};

template <typename T>
struct BatchNormParamsT {
    TensorT<T> gamma, beta;
    BnStats<T> running;
    static BatchNormParamsT make(int64_t channels) {
        return {TensorT<T>::ones({channels}), TensorT<T>::zeros({channels}), BnStats<T>(channels)};
    }
};

template <typename T>
struct ConvParamsT {
    TensorT<T> weight;  // [K, C, kh, kw]
    TensorT<T> bias;    // [K]
    static ConvParamsT make(int64_t out_ch, int64_t in_ch, int64_t kh, int64_t kw, Rng& rng) {
        ConvParamsT p{TensorT<T>({out_ch, in_ch, kh, kw}), TensorT<T>::zeros({out_ch})};
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * kh * kw));
        for (auto& v : p.weight.data) v = static_cast<T>(rng.normal(0.0, stddev));
        return p;
    }
};

template <typename T>
struct AttentionParamsT {
    int64_t num_heads = 1;
    TensorT<T> wq, wk, wv, wo;  // [D, D]
    TensorT<T> bq, bk, bv, bo;  // [D]
    static AttentionParamsT make(int64_t dim, int64_t num_heads, Rng& rng) {
        AttentionParamsT p;
        p.num_heads = num_heads;
        for (TensorT<T>* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
            *w = TensorT<T>({dim, dim});
            for (auto& v : w->data) v = static_cast<T>(rng.trunc_normal(0.0, 0.02));
        }
        for (TensorT<T>* b : {&p.bq, &p.bk, &p.bv, &p.bo}) *b = TensorT<T>::zeros({dim});
        return p;
    }
};

template <typename T>
struct FfnParamsT {
    TensorT<T> w1, b1;  // [D, E], [E]
    TensorT<T> w2, b2;  // [E, D], [D]
    static FfnParamsT make(int64_t dim, int64_t hidden, Rng& rng) {
        FfnParamsT p;
        p.w1 = TensorT<T>({dim, hidden});
        p.w2 = TensorT<T>({hidden, dim});
        for (auto& v : p.w1.data) v = static_cast<T>(rng.trunc_normal(0.0, 0.02));
        for (auto& v : p.w2.data) v = static_cast<T>(rng.trunc_normal(0.0, 0.02));
        p.b1 = TensorT<T>::zeros({hidden});
        p.b2 = TensorT<T>::zeros({dim});
        return p;
    }
};

}  // namespace pytf
