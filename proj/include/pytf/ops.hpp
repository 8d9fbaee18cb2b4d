#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pytf/graph.hpp"
#include "pytf/tensor.hpp"

namespace pytf {

namespace detail {

inline void opcheck(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

inline int normalize_axis(int axis, int rank, const char* op) {
    int a = axis < 0 ? axis + rank : axis;
    opcheck(a >= 0 && a < rank, std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for rank " + std::to_string(rank));
    return a;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw std::invalid_argument(std::string(op) + ": incompatible extents " + std::to_string(ea) +
                                        " vs " + std::to_string(eb) + " at axis " + std::to_string(i) +
                                        " (shapes " + shape_str(a) + ", " + shape_str(b) + ")");
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Strides of `in` aligned to the (broadcast) `out` shape; 0 on broadcast axes.
inline Shape bcast_strides(const Shape& in, const Shape& out) {
    Shape st(out.size(), 0);
    Shape own = row_major_strides(in);
    size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        if (in[i] != 1) st[off + i] = own[i];
    return st;
}

// Visits every output element of a two-input broadcast, yielding the flat
// output index plus both input offsets.
template <typename F>
void for_each_broadcast2(const Shape& out, const Shape& a, const Shape& b, F&& fn) {
    const int rank = static_cast<int>(out.size());
    const int64_t n = shape_numel(out);
    if (rank == 0) {
        fn(int64_t(0), int64_t(0), int64_t(0));
        return;
    }
    Shape sa = bcast_strides(a, out);
    Shape sb = bcast_strides(b, out);
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, oa, ob);
        for (int ax = rank - 1; ax >= 0; --ax) {
            ++idx[static_cast<size_t>(ax)];
            oa += sa[static_cast<size_t>(ax)];
            ob += sb[static_cast<size_t>(ax)];
            if (idx[static_cast<size_t>(ax)] < out[static_cast<size_t>(ax)]) break;
            oa -= sa[static_cast<size_t>(ax)] * out[static_cast<size_t>(ax)];
            ob -= sb[static_cast<size_t>(ax)] * out[static_cast<size_t>(ax)];
            idx[static_cast<size_t>(ax)] = 0;
        }
    }
}

// Lanes along `axis`: calls fn(base_offset, stride, len) once per lane.
template <typename F>
void for_each_lane(const Shape& s, int axis, F&& fn) {
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    const int64_t len = s[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) fn(o * len * inner + in, inner, len);
}

// C[M,P] += A[M,K] * B[K,P]
template <typename T>
void gemm_acc_nn(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t p) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * p;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            const T* brow = b + kk * p;
            for (int64_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_acc_nt(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t k) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

// C[K,P] += A[M,K]^T * B[M,P]
template <typename T>
void gemm_acc_tn(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t p) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * p;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            T* crow = c + kk * p;
            for (int64_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
}

template <typename T>
TensorT<T> permute_copy(const TensorT<T>& in, const std::vector<int>& axes) {
    const int rank = in.rank();
    Shape oshape(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) oshape[static_cast<size_t>(i)] = in.shape[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    TensorT<T> out(oshape);
    Shape istrides = row_major_strides(in.shape);
    Shape pstrides(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) pstrides[static_cast<size_t>(i)] = istrides[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    int64_t src = 0;
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        out[i] = in[src];
        for (int ax = rank - 1; ax >= 0; --ax) {
            ++idx[static_cast<size_t>(ax)];
            src += pstrides[static_cast<size_t>(ax)];
            if (idx[static_cast<size_t>(ax)] < oshape[static_cast<size_t>(ax)]) break;
            src -= pstrides[static_cast<size_t>(ax)] * oshape[static_cast<size_t>(ax)];
            idx[static_cast<size_t>(ax)] = 0;
        }
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / broadcast ops
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> add(VarT<T> a, VarT<T> b) {
    GraphT<T>& g = *a.graph;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const TensorT<T>& av = a.value();
    const TensorT<T>& bv = b.value();
    if (sa == sb) {
        TensorT<T> out(sa);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
        return g.make(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, oi = static_cast<int32_t>(g.num_nodes())](GraphT<T>& gg) {
            const TensorT<T>& go = *gg.grad_buf(oi);
            if (auto* ga = gg.grad_buf(ai))
                for (int64_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i];
            if (auto* gb = gg.grad_buf(bi))
                for (int64_t i = 0; i < go.numel(); ++i) (*gb)[i] += go[i];
        });
    }
    Shape os = detail::broadcast_shape(sa, sb, "add");
    TensorT<T> out(os);
    detail::for_each_broadcast2(os, sa, sb,
                                [&](int64_t i, int64_t ia, int64_t ib) { out[i] = av[ia] + bv[ib]; });
    return g.make(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id, oi = static_cast<int32_t>(g.num_nodes()), os, sa, sb](GraphT<T>& gg) {
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      TensorT<T>* ga = gg.grad_buf(ai);
                      TensorT<T>* gb = gg.grad_buf(bi);
                      detail::for_each_broadcast2(os, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
                          if (ga) (*ga)[ia] += go[i];
                          if (gb) (*gb)[ib] += go[i];
                      });
                  });
}

template <typename T>
VarT<T> mul(VarT<T> a, VarT<T> b) {
    GraphT<T>& g = *a.graph;
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    Shape os = sa == sb ? sa : detail::broadcast_shape(sa, sb, "mul");
    const TensorT<T>& av = a.value();
    const TensorT<T>& bv = b.value();
    TensorT<T> out(os);
    if (sa == sb) {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    } else {
        detail::for_each_broadcast2(os, sa, sb,
                                    [&](int64_t i, int64_t ia, int64_t ib) { out[i] = av[ia] * bv[ib]; });
    }
    return g.make(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id, oi = static_cast<int32_t>(g.num_nodes()), os, sa, sb](GraphT<T>& gg) {
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      const TensorT<T>& av2 = gg.val(ai);
                      const TensorT<T>& bv2 = gg.val(bi);
                      TensorT<T>* ga = gg.grad_buf(ai);
                      TensorT<T>* gb = gg.grad_buf(bi);
                      detail::for_each_broadcast2(os, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
                          if (ga) (*ga)[ia] += go[i] * bv2[ib];
                          if (gb) (*gb)[ib] += go[i] * av2[ia];
                      });
                  });
}

template <typename T>
VarT<T> scale(VarT<T> a, double c) {
    GraphT<T>& g = *a.graph;
    const TensorT<T>& av = a.value();
    TensorT<T> out(av.shape);
    const T cc = static_cast<T>(c);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * cc;
    return g.make(std::move(out), {a.id}, [ai = a.id, oi = static_cast<int32_t>(g.num_nodes()), cc](GraphT<T>& gg) {
        const TensorT<T>& go = *gg.grad_buf(oi);
        if (auto* ga = gg.grad_buf(ai))
            for (int64_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * cc;
    });
}

template <typename T>
VarT<T> sub(VarT<T> a, VarT<T> b) {
    return add(a, scale(b, -1.0));
}

// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename T>
VarT<T> gelu(VarT<T> a) {
    GraphT<T>& g = *a.graph;
    const TensorT<T>& av = a.value();
    TensorT<T> out(av.shape);
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x = static_cast<double>(av[i]);
        out[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    return g.make(std::move(out), {a.id}, [ai = a.id, oi = static_cast<int32_t>(g.num_nodes())](GraphT<T>& gg) {
        auto* ga = gg.grad_buf(ai);
        if (!ga) return;
        const TensorT<T>& go = *gg.grad_buf(oi);
        const TensorT<T>& x = gg.val(ai);
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (int64_t i = 0; i < go.numel(); ++i) {
            double xv = static_cast<double>(x[i]);
            double phi = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
            double dens = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
            (*ga)[i] += go[i] * static_cast<T>(phi + xv * dens);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> reshape(VarT<T> a, Shape s) {
    GraphT<T>& g = *a.graph;
    detail::opcheck(shape_numel(s) == a.value().numel(),
                    "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    TensorT<T> out(std::move(s), a.value().data);
    return g.make(std::move(out), {a.id}, [ai = a.id, oi = static_cast<int32_t>(g.num_nodes())](GraphT<T>& gg) {
        if (auto* ga = gg.grad_buf(ai)) {
            const TensorT<T>& go = *gg.grad_buf(oi);
            for (int64_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i];
        }
    });
}

template <typename T>
VarT<T> permute(VarT<T> a, std::vector<int> axes) {
    GraphT<T>& g = *a.graph;
    const int rank = a.value().rank();
    detail::opcheck(static_cast<int>(axes.size()) == rank, "permute: axes size does not match rank");
    std::vector<char> seen(static_cast<size_t>(rank), 0);
    for (int ax : axes) {
        detail::opcheck(ax >= 0 && ax < rank && !seen[static_cast<size_t>(ax)], "permute: invalid axis permutation");
        seen[static_cast<size_t>(ax)] = 1;
    }
    TensorT<T> out = detail::permute_copy(a.value(), axes);
    std::vector<int> inv(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inv[static_cast<size_t>(axes[i])] = static_cast<int>(i);
    return g.make(std::move(out), {a.id},
                  [ai = a.id, oi = static_cast<int32_t>(g.num_nodes()), inv](GraphT<T>& gg) {
                      if (auto* ga = gg.grad_buf(ai)) {
                          TensorT<T> tmp = detail::permute_copy(*gg.grad_buf(oi), inv);
                          for (int64_t i = 0; i < tmp.numel(); ++i) (*ga)[i] += tmp[i];
                      }
                  });
}

template <typename T>
VarT<T> transpose_last2(VarT<T> a) {
    const int rank = a.value().rank();
    detail::opcheck(rank >= 2, "transpose_last2: rank must be at least 2");
    std::vector<int> axes(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) axes[static_cast<size_t>(i)] = i;
    std::swap(axes[static_cast<size_t>(rank - 2)], axes[static_cast<size_t>(rank - 1)]);
    return permute(a, axes);
}

template <typename T>
VarT<T> narrow(VarT<T> a, int axis, int64_t start, int64_t len) {
    GraphT<T>& g = *a.graph;
    const Shape& s = a.shape();
    const int ax = detail::normalize_axis(axis, a.value().rank(), "narrow");
    detail::opcheck(start >= 0 && len >= 1 && start + len <= s[static_cast<size_t>(ax)],
                    "narrow: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                        ") exceeds extent " + std::to_string(s[static_cast<size_t>(ax)]) + " on axis " +
                        std::to_string(ax));
    Shape os = s;
    os[static_cast<size_t>(ax)] = len;
    int64_t inner = 1;
    for (size_t i = static_cast<size_t>(ax) + 1; i < s.size(); ++i) inner *= s[i];
    int64_t outer = 1;
    for (int i = 0; i < ax; ++i) outer *= s[static_cast<size_t>(i)];
    const int64_t in_len = s[static_cast<size_t>(ax)];
    const TensorT<T>& av = a.value();
    TensorT<T> out(os);
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.ptr() + o * len * inner, av.ptr() + (o * in_len + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(T));
    return g.make(std::move(out), {a.id},
                  [ai = a.id, oi = static_cast<int32_t>(g.num_nodes()), outer, inner, in_len, start, len](GraphT<T>& gg) {
                      if (auto* ga = gg.grad_buf(ai)) {
                          const TensorT<T>& go = *gg.grad_buf(oi);
                          for (int64_t o = 0; o < outer; ++o) {
                              T* dst = ga->ptr() + (o * in_len + start) * inner;
                              const T* src = go.ptr() + o * len * inner;
                              for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                          }
                      }
                  });
}

template <typename T>
VarT<T> concat(const std::vector<VarT<T>>& parts, int axis) {
    detail::opcheck(!parts.empty(), "concat: needs at least one input");
    GraphT<T>& g = *parts[0].graph;
    const int rank = parts[0].value().rank();
    const int ax = detail::normalize_axis(axis, rank, "concat");
    int64_t cat_len = 0;
    for (const auto& p : parts) {
        detail::opcheck(p.graph == &g, "concat: inputs belong to different graphs");
        detail::opcheck(p.value().rank() == rank, "concat: rank mismatch");
        for (int i = 0; i < rank; ++i) {
            if (i == ax) continue;
            detail::opcheck(p.shape()[static_cast<size_t>(i)] == parts[0].shape()[static_cast<size_t>(i)],
                            "concat: extent mismatch on axis " + std::to_string(i) + " (" +
                                shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()) + ")");
        }
        cat_len += p.shape()[static_cast<size_t>(ax)];
    }
    Shape os = parts[0].shape();
    os[static_cast<size_t>(ax)] = cat_len;
    int64_t inner = 1;
    for (size_t i = static_cast<size_t>(ax) + 1; i < os.size(); ++i) inner *= os[i];
    int64_t outer = 1;
    for (int i = 0; i < ax; ++i) outer *= os[static_cast<size_t>(i)];

    TensorT<T> out(os);
    std::vector<int32_t> ids;
    std::vector<int64_t> lens;
    for (const auto& p : parts) {
        ids.push_back(p.id);
        lens.push_back(p.shape()[static_cast<size_t>(ax)]);
    }
    for (int64_t o = 0; o < outer; ++o) {
        int64_t at = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const int64_t plen = lens[pi];
            std::memcpy(out.ptr() + (o * cat_len + at) * inner,
                        parts[pi].value().ptr() + o * plen * inner,
                        static_cast<size_t>(plen * inner) * sizeof(T));
            at += plen;
        }
    }
    return g.make(std::move(out), ids,
                  [ids, lens, oi = static_cast<int32_t>(g.num_nodes()), outer, inner, cat_len](GraphT<T>& gg) {
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      for (int64_t o = 0; o < outer; ++o) {
                          int64_t at = 0;
                          for (size_t pi = 0; pi < ids.size(); ++pi) {
                              const int64_t plen = lens[pi];
                              if (auto* ga = gg.grad_buf(ids[pi])) {
                                  T* dst = ga->ptr() + o * plen * inner;
                                  const T* src = go.ptr() + (o * cat_len + at) * inner;
                                  for (int64_t i = 0; i < plen * inner; ++i) dst[i] += src[i];
                              }
                              at += plen;
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> sum_all(VarT<T> a) {
    GraphT<T>& g = *a.graph;
    const TensorT<T>& av = a.value();
    T acc = T(0);
    for (int64_t i = 0; i < av.numel(); ++i) acc += av[i];
    return g.make(TensorT<T>::scalar(acc), {a.id},
                  [ai = a.id, oi = static_cast<int32_t>(g.num_nodes())](GraphT<T>& gg) {
                      if (auto* ga = gg.grad_buf(ai)) {
                          const T s = (*gg.grad_buf(oi))[0];
                          for (int64_t i = 0; i < ga->numel(); ++i) (*ga)[i] += s;
                      }
                  });
}

template <typename T>
VarT<T> mean_all(VarT<T> a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.value().numel()));
}

// ---------------------------------------------------------------------------
// Matmul (batched, leading dims broadcast)
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> matmul(VarT<T> a, VarT<T> b) {
    GraphT<T>& g = *a.graph;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    detail::opcheck(sa.size() >= 2 && sb.size() >= 2, "matmul: both inputs must have rank >= 2");
    const int64_t m = sa[sa.size() - 2];
    const int64_t k = sa[sa.size() - 1];
    const int64_t k2 = sb[sb.size() - 2];
    const int64_t p = sb[sb.size() - 1];
    detail::opcheck(k == k2, "matmul: inner extents mismatch (" + std::to_string(k) + " vs " +
                                 std::to_string(k2) + ") for " + shape_str(sa) + " x " + shape_str(sb));

    Shape abatch(sa.begin(), sa.end() - 2);
    Shape bbatch(sb.begin(), sb.end() - 2);
    Shape obatch = detail::broadcast_shape(abatch, bbatch, "matmul");
    const int64_t nb = shape_numel(obatch);

    std::vector<int64_t> aoff(static_cast<size_t>(nb)), boff(static_cast<size_t>(nb));
    detail::for_each_broadcast2(obatch, abatch, bbatch, [&](int64_t i, int64_t ia, int64_t ib) {
        aoff[static_cast<size_t>(i)] = ia;
        boff[static_cast<size_t>(i)] = ib;
    });

    Shape os = obatch;
    os.push_back(m);
    os.push_back(p);
    TensorT<T> out(os);
    const T* ap = a.value().ptr();
    const T* bp = b.value().ptr();
    for (int64_t i = 0; i < nb; ++i)
        detail::gemm_acc_nn(out.ptr() + i * m * p, ap + aoff[static_cast<size_t>(i)] * m * k,
                            bp + boff[static_cast<size_t>(i)] * k * p, m, k, p);

    return g.make(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id, oi = static_cast<int32_t>(g.num_nodes()), aoff, boff, m, k, p,
                   nb](GraphT<T>& gg) {
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      TensorT<T>* ga = gg.grad_buf(ai);
                      TensorT<T>* gb = gg.grad_buf(bi);
                      const T* av = gg.val(ai).ptr();
                      const T* bv = gg.val(bi).ptr();
                      for (int64_t i = 0; i < nb; ++i) {
                          const T* gslab = go.ptr() + i * m * p;
                          if (ga)
                              detail::gemm_acc_nt(ga->ptr() + aoff[static_cast<size_t>(i)] * m * k, gslab,
                                                  bv + boff[static_cast<size_t>(i)] * k * p, m, k, p);
                          if (gb)
                              detail::gemm_acc_tn(gb->ptr() + boff[static_cast<size_t>(i)] * k * p,
                                                  av + aoff[static_cast<size_t>(i)] * m * k, gslab, m, k, p);
                      }
                  });
}

// x: [..., Din] @ w: [Din, Dout] (+ bias [Dout])
template <typename T>
VarT<T> linear(VarT<T> x, VarT<T> w, std::optional<VarT<T>> bias = std::nullopt) {
    // copies: node creation below may reallocate the graph's node storage
    const Shape sx = x.shape();
    const Shape sw = w.shape();
    detail::opcheck(sw.size() == 2, "linear: weight must be rank 2, got " + shape_str(sw));
    detail::opcheck(!sx.empty() && sx.back() == sw[0],
                    "linear: input feature extent " + std::to_string(sx.empty() ? 0 : sx.back()) +
                        " does not match weight input extent " + std::to_string(sw[0]));
    if (bias)
        detail::opcheck(bias->shape() == Shape{sw[1]},
                        "linear: bias shape " + shape_str(bias->shape()) + " must be [" +
                            std::to_string(sw[1]) + "]");
    const int64_t din = sw[0];
    const int64_t flat = x.value().numel() / din;
    VarT<T> h = matmul(reshape(x, {flat, din}), w);
    if (bias) h = add(h, *bias);
    Shape os(sx.begin(), sx.end() - 1);
    os.push_back(sw[1]);
    return reshape(h, os);
}

template <typename T>
VarT<T> linear(VarT<T> x, VarT<T> w, VarT<T> bias) {
    return linear(x, w, std::optional<VarT<T>>(bias));
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> softmax(VarT<T> a, int axis) {
    GraphT<T>& g = *a.graph;
    const TensorT<T>& av = a.value();
    const int ax = detail::normalize_axis(axis, av.rank(), "softmax");
    detail::opcheck(av.all_finite(), "softmax: non-finite input");
    TensorT<T> out(av.shape);
    detail::for_each_lane(av.shape, ax, [&](int64_t base, int64_t stride, int64_t len) {
        T mx = av[base];
        for (int64_t i = 1; i < len; ++i) mx = std::max(mx, av[base + i * stride]);
        T sum = T(0);
        for (int64_t i = 0; i < len; ++i) {
            T e = std::exp(av[base + i * stride] - mx);
            out[base + i * stride] = e;
            sum += e;
        }
        const T inv = T(1) / sum;
        for (int64_t i = 0; i < len; ++i) out[base + i * stride] *= inv;
    });
    return g.make(std::move(out), {a.id},
                  [ai = a.id, oi = static_cast<int32_t>(g.num_nodes()), ax](GraphT<T>& gg) {
                      auto* ga = gg.grad_buf(ai);
                      if (!ga) return;
                      const TensorT<T>& y = gg.val(oi);
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      detail::for_each_lane(y.shape, ax, [&](int64_t base, int64_t stride, int64_t len) {
                          T dot = T(0);
                          for (int64_t i = 0; i < len; ++i) dot += go[base + i * stride] * y[base + i * stride];
                          for (int64_t i = 0; i < len; ++i) {
                              const int64_t at = base + i * stride;
                              (*ga)[at] += y[at] * (go[at] - dot);
                          }
                      });
                  });
}

template <typename T>
VarT<T> log_softmax(VarT<T> a, int axis) {
    GraphT<T>& g = *a.graph;
    const TensorT<T>& av = a.value();
    const int ax = detail::normalize_axis(axis, av.rank(), "log_softmax");
    detail::opcheck(av.all_finite(), "log_softmax: non-finite input");
    TensorT<T> out(av.shape);
    detail::for_each_lane(av.shape, ax, [&](int64_t base, int64_t stride, int64_t len) {
        T mx = av[base];
        for (int64_t i = 1; i < len; ++i) mx = std::max(mx, av[base + i * stride]);
        T sum = T(0);
        for (int64_t i = 0; i < len; ++i) sum += std::exp(av[base + i * stride] - mx);
        const T lse = mx + std::log(sum);
        for (int64_t i = 0; i < len; ++i) out[base + i * stride] = av[base + i * stride] - lse;
    });
    return g.make(std::move(out), {a.id},
                  [ai = a.id, oi = static_cast<int32_t>(g.num_nodes()), ax](GraphT<T>& gg) {
                      auto* ga = gg.grad_buf(ai);
                      if (!ga) return;
                      const TensorT<T>& y = gg.val(oi);
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      detail::for_each_lane(y.shape, ax, [&](int64_t base, int64_t stride, int64_t len) {
                          T s = T(0);
                          for (int64_t i = 0; i < len; ++i) s += go[base + i * stride];
                          for (int64_t i = 0; i < len; ++i) {
                              const int64_t at = base + i * stride;
                              (*ga)[at] += go[at] - std::exp(y[at]) * s;
                          }
                      });
                  });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> layer_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, double eps = 1e-6) {
    GraphT<T>& g = *x.graph;
    detail::opcheck(eps > 0.0, "layer_norm: eps must be positive");
    const TensorT<T>& xv = x.value();
    detail::opcheck(xv.rank() >= 1, "layer_norm: input must have rank >= 1");
    const int64_t d = xv.shape.back();
    detail::opcheck(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
                    "layer_norm: gamma/beta shapes " + shape_str(gamma.shape()) + "/" +
                        shape_str(beta.shape()) + " must be [" + std::to_string(d) + "]");
    const int64_t rows = xv.numel() / d;
    const TensorT<T>& gv = gamma.value();
    const TensorT<T>& bv = beta.value();

    TensorT<T> out(xv.shape);
    auto xhat = std::make_shared<TensorT<T>>(xv.shape);
    auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv.ptr() + r * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T iv = T(1) / std::sqrt(var + static_cast<T>(eps));
        (*inv)[static_cast<size_t>(r)] = iv;
        T* hrow = xhat->ptr() + r * d;
        T* orow = out.ptr() + r * d;
        for (int64_t j = 0; j < d; ++j) {
            hrow[j] = (row[j] - mean) * iv;
            orow[j] = gv[j] * hrow[j] + bv[j];
        }
    }
    return g.make(std::move(out), {x.id, gamma.id, beta.id},
                  [xi = x.id, gi = gamma.id, bi = beta.id, oi = static_cast<int32_t>(g.num_nodes()), xhat,
                   inv, rows, d](GraphT<T>& gg) {
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      const TensorT<T>& gv2 = gg.val(gi);
                      TensorT<T>* gx = gg.grad_buf(xi);
                      TensorT<T>* ggm = gg.grad_buf(gi);
                      TensorT<T>* gbt = gg.grad_buf(bi);
                      for (int64_t r = 0; r < rows; ++r) {
                          const T* grow = go.ptr() + r * d;
                          const T* hrow = xhat->ptr() + r * d;
                          if (ggm)
                              for (int64_t j = 0; j < d; ++j) (*ggm)[j] += grow[j] * hrow[j];
                          if (gbt)
                              for (int64_t j = 0; j < d; ++j) (*gbt)[j] += grow[j];
                          if (gx) {
                              T m1 = T(0), m2 = T(0);
                              for (int64_t j = 0; j < d; ++j) {
                                  const T dh = grow[j] * gv2[j];
                                  m1 += dh;
                                  m2 += dh * hrow[j];
                              }
                              m1 /= static_cast<T>(d);
                              m2 /= static_cast<T>(d);
                              const T iv = (*inv)[static_cast<size_t>(r)];
                              T* xrow = gx->ptr() + r * d;
                              for (int64_t j = 0; j < d; ++j) {
                                  const T dh = grow[j] * gv2[j];
                                  xrow[j] += iv * (dh - m1 - hrow[j] * m2);
                              }
                          }
                      }
                  });
}

template <typename T>
struct BnStats {
    TensorT<T> mean, var;
    BnStats() = default;
    explicit BnStats(int64_t channels)
        : mean(TensorT<T>::zeros({channels})), var(TensorT<T>::ones({channels})) {}
};

// NCHW batch norm. Train mode normalizes by biased batch statistics and
// updates `running` by EMA; eval mode normalizes by the running statistics
// captured at call time (freshly constructed stats are mean 0 / var 1).
template <typename T>
VarT<T> batch_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, BnStats<T>& running, bool train,
                   double eps = 1e-5, double momentum = 0.1) {
    GraphT<T>& g = *x.graph;
    detail::opcheck(eps > 0.0, "batch_norm: eps must be positive");
    detail::opcheck(momentum >= 0.0 && momentum <= 1.0, "batch_norm: momentum must lie in [0, 1]");
    const TensorT<T>& xv = x.value();
    detail::opcheck(xv.rank() == 4, "batch_norm: input must be [N,C,H,W], got " + shape_str(xv.shape));
    const int64_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    detail::opcheck(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                    "batch_norm: gamma/beta must be [" + std::to_string(c) + "]");
    detail::opcheck(running.mean.shape == Shape{c} && running.var.shape == Shape{c},
                    "batch_norm: running stats must be [" + std::to_string(c) + "]");
    const int64_t hw = h * w;
    const int64_t m = n * hw;
    const TensorT<T>& gv = gamma.value();
    const TensorT<T>& bv = beta.value();
    TensorT<T> out(xv.shape);

    if (train) {
        detail::opcheck(m >= 2, "batch_norm: train mode needs at least 2 values per channel, got " +
                                    std::to_string(m));
        auto xhat = std::make_shared<TensorT<T>>(xv.shape);
        auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
        for (int64_t ch = 0; ch < c; ++ch) {
            T mean = T(0);
            for (int64_t b = 0; b < n; ++b) {
                const T* base = xv.ptr() + (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) mean += base[i];
            }
            mean /= static_cast<T>(m);
            T var = T(0);
            for (int64_t b = 0; b < n; ++b) {
                const T* base = xv.ptr() + (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const T d = base[i] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<T>(m);
            const T iv = T(1) / std::sqrt(var + static_cast<T>(eps));
            (*inv)[static_cast<size_t>(ch)] = iv;
            for (int64_t b = 0; b < n; ++b) {
                const T* base = xv.ptr() + (b * c + ch) * hw;
                T* hbase = xhat->ptr() + (b * c + ch) * hw;
                T* obase = out.ptr() + (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    hbase[i] = (base[i] - mean) * iv;
                    obase[i] = gv[ch] * hbase[i] + bv[ch];
                }
            }
            const T mom = static_cast<T>(momentum);
            running.mean[ch] = (T(1) - mom) * running.mean[ch] + mom * mean;
            running.var[ch] = (T(1) - mom) * running.var[ch] + mom * var;
        }
        return g.make(std::move(out), {x.id, gamma.id, beta.id},
                      [xi = x.id, gi = gamma.id, bi = beta.id, oi = static_cast<int32_t>(g.num_nodes()),
                       xhat, inv, n, c, hw, m](GraphT<T>& gg) {
                          const TensorT<T>& go = *gg.grad_buf(oi);
                          const TensorT<T>& gv2 = gg.val(gi);
                          TensorT<T>* gx = gg.grad_buf(xi);
                          TensorT<T>* ggm = gg.grad_buf(gi);
                          TensorT<T>* gbt = gg.grad_buf(bi);
                          for (int64_t ch = 0; ch < c; ++ch) {
                              T sum_dy = T(0), sum_dyh = T(0);
                              for (int64_t b = 0; b < n; ++b) {
                                  const T* gbase = go.ptr() + (b * c + ch) * hw;
                                  const T* hbase = xhat->ptr() + (b * c + ch) * hw;
                                  for (int64_t i = 0; i < hw; ++i) {
                                      sum_dy += gbase[i];
                                      sum_dyh += gbase[i] * hbase[i];
                                  }
                              }
                              if (ggm) (*ggm)[ch] += sum_dyh;
                              if (gbt) (*gbt)[ch] += sum_dy;
                              if (gx) {
                                  const T iv = (*inv)[static_cast<size_t>(ch)];
                                  const T gm = gv2[ch];
                                  const T s1 = sum_dy / static_cast<T>(m);
                                  const T s2 = sum_dyh / static_cast<T>(m);
                                  for (int64_t b = 0; b < n; ++b) {
                                      const T* gbase = go.ptr() + (b * c + ch) * hw;
                                      const T* hbase = xhat->ptr() + (b * c + ch) * hw;
                                      T* xbase = gx->ptr() + (b * c + ch) * hw;
                                      for (int64_t i = 0; i < hw; ++i)
                                          xbase[i] += gm * iv * (gbase[i] - s1 - hbase[i] * s2);
                                  }
                              }
                          }
                      });
    }

    // Eval mode: running statistics are constants.
    auto rmean = std::make_shared<TensorT<T>>(running.mean);
    auto rinv = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch)
        (*rinv)[static_cast<size_t>(ch)] = T(1) / std::sqrt(running.var[ch] + static_cast<T>(eps));
    for (int64_t ch = 0; ch < c; ++ch) {
        const T iv = (*rinv)[static_cast<size_t>(ch)];
        const T mu = (*rmean)[ch];
        for (int64_t b = 0; b < n; ++b) {
            const T* base = xv.ptr() + (b * c + ch) * hw;
            T* obase = out.ptr() + (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) obase[i] = gv[ch] * (base[i] - mu) * iv + bv[ch];
        }
    }
    return g.make(std::move(out), {x.id, gamma.id, beta.id},
                  [xi = x.id, gi = gamma.id, bi = beta.id, oi = static_cast<int32_t>(g.num_nodes()), rmean,
                   rinv, n, c, hw](GraphT<T>& gg) {
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      const TensorT<T>& xv2 = gg.val(xi);
                      const TensorT<T>& gv2 = gg.val(gi);
                      TensorT<T>* gx = gg.grad_buf(xi);
                      TensorT<T>* ggm = gg.grad_buf(gi);
                      TensorT<T>* gbt = gg.grad_buf(bi);
                      for (int64_t ch = 0; ch < c; ++ch) {
                          const T iv = (*rinv)[static_cast<size_t>(ch)];
                          const T mu = (*rmean)[ch];
                          for (int64_t b = 0; b < n; ++b) {
                              const int64_t at = (b * c + ch) * hw;
                              for (int64_t i = 0; i < hw; ++i) {
                                  const T dy = go[at + i];
                                  if (gx) (*gx)[at + i] += dy * gv2[ch] * iv;
                                  if (ggm) (*ggm)[ch] += dy * (xv2[at + i] - mu) * iv;
                                  if (gbt) (*gbt)[ch] += dy;
                              }
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

struct Conv2d {
    int64_t stride_h = 1, stride_w = 1;
    int64_t dil_h = 1, dil_w = 1;
    int64_t pad_h = 0, pad_w = 0;

    static Conv2d of(int64_t stride, int64_t dilation, int64_t pad) {
        return {stride, stride, dilation, dilation, pad, pad};
    }
};

namespace detail {

template <typename T>
void im2col(const T* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, const Conv2d& cv,
            int64_t oh, int64_t ow, T* col) {
    for (int64_t ch = 0; ch < c; ++ch) {
        const T* src = x + ch * h * w;
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                T* dst = col + (((ch * kh + ki) * kw) + kj) * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t y = oy * cv.stride_h + ki * cv.dil_h - cv.pad_h;
                    if (y < 0 || y >= h) {
                        std::fill(dst, dst + ow, T(0));
                        dst += ow;
                        continue;
                    }
                    const T* srow = src + y * w;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t xx = ox * cv.stride_w + kj * cv.dil_w - cv.pad_w;
                        dst[ox] = (xx >= 0 && xx < w) ? srow[xx] : T(0);
                    }
                    dst += ow;
                }
            }
    }
}

template <typename T>
void col2im_add(const T* col, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, const Conv2d& cv,
                int64_t oh, int64_t ow, T* dx) {
    for (int64_t ch = 0; ch < c; ++ch) {
        T* dst = dx + ch * h * w;
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                const T* src = col + (((ch * kh + ki) * kw) + kj) * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t y = oy * cv.stride_h + ki * cv.dil_h - cv.pad_h;
                    if (y < 0 || y >= h) {
                        src += ow;
                        continue;
                    }
                    T* drow = dst + y * w;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t xx = ox * cv.stride_w + kj * cv.dil_w - cv.pad_w;
                        if (xx >= 0 && xx < w) drow[xx] += src[ox];
                    }
                    src += ow;
                }
            }
    }
}

}  // namespace detail

template <typename T>
VarT<T> conv2d(VarT<T> x, VarT<T> w, std::optional<VarT<T>> bias, const Conv2d& cv) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = x.value();
    const TensorT<T>& wv = w.value();
    detail::opcheck(xv.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(xv.shape));
    detail::opcheck(wv.rank() == 4, "conv2d: weight must be [K,C,kh,kw], got " + shape_str(wv.shape));
    detail::opcheck(xv.shape[1] == wv.shape[1],
                    "conv2d: input channel axis (C=" + std::to_string(xv.shape[1]) +
                        ") does not match weight channel axis (C=" + std::to_string(wv.shape[1]) + ")");
    detail::opcheck(cv.stride_h >= 1 && cv.stride_w >= 1, "conv2d: stride must be positive");
    detail::opcheck(cv.dil_h >= 1 && cv.dil_w >= 1, "conv2d: dilation must be positive");
    detail::opcheck(cv.pad_h >= 0 && cv.pad_w >= 0, "conv2d: padding must be non-negative");

    const int64_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], wd = xv.shape[3];
    const int64_t kout = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
    if (bias)
        detail::opcheck(bias->shape() == Shape{kout},
                        "conv2d: bias shape " + shape_str(bias->shape()) + " must be [" +
                            std::to_string(kout) + "]");
    const int64_t eff_kh = (kh - 1) * cv.dil_h + 1;
    const int64_t eff_kw = (kw - 1) * cv.dil_w + 1;
    detail::opcheck(h + 2 * cv.pad_h >= eff_kh, "conv2d: effective kernel height " +
                                                    std::to_string(eff_kh) + " exceeds padded input height " +
                                                    std::to_string(h + 2 * cv.pad_h));
    detail::opcheck(wd + 2 * cv.pad_w >= eff_kw, "conv2d: effective kernel width " +
                                                     std::to_string(eff_kw) + " exceeds padded input width " +
                                                     std::to_string(wd + 2 * cv.pad_w));
    const int64_t oh = (h + 2 * cv.pad_h - eff_kh) / cv.stride_h + 1;
    const int64_t ow = (wd + 2 * cv.pad_w - eff_kw) / cv.stride_w + 1;
    detail::opcheck(oh >= 1 && ow >= 1, "conv2d: zero-sized output");

    const int64_t ckk = c * kh * kw;
    const int64_t ohw = oh * ow;
    TensorT<T> out({n, kout, oh, ow});
    std::vector<T> col(static_cast<size_t>(ckk * ohw));
    for (int64_t b = 0; b < n; ++b) {
        detail::im2col(xv.ptr() + b * c * h * wd, c, h, wd, kh, kw, cv, oh, ow, col.data());
        T* oslab = out.ptr() + b * kout * ohw;
        detail::gemm_acc_nn(oslab, wv.ptr(), col.data(), kout, ckk, ohw);
        if (bias) {
            const TensorT<T>& bval = bias->value();
            for (int64_t k = 0; k < kout; ++k) {
                const T bv = bval[k];
                T* row = oslab + k * ohw;
                for (int64_t i = 0; i < ohw; ++i) row[i] += bv;
            }
        }
    }

    std::vector<int32_t> inputs{x.id, w.id};
    const int32_t bias_id = bias ? bias->id : -1;
    if (bias) inputs.push_back(bias_id);
    return g.make(std::move(out), inputs,
                  [xi = x.id, wi = w.id, bias_id, oi = static_cast<int32_t>(g.num_nodes()), cv, n, c, h, wd,
                   kout, kh, kw, oh, ow, ckk, ohw](GraphT<T>& gg) {
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      const TensorT<T>& xv2 = gg.val(xi);
                      const TensorT<T>& wv2 = gg.val(wi);
                      TensorT<T>* gx = gg.grad_buf(xi);
                      TensorT<T>* gw = gg.grad_buf(wi);
                      TensorT<T>* gb = bias_id >= 0 ? gg.grad_buf(bias_id) : nullptr;
                      std::vector<T> col(static_cast<size_t>(ckk * ohw));
                      std::vector<T> dcol(static_cast<size_t>(ckk * ohw));
                      for (int64_t b = 0; b < n; ++b) {
                          const T* gslab = go.ptr() + b * kout * ohw;
                          if (gw) {
                              detail::im2col(xv2.ptr() + b * c * h * wd, c, h, wd, kh, kw, cv, oh, ow,
                                             col.data());
                              detail::gemm_acc_nt(gw->ptr(), gslab, col.data(), kout, ckk, ohw);
                          }
                          if (gx) {
                              std::fill(dcol.begin(), dcol.end(), T(0));
                              detail::gemm_acc_tn(dcol.data(), wv2.ptr(), gslab, kout, ckk, ohw);
                              detail::col2im_add(dcol.data(), c, h, wd, kh, kw, cv, oh, ow,
                                                 gx->ptr() + b * c * h * wd);
                          }
                          if (gb)
                              for (int64_t k = 0; k < kout; ++k) {
                                  const T* row = gslab + k * ohw;
                                  T acc = T(0);
                                  for (int64_t i = 0; i < ohw; ++i) acc += row[i];
                                  (*gb)[k] += acc;
                              }
                      }
                  });
}

template <typename T>
VarT<T> conv2d(VarT<T> x, VarT<T> w, VarT<T> bias, const Conv2d& cv) {
    return conv2d(x, w, std::optional<VarT<T>>(bias), cv);
}

// ---------------------------------------------------------------------------
// Indexing / losses
// ---------------------------------------------------------------------------

// Picks x[i, idx[i]] from a [N, C] tensor -> [N].
template <typename T>
VarT<T> take_rows(VarT<T> x, const std::vector<int64_t>& idx) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = x.value();
    detail::opcheck(xv.rank() == 2, "take_rows: input must be [N,C], got " + shape_str(xv.shape));
    const int64_t n = xv.shape[0], c = xv.shape[1];
    detail::opcheck(static_cast<int64_t>(idx.size()) == n,
                    "take_rows: index count " + std::to_string(idx.size()) + " must equal row count " +
                        std::to_string(n));
    TensorT<T> out({n});
    for (int64_t i = 0; i < n; ++i) {
        detail::opcheck(idx[static_cast<size_t>(i)] >= 0 && idx[static_cast<size_t>(i)] < c,
                        "take_rows: index " + std::to_string(idx[static_cast<size_t>(i)]) +
                            " out of range for " + std::to_string(c) + " columns");
        out[i] = xv[i * c + idx[static_cast<size_t>(i)]];
    }
    return g.make(std::move(out), {x.id},
                  [xi = x.id, oi = static_cast<int32_t>(g.num_nodes()), idx, c](GraphT<T>& gg) {
                      if (auto* gx = gg.grad_buf(xi)) {
                          const TensorT<T>& go = *gg.grad_buf(oi);
                          for (int64_t i = 0; i < go.numel(); ++i)
                              (*gx)[i * c + idx[static_cast<size_t>(i)]] += go[i];
                      }
                  });
}

// Elementwise smooth-L1 (Huber) against a constant target.
template <typename T>
VarT<T> smooth_l1(VarT<T> pred, TensorT<T> target, double beta = 1.0) {
    GraphT<T>& g = *pred.graph;
    detail::opcheck(beta > 0.0, "smooth_l1: beta must be positive");
    const TensorT<T>& pv = pred.value();
    detail::opcheck(pv.shape == target.shape, "smooth_l1: prediction shape " + shape_str(pv.shape) +
                                                  " does not match target shape " + shape_str(target.shape));
    const T b = static_cast<T>(beta);
    TensorT<T> out(pv.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        const T d = pv[i] - target[i];
        const T ad = std::abs(d);
        out[i] = ad < b ? T(0.5) * d * d / b : ad - T(0.5) * b;
    }
    auto tgt = std::make_shared<TensorT<T>>(std::move(target));
    return g.make(std::move(out), {pred.id},
                  [pi = pred.id, oi = static_cast<int32_t>(g.num_nodes()), tgt, b](GraphT<T>& gg) {
                      if (auto* gp = gg.grad_buf(pi)) {
                          const TensorT<T>& go = *gg.grad_buf(oi);
                          const TensorT<T>& pv2 = gg.val(pi);
                          for (int64_t i = 0; i < go.numel(); ++i) {
                              const T d = pv2[i] - (*tgt)[i];
                              const T slope = std::abs(d) < b ? d / b : (d > T(0) ? T(1) : T(-1));
                              (*gp)[i] += go[i] * slope;
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Bilinear grid resize (align-corners), [H,W,D] -> [H2,W2,D]
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> bilinear_resize_hw(VarT<T> x, int64_t h2, int64_t w2) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = x.value();
    detail::opcheck(xv.rank() == 3, "bilinear_resize_hw: input must be [H,W,D], got " + shape_str(xv.shape));
    detail::opcheck(h2 >= 1 && w2 >= 1, "bilinear_resize_hw: target extents must be positive");
    const int64_t h = xv.shape[0], w = xv.shape[1], d = xv.shape[2];

    struct Tap {
        int64_t lo, hi;
        T frac;
    };
    auto taps = [](int64_t src, int64_t dst) {
        std::vector<Tap> t(static_cast<size_t>(dst));
        for (int64_t i = 0; i < dst; ++i) {
            double pos = dst == 1 ? 0.0
                                  : static_cast<double>(i) * static_cast<double>(src - 1) /
                                        static_cast<double>(dst - 1);
            int64_t lo = static_cast<int64_t>(std::floor(pos));
            lo = std::min(lo, src - 1);
            int64_t hi = std::min(lo + 1, src - 1);
            t[static_cast<size_t>(i)] = {lo, hi, static_cast<T>(pos - static_cast<double>(lo))};
        }
        return t;
    };
    auto ty = std::make_shared<std::vector<Tap>>(taps(h, h2));
    auto tx = std::make_shared<std::vector<Tap>>(taps(w, w2));

    TensorT<T> out({h2, w2, d});
    for (int64_t y = 0; y < h2; ++y) {
        const Tap& py = (*ty)[static_cast<size_t>(y)];
        for (int64_t xcol = 0; xcol < w2; ++xcol) {
            const Tap& px = (*tx)[static_cast<size_t>(xcol)];
            const T w00 = (T(1) - py.frac) * (T(1) - px.frac);
            const T w01 = (T(1) - py.frac) * px.frac;
            const T w10 = py.frac * (T(1) - px.frac);
            const T w11 = py.frac * px.frac;
            const T* s00 = xv.ptr() + (py.lo * w + px.lo) * d;
            const T* s01 = xv.ptr() + (py.lo * w + px.hi) * d;
            const T* s10 = xv.ptr() + (py.hi * w + px.lo) * d;
            const T* s11 = xv.ptr() + (py.hi * w + px.hi) * d;
            T* o = out.ptr() + (y * w2 + xcol) * d;
            for (int64_t k = 0; k < d; ++k)
                o[k] = w00 * s00[k] + w01 * s01[k] + w10 * s10[k] + w11 * s11[k];
        }
    }
    return g.make(std::move(out), {x.id},
                  [xi = x.id, oi = static_cast<int32_t>(g.num_nodes()), ty, tx, h2, w2, w, d](GraphT<T>& gg) {
                      auto* gx = gg.grad_buf(xi);
                      if (!gx) return;
                      const TensorT<T>& go = *gg.grad_buf(oi);
                      for (int64_t y = 0; y < h2; ++y) {
                          const auto& py = (*ty)[static_cast<size_t>(y)];
                          for (int64_t xcol = 0; xcol < w2; ++xcol) {
                              const auto& px = (*tx)[static_cast<size_t>(xcol)];
                              const T w00 = (T(1) - py.frac) * (T(1) - px.frac);
                              const T w01 = (T(1) - py.frac) * px.frac;
                              const T w10 = py.frac * (T(1) - px.frac);
                              const T w11 = py.frac * px.frac;
                              const T* src = go.ptr() + (y * w2 + xcol) * d;
                              T* d00 = gx->ptr() + (py.lo * w + px.lo) * d;
                              T* d01 = gx->ptr() + (py.lo * w + px.hi) * d;
                              T* d10 = gx->ptr() + (py.hi * w + px.lo) * d;
                              T* d11 = gx->ptr() + (py.hi * w + px.hi) * d;
                              for (int64_t k = 0; k < d; ++k) {
                                  d00[k] += w00 * src[k];
                                  d01[k] += w01 * src[k];
                                  d10[k] += w10 * src[k];
                                  d11[k] += w11 * src[k];
                              }
                          }
                      }
                  });
}

}  // namespace pytf
