#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "retinagan/core/tape.hpp"

namespace rg {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]; fixed accumulation order, vectorizes along n.
template <class T>
void gemm_acc(const T* A, const T* B, T* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* c = C + static_cast<std::size_t>(i) * n;
        const T* a = A + static_cast<std::size_t>(i) * k;
        int p = 0;
        for (; p + 4 <= k; p += 4) {
            const T a0 = a[p], a1 = a[p + 1], a2 = a[p + 2], a3 = a[p + 3];
            const T* b0 = B + static_cast<std::size_t>(p) * n;
            const T* b1 = b0 + n;
            const T* b2 = b1 + n;
            const T* b3 = b2 + n;
            for (int j = 0; j < n; ++j)
                c[j] += ((a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]));
        }
        for (; p < k; ++p) {
            const T ap = a[p];
            const T* b = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T; fixed-order 8-lane partial sums.
template <class T>
void gemm_abt_acc(const T* A, const T* B, T* C, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T* b = B + static_cast<std::size_t>(p) * n;
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                s0 += a[j] * b[j];
                s1 += a[j + 1] * b[j + 1];
                s2 += a[j + 2] * b[j + 2];
                s3 += a[j + 3] * b[j + 3];
                s4 += a[j + 4] * b[j + 4];
                s5 += a[j + 5] * b[j + 5];
                s6 += a[j + 6] * b[j + 6];
                s7 += a[j + 7] * b[j + 7];
            }
            T s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
            for (; j < n; ++j) s += a[j] * b[j];
            C[static_cast<std::size_t>(i) * k + p] += s;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class T>
void gemm_atb_acc(const T* A, const T* B, T* C, int m, int k, int n) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const T* a0 = A + static_cast<std::size_t>(i) * k;
        const T* a1 = a0 + k;
        const T* a2 = a1 + k;
        const T* a3 = a2 + k;
        const T* b0 = B + static_cast<std::size_t>(i) * n;
        const T* b1 = b0 + n;
        const T* b2 = b1 + n;
        const T* b3 = b2 + n;
        for (int p = 0; p < k; ++p) {
            const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
            T* c = C + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j)
                c[j] += ((x0 * b0[j] + x1 * b1[j]) + (x2 * b2[j] + x3 * b3[j]));
        }
    }
    for (; i < m; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * k;
        const T* b = B + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T ap = a[p];
            T* c = C + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// col[(ci*kh+r)*kw+s][oh*Wo+ow] = X[ci][ih][iw], zero outside.
template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, T* col) {
    const int K = C * kh * kw;
    const int N = Ho * Wo;
    std::memset(col, 0, sizeof(T) * static_cast<std::size_t>(K) * N);
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < kh; ++r)
            for (int s = 0; s < kw; ++s) {
                T* crow = col + static_cast<std::size_t>((c * kh + r) * kw + s) * N;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + r;
                    if (ih < 0 || ih >= H) continue;
                    const T* xrow = x + static_cast<std::size_t>(c * H + ih) * W;
                    T* co = crow + oh * Wo;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + s;
                        if (iw >= 0 && iw < W) co[ow] = xrow[iw];
                    }
                }
            }
}

// scatter-add inverse of im2col
template <class T>
void col2im_acc(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, T* x) {
    const int N = Ho * Wo;
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < kh; ++r)
            for (int s = 0; s < kw; ++s) {
                const T* crow = col + static_cast<std::size_t>((c * kh + r) * kw + s) * N;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + r;
                    if (ih < 0 || ih >= H) continue;
                    T* xrow = x + static_cast<std::size_t>(c * H + ih) * W;
                    const T* co = crow + oh * Wo;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + s;
                        if (iw >= 0 && iw < W) xrow[iw] += co[ow];
                    }
                }
            }
}

inline int conv_out(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <class T, class Fwd, class Bwd>
Var<T> unary_op(const char* name, Var<T> x, Fwd f, Bwd df) {
    Tape<T>& tp = *x.tape;
    const Array<T>& xv = x.val();
    Array<T> out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out.v[i] = f(xv.v[i]);
    const int xid = x.id;
    return tp.make(name, {xid}, std::move(out), [xid, df](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        const Array<T>& xin = t.at(xid).val;
        Array<T>& gx = t.grad_buf(xid);
        for (std::size_t i = 0; i < xin.size(); ++i)
            gx.v[i] += self.grad.v[i] * df(xin.v[i], self.val.v[i]);
    });
}

// shapes must match, or either side may be scalar
template <class T, class FwdF, class DA, class DB>
Var<T> binary_op(const char* name, Var<T> a, Var<T> b, FwdF f, DA dfa, DB dfb) {
    Tape<T>& tp = *a.tape;
    const Array<T>& av = a.val();
    const Array<T>& bv = b.val();
    const bool as = av.size() == 1, bs = bv.size() == 1;
    if (!as && !bs && av.shape != bv.shape)
        throw EngineError(std::string(name) + ": shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    const Array<T>& big = as ? bv : av;
    Array<T> out(big.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.v[i] = f(av.v[as ? 0 : i], bv.v[bs ? 0 : i]);
    const int aid = a.id, bid = b.id;
    return tp.make(name, {aid, bid}, std::move(out), [aid, bid, as, bs, dfa, dfb](Tape<T>& t, Node<T>& self) {
        const Array<T>& av2 = t.at(aid).val;
        const Array<T>& bv2 = t.at(bid).val;
        if (t.wants_grad(aid)) {
            Array<T>& ga = t.grad_buf(aid);
            for (std::size_t i = 0; i < self.val.size(); ++i)
                ga.v[as ? 0 : i] += self.grad.v[i] * dfa(av2.v[as ? 0 : i], bv2.v[bs ? 0 : i]);
        }
        if (t.wants_grad(bid)) {
            Array<T>& gb = t.grad_buf(bid);
            for (std::size_t i = 0; i < self.val.size(); ++i)
                gb.v[bs ? 0 : i] += self.grad.v[i] * dfb(av2.v[as ? 0 : i], bv2.v[bs ? 0 : i]);
        }
    });
}

template <class T> Var<T> add(Var<T> a, Var<T> b) {
    return binary_op<T>("add", a, b, [](T x, T y) { return x + y; },
                        [](T, T) { return T(1); }, [](T, T) { return T(1); });
}
template <class T> Var<T> sub(Var<T> a, Var<T> b) {
    return binary_op<T>("sub", a, b, [](T x, T y) { return x - y; },
                        [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}
template <class T> Var<T> mul(Var<T> a, Var<T> b) {
    return binary_op<T>("mul", a, b, [](T x, T y) { return x * y; },
                        [](T, T y) { return y; }, [](T x, T) { return x; });
}
template <class T> Var<T> div(Var<T> a, Var<T> b) {
    return binary_op<T>("div", a, b, [](T x, T y) { return x / y; },
                        [](T, T y) { return T(1) / y; },
                        [](T x, T y) { return -x / (y * y); });
}

template <class T> Var<T> mul_scalar(Var<T> x, T c) {
    return unary_op<T>("mul_scalar", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}
template <class T> Var<T> add_scalar(Var<T> x, T c) {
    return unary_op<T>("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}
template <class T> Var<T> relu(Var<T> x) {
    return unary_op<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                       [](T v, T) { return v > T(0) ? T(1) : T(0); });
}
template <class T> Var<T> leaky_relu(Var<T> x, T slope) {
    return unary_op<T>("leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
                       [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}
template <class T> Var<T> sigmoid(Var<T> x) {
    return unary_op<T>("sigmoid", x,
                       [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                                  : std::exp(v) / (T(1) + std::exp(v)); },
                       [](T, T y) { return y * (T(1) - y); });
}
template <class T> Var<T> tanh_op(Var<T> x) {
    return unary_op<T>("tanh", x, [](T v) { return std::tanh(v); },
                       [](T, T y) { return T(1) - y * y; });
}
template <class T> Var<T> exp_op(Var<T> x) {
    return unary_op<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
template <class T> Var<T> log_op(Var<T> x) {
    return unary_op<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}
template <class T> Var<T> abs_op(Var<T> x) {
    return unary_op<T>("abs", x, [](T v) { return std::abs(v); },
                       [](T v, T) { return v >= T(0) ? T(1) : T(-1); });
}
template <class T> Var<T> pow_scalar(Var<T> x, T p) {
    return unary_op<T>("pow", x, [p](T v) { return std::pow(v, p); },
                       [p](T v, T) { return v == T(0) && p > T(1) ? T(0) : p * std::pow(v, p - T(1)); });
}
template <class T> Var<T> clamp(Var<T> x, T lo, T hi) {
    return unary_op<T>("clamp", x,
                       [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
                       [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}
// elementwise Huber: 0.5 d^2/delta inside, |d| - delta/2 outside
template <class T> Var<T> huber(Var<T> x, T delta) {
    return unary_op<T>("huber", x,
                       [delta](T v) {
                           T a = std::abs(v);
                           return a <= delta ? T(0.5) * v * v / delta : a - T(0.5) * delta;
                       },
                       [delta](T v, T) {
                           return std::min(T(1), std::max(T(-1), v / delta));
                       });
}

// ---------------------------------------------------------------------------
// reductions / shape

template <class T>
Var<T> sum_all(Var<T> x) {
    Tape<T>& tp = *x.tape;
    T s = 0;
    for (T v : x.val().v) s += v;
    const int xid = x.id;
    return tp.make("sum", {xid}, Array<T>::scalar(s), [xid](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        const T g = self.grad.v[0];
        for (auto& e : gx.v) e += g;
    });
}

template <class T>
Var<T> mean_all(Var<T> x) {
    const T inv = T(1) / static_cast<T>(x.size());
    return mul_scalar(sum_all(x), inv);
}

// [N,C,H,W] -> [N,C] spatial mean
template <class T>
Var<T> mean_hw(Var<T> x) {
    const Array<T>& xv = x.val();
    if (xv.ndim() != 4) throw EngineError("mean_hw expects rank-4 input, got " + shape_str(xv.shape));
    const int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Array<T> out({N, C});
    const T inv = T(1) / static_cast<T>(HW);
    for (int i = 0; i < N * C; ++i) {
        T s = 0;
        const T* p = xv.v.data() + static_cast<std::size_t>(i) * HW;
        for (int j = 0; j < HW; ++j) s += p[j];
        out.v[static_cast<std::size_t>(i)] = s * inv;
    }
    const int xid = x.id;
    return x.tape->make("mean_hw", {xid}, std::move(out), [xid, HW, inv](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        for (std::size_t i = 0; i < self.val.size(); ++i) {
            const T g = self.grad.v[i] * inv;
            T* p = gx.v.data() + i * HW;
            for (int j = 0; j < HW; ++j) p[j] += g;
        }
    });
}

// max over the last axis; backward routes to the first argmax
template <class T>
Var<T> reduce_max_last(Var<T> x) {
    const Array<T>& xv = x.val();
    if (xv.ndim() < 1) throw EngineError("reduce_max_last on scalar");
    const int K = xv.shape.back();
    Shape os(xv.shape.begin(), xv.shape.end() - 1);
    if (os.empty()) os = {1};
    Array<T> out(os);
    const std::size_t M = out.size();
    for (std::size_t i = 0; i < M; ++i) {
        const T* p = xv.v.data() + i * K;
        T m = p[0];
        for (int j = 1; j < K; ++j) m = std::max(m, p[j]);
        out.v[i] = m;
    }
    const int xid = x.id;
    return x.tape->make("reduce_max_last", {xid}, std::move(out), [xid, K](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        const Array<T>& xin = t.at(xid).val;
        Array<T>& gx = t.grad_buf(xid);
        for (std::size_t i = 0; i < self.val.size(); ++i) {
            const T* p = xin.v.data() + i * K;
            int arg = 0;
            for (int j = 1; j < K; ++j)
                if (p[j] > p[arg]) arg = j;
            gx.v[i * K + arg] += self.grad.v[i];
        }
    });
}

// repeat each element k times along a new trailing axis
template <class T>
Var<T> expand_last(Var<T> x, int k) {
    const Array<T>& xv = x.val();
    Shape os = xv.shape;
    os.push_back(k);
    Array<T> out(os);
    for (std::size_t i = 0; i < xv.size(); ++i)
        for (int j = 0; j < k; ++j) out.v[i * k + j] = xv.v[i];
    const int xid = x.id;
    return x.tape->make("expand_last", {xid}, std::move(out), [xid, k](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            T s = 0;
            for (int j = 0; j < k; ++j) s += self.grad.v[i * k + j];
            gx.v[i] += s;
        }
    });
}

template <class T>
Var<T> reshape(Var<T> x, Shape s) {
    const Array<T>& xv = x.val();
    if (shape_numel(s) != xv.size())
        throw EngineError("reshape numel mismatch: " + shape_str(xv.shape) + " -> " + shape_str(s));
    Array<T> out(std::move(s));
    out.v = xv.v;
    const int xid = x.id;
    return x.tape->make("reshape", {xid}, std::move(out), [xid](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += self.grad.v[i];
    });
}

// reorder axes; perm[d] names the source axis for output axis d
template <class T>
Var<T> permute(Var<T> x, std::vector<int> perm) {
    const Array<T>& xv = x.val();
    const int nd = xv.ndim();
    if (static_cast<int>(perm.size()) != nd) throw EngineError("permute rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(nd), false);
    for (int p : perm) {
        if (p < 0 || p >= nd || seen[static_cast<std::size_t>(p)])
            throw EngineError("permute axes must be a permutation of 0.." + std::to_string(nd - 1));
        seen[static_cast<std::size_t>(p)] = true;
    }
    Shape os(static_cast<std::size_t>(nd));
    for (int d = 0; d < nd; ++d) os[static_cast<std::size_t>(d)] = xv.dim(perm[static_cast<std::size_t>(d)]);
    std::vector<std::size_t> xstride(static_cast<std::size_t>(nd), 1);
    for (int d = nd - 2; d >= 0; --d)
        xstride[static_cast<std::size_t>(d)] =
            xstride[static_cast<std::size_t>(d + 1)] * static_cast<std::size_t>(xv.dim(d + 1));
    // stride of each output axis in the flat source buffer
    std::vector<std::size_t> srcstride(static_cast<std::size_t>(nd));
    for (int d = 0; d < nd; ++d)
        srcstride[static_cast<std::size_t>(d)] = xstride[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
    Array<T> out(os);
    std::vector<int> idx(static_cast<std::size_t>(nd), 0);
    std::vector<std::size_t> src_index(out.size());
    std::size_t src = 0;
    for (std::size_t o = 0; o < out.size(); ++o) {
        src_index[o] = src;
        out.v[o] = xv.v[src];
        for (int d = nd - 1; d >= 0; --d) {
            std::size_t du = static_cast<std::size_t>(d);
            if (++idx[du] < os[du]) {
                src += srcstride[du];
                break;
            }
            idx[du] = 0;
            src -= srcstride[du] * static_cast<std::size_t>(os[du] - 1);
        }
    }
    const int xid = x.id;
    return x.tape->make("permute", {xid}, std::move(out),
                        [xid, src_index = std::move(src_index)](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        for (std::size_t o = 0; o < self.grad.size(); ++o) gx.v[src_index[o]] += self.grad.v[o];
    });
}

// select index i along axis 0, dropping that axis
template <class T>
Var<T> slice0(Var<T> x, int i) {
    const Array<T>& xv = x.val();
    if (xv.ndim() < 2) throw EngineError("slice0 needs rank >= 2");
    if (i < 0 || i >= xv.dim(0)) throw EngineError("slice0 index out of range");
    Shape os(xv.shape.begin() + 1, xv.shape.end());
    Array<T> out(os);
    const std::size_t n = out.size();
    std::memcpy(out.v.data(), xv.v.data() + static_cast<std::size_t>(i) * n, sizeof(T) * n);
    const int xid = x.id;
    return x.tape->make("slice0", {xid}, std::move(out), [xid, i, n](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        T* gx = t.grad_buf(xid).v.data() + static_cast<std::size_t>(i) * n;
        for (std::size_t k = 0; k < n; ++k) gx[k] += self.grad.v[k];
    });
}

// concat two tensors of equal rank along `axis`
template <class T>
Var<T> concat(Var<T> a, Var<T> b, int axis) {
    const Array<T>& av = a.val();
    const Array<T>& bv = b.val();
    if (av.ndim() != bv.ndim()) throw EngineError("concat rank mismatch");
    for (int d = 0; d < av.ndim(); ++d)
        if (d != axis && av.dim(d) != bv.dim(d))
            throw EngineError("concat shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Shape os = av.shape;
    os[static_cast<std::size_t>(axis)] += bv.dim(axis);
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(av.dim(d));
    for (int d = axis + 1; d < av.ndim(); ++d) inner *= static_cast<std::size_t>(av.dim(d));
    const std::size_t ca = static_cast<std::size_t>(av.dim(axis)) * inner;
    const std::size_t cb = static_cast<std::size_t>(bv.dim(axis)) * inner;
    Array<T> out(os);
    for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(out.v.data() + o * (ca + cb), av.v.data() + o * ca, sizeof(T) * ca);
        std::memcpy(out.v.data() + o * (ca + cb) + ca, bv.v.data() + o * cb, sizeof(T) * cb);
    }
    const int aid = a.id, bid = b.id;
    return a.tape->make("concat", {aid, bid}, std::move(out),
                        [aid, bid, outer, ca, cb](Tape<T>& t, Node<T>& self) {
        for (std::size_t o = 0; o < outer; ++o) {
            const T* g = self.grad.v.data() + o * (ca + cb);
            if (t.wants_grad(aid)) {
                T* ga = t.grad_buf(aid).v.data() + o * ca;
                for (std::size_t i = 0; i < ca; ++i) ga[i] += g[i];
            }
            if (t.wants_grad(bid)) {
                T* gb = t.grad_buf(bid).v.data() + o * cb;
                for (std::size_t i = 0; i < cb; ++i) gb[i] += g[ca + i];
            }
        }
    });
}

// spatial crop of [N,C,H,W]
template <class T>
Var<T> crop2d(Var<T> x, int top, int left, int h, int w) {
    const Array<T>& xv = x.val();
    if (xv.ndim() != 4) throw EngineError("crop expects rank-4 input");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (top < 0 || left < 0 || top + h > H || left + w > W)
        throw EngineError("crop window outside input " + shape_str(xv.shape));
    Array<T> out({N, C, h, w});
    for (int nc = 0; nc < N * C; ++nc)
        for (int i = 0; i < h; ++i)
            std::memcpy(out.v.data() + (static_cast<std::size_t>(nc) * h + i) * w,
                        xv.v.data() + (static_cast<std::size_t>(nc) * H + top + i) * W + left,
                        sizeof(T) * static_cast<std::size_t>(w));
    const int xid = x.id;
    return x.tape->make("crop", {xid}, std::move(out),
                        [xid, N, C, H, W, top, left, h, w](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        for (int nc = 0; nc < N * C; ++nc)
            for (int i = 0; i < h; ++i) {
                const T* g = self.grad.v.data() + (static_cast<std::size_t>(nc) * h + i) * w;
                T* gp = gx.v.data() + (static_cast<std::size_t>(nc) * H + top + i) * W + left;
                for (int j = 0; j < w; ++j) gp[j] += g[j];
            }
    });
}

template <class T>
Var<T> pad_reflect(Var<T> x, int p) {
    const Array<T>& xv = x.val();
    if (xv.ndim() != 4) throw EngineError("pad_reflect expects rank-4 input");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (p >= H || p >= W) throw EngineError("reflect pad too large for input");
    const int H2 = H + 2 * p, W2 = W + 2 * p;
    auto refl = [p](int i, int n) {
        int s = i - p;
        if (s < 0) s = -s;
        if (s >= n) s = 2 * n - 2 - s;
        return s;
    };
    Array<T> out({N, C, H2, W2});
    for (int nc = 0; nc < N * C; ++nc)
        for (int i = 0; i < H2; ++i) {
            const int si = refl(i, H);
            for (int j = 0; j < W2; ++j)
                out.v[(static_cast<std::size_t>(nc) * H2 + i) * W2 + j] =
                    xv.v[(static_cast<std::size_t>(nc) * H + si) * W + refl(j, W)];
        }
    const int xid = x.id;
    return x.tape->make("pad_reflect", {xid}, std::move(out),
                        [xid, N, C, H, W, H2, W2, refl](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        for (int nc = 0; nc < N * C; ++nc)
            for (int i = 0; i < H2; ++i) {
                const int si = refl(i, H);
                for (int j = 0; j < W2; ++j)
                    gx.v[(static_cast<std::size_t>(nc) * H + si) * W + refl(j, W)] +=
                        self.grad.v[(static_cast<std::size_t>(nc) * H2 + i) * W2 + j];
            }
    });
}

// nearest-neighbour resize of [N,C,H,W]; source index floor(i*H/H2)
template <class T>
Var<T> resize_nearest(Var<T> x, int H2, int W2) {
    const Array<T>& xv = x.val();
    if (xv.ndim() != 4) throw EngineError("resize_nearest expects rank-4 input");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    std::vector<int> si(static_cast<std::size_t>(H2)), sj(static_cast<std::size_t>(W2));
    for (int i = 0; i < H2; ++i) si[static_cast<std::size_t>(i)] = std::min(H - 1, i * H / H2);
    for (int j = 0; j < W2; ++j) sj[static_cast<std::size_t>(j)] = std::min(W - 1, j * W / W2);
    Array<T> out({N, C, H2, W2});
    for (int nc = 0; nc < N * C; ++nc)
        for (int i = 0; i < H2; ++i) {
            const T* xr = xv.v.data() + (static_cast<std::size_t>(nc) * H + si[static_cast<std::size_t>(i)]) * W;
            T* orow = out.v.data() + (static_cast<std::size_t>(nc) * H2 + i) * W2;
            for (int j = 0; j < W2; ++j) orow[j] = xr[sj[static_cast<std::size_t>(j)]];
        }
    const int xid = x.id;
    return x.tape->make("resize_nearest", {xid}, std::move(out),
                        [xid, N, C, H, W, H2, W2, si, sj](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        for (int nc = 0; nc < N * C; ++nc)
            for (int i = 0; i < H2; ++i) {
                T* gr = gx.v.data() + (static_cast<std::size_t>(nc) * H + si[static_cast<std::size_t>(i)]) * W;
                const T* g = self.grad.v.data() + (static_cast<std::size_t>(nc) * H2 + i) * W2;
                for (int j = 0; j < W2; ++j) gr[sj[static_cast<std::size_t>(j)]] += g[j];
            }
    });
}

template <class T>
Var<T> upsample_nearest_2x(Var<T> x) {
    const Array<T>& xv = x.val();
    return resize_nearest(x, xv.dim(2) * 2, xv.dim(3) * 2);
}

// ---------------------------------------------------------------------------
// linear algebra / conv

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const Array<T>& av = a.val();
    const Array<T>& bv = b.val();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
        throw EngineError("matmul shape mismatch " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Array<T> out({m, n});
    detail::gemm_acc(av.v.data(), bv.v.data(), out.v.data(), m, k, n);
    const int aid = a.id, bid = b.id;
    return a.tape->make("matmul", {aid, bid}, std::move(out),
                        [aid, bid, m, k, n](Tape<T>& t, Node<T>& self) {
        const Array<T>& A = t.at(aid).val;
        const Array<T>& B = t.at(bid).val;
        if (t.wants_grad(aid))  // dA += dY * B^T
            detail::gemm_abt_acc(self.grad.v.data(), B.v.data(), t.grad_buf(aid).v.data(), m, n, k);
        if (t.wants_grad(bid))  // dB += A^T * dY
            detail::gemm_atb_acc(A.v.data(), self.grad.v.data(), t.grad_buf(bid).v.data(), m, k, n);
    });
}

// x:[N,Ci,H,W], w:[Co,Ci,kh,kw], zero padding
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, int stride, int pad) {
    const Array<T>& xv = x.val();
    const Array<T>& wv = w.val();
    if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(1))
        throw EngineError("conv2d shape mismatch x=" + shape_str(xv.shape) + " w=" + shape_str(wv.shape));
    const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const int Ho = detail::conv_out(H, kh, stride, pad), Wo = detail::conv_out(W, kw, stride, pad);
    if (Ho <= 0 || Wo <= 0) throw EngineError("conv2d produces empty output for x=" + shape_str(xv.shape));
    const int K = Ci * kh * kw, M = Ho * Wo;
    Array<T> out({N, Co, Ho, Wo});
    std::vector<T> col(static_cast<std::size_t>(K) * M);
    for (int n = 0; n < N; ++n) {
        detail::im2col(xv.v.data() + static_cast<std::size_t>(n) * Ci * H * W, Ci, H, W, kh, kw,
                       stride, pad, Ho, Wo, col.data());
        detail::gemm_acc(wv.v.data(), col.data(),
                         out.v.data() + static_cast<std::size_t>(n) * Co * M, Co, K, M);
    }
    const int xid = x.id, wid = w.id;
    return x.tape->make("conv2d", {xid, wid}, std::move(out),
                        [xid, wid, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad](Tape<T>& t, Node<T>& self) {
        const int K = Ci * kh * kw, M = Ho * Wo;
        const Array<T>& xin = t.at(xid).val;
        const Array<T>& win = t.at(wid).val;
        std::vector<T> col(static_cast<std::size_t>(K) * M);
        std::vector<T> dcol(static_cast<std::size_t>(K) * M);
        for (int n = 0; n < N; ++n) {
            const T* dy = self.grad.v.data() + static_cast<std::size_t>(n) * Co * M;
            if (t.wants_grad(wid)) {
                detail::im2col(xin.v.data() + static_cast<std::size_t>(n) * Ci * H * W, Ci, H, W,
                               kh, kw, stride, pad, Ho, Wo, col.data());
                detail::gemm_abt_acc(dy, col.data(), t.grad_buf(wid).v.data(), Co, M, K);
            }
            if (t.wants_grad(xid)) {
                std::fill(dcol.begin(), dcol.end(), T(0));
                detail::gemm_atb_acc(win.v.data(), dy, dcol.data(), Co, K, M);
                detail::col2im_acc(dcol.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                                   t.grad_buf(xid).v.data() + static_cast<std::size_t>(n) * Ci * H * W);
            }
        }
    });
}

// x:[N,Ci,H,W], w:[Ci,Co,kh,kw]; output (H-1)*stride - 2*pad + kh
template <class T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, int stride, int pad) {
    const Array<T>& xv = x.val();
    const Array<T>& wv = w.val();
    if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(0))
        throw EngineError("conv_transpose2d shape mismatch x=" + shape_str(xv.shape) + " w=" + shape_str(wv.shape));
    const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Co = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
    const int Ho = (H - 1) * stride - 2 * pad + kh, Wo = (W - 1) * stride - 2 * pad + kw;
    if (Ho <= 0 || Wo <= 0) throw EngineError("conv_transpose2d produces empty output");
    const int K = Co * kh * kw, M = H * W;
    Array<T> out({N, Co, Ho, Wo});
    std::vector<T> col(static_cast<std::size_t>(K) * M);
    for (int n = 0; n < N; ++n) {
        std::fill(col.begin(), col.end(), T(0));
        // col = w^T(K x Ci) * x_n(Ci x M), then scatter into the output plane
        detail::gemm_atb_acc(wv.v.data(), xv.v.data() + static_cast<std::size_t>(n) * Ci * M,
                             col.data(), Ci, K, M);
        detail::col2im_acc(col.data(), Co, Ho, Wo, kh, kw, stride, pad, H, W,
                           out.v.data() + static_cast<std::size_t>(n) * Co * Ho * Wo);
    }
    const int xid = x.id, wid = w.id;
    return x.tape->make("conv_transpose2d", {xid, wid}, std::move(out),
                        [xid, wid, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad](Tape<T>& t, Node<T>& self) {
        const int K = Co * kh * kw, M = H * W;
        const Array<T>& xin = t.at(xid).val;
        const Array<T>& win = t.at(wid).val;
        std::vector<T> col(static_cast<std::size_t>(K) * M);
        for (int n = 0; n < N; ++n) {
            // dcol = im2col(dy) in output space
            detail::im2col(self.grad.v.data() + static_cast<std::size_t>(n) * Co * Ho * Wo, Co, Ho,
                           Wo, kh, kw, stride, pad, H, W, col.data());
            if (t.wants_grad(xid))  // dx = w(Ci x K) * dcol
                detail::gemm_acc(win.v.data(), col.data(),
                                 t.grad_buf(xid).v.data() + static_cast<std::size_t>(n) * Ci * M, Ci, K, M);
            if (t.wants_grad(wid))  // dw += x_n(Ci x M) * dcol^T
                detail::gemm_abt_acc(xin.v.data() + static_cast<std::size_t>(n) * Ci * M, col.data(),
                                     t.grad_buf(wid).v.data(), Ci, M, K);
        }
    });
}

// broadcast over all but axis 1: x:[N,C,...] + b:[C]
template <class T>
Var<T> add_bias(Var<T> x, Var<T> b) {
    const Array<T>& xv = x.val();
    const Array<T>& bv = b.val();
    if (xv.ndim() < 2 || bv.ndim() != 1 || bv.dim(0) != xv.dim(1))
        throw EngineError("add_bias shape mismatch x=" + shape_str(xv.shape) + " b=" + shape_str(bv.shape));
    const int N = xv.dim(0), C = xv.dim(1);
    std::size_t inner = 1;
    for (int d = 2; d < xv.ndim(); ++d) inner *= static_cast<std::size_t>(xv.dim(d));
    Array<T> out(xv.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T bc = bv.v[static_cast<std::size_t>(c)];
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) out.v[base + i] = xv.v[base + i] + bc;
        }
    const int xid = x.id, bid = b.id;
    return x.tape->make("add_bias", {xid, bid}, std::move(out),
                        [xid, bid, N, C, inner](Tape<T>& t, Node<T>& self) {
        if (t.wants_grad(xid)) {
            Array<T>& gx = t.grad_buf(xid);
            for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += self.grad.v[i];
        }
        if (t.wants_grad(bid)) {
            Array<T>& gb = t.grad_buf(bid);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * inner;
                    T s = 0;
                    for (std::size_t i = 0; i < inner; ++i) s += self.grad.v[base + i];
                    gb.v[static_cast<std::size_t>(c)] += s;
                }
        }
    });
}

// per-channel scale: x:[N,C,...] * s:[C]
template <class T>
Var<T> scale_channels(Var<T> x, Var<T> s) {
    const Array<T>& xv = x.val();
    const Array<T>& sv = s.val();
    if (xv.ndim() < 2 || sv.ndim() != 1 || sv.dim(0) != xv.dim(1))
        throw EngineError("scale_channels shape mismatch");
    const int N = xv.dim(0), C = xv.dim(1);
    std::size_t inner = 1;
    for (int d = 2; d < xv.ndim(); ++d) inner *= static_cast<std::size_t>(xv.dim(d));
    Array<T> out(xv.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T sc = sv.v[static_cast<std::size_t>(c)];
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) out.v[base + i] = xv.v[base + i] * sc;
        }
    const int xid = x.id, sid = s.id;
    return x.tape->make("scale_channels", {xid, sid}, std::move(out),
                        [xid, sid, N, C, inner](Tape<T>& t, Node<T>& self) {
        const Array<T>& xin = t.at(xid).val;
        const Array<T>& sin = t.at(sid).val;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * C + c) * inner;
                if (t.wants_grad(xid)) {
                    Array<T>& gx = t.grad_buf(xid);
                    const T sc = sin.v[static_cast<std::size_t>(c)];
                    for (std::size_t i = 0; i < inner; ++i) gx.v[base + i] += self.grad.v[base + i] * sc;
                }
                if (t.wants_grad(sid)) {
                    T acc = 0;
                    for (std::size_t i = 0; i < inner; ++i) acc += self.grad.v[base + i] * xin.v[base + i];
                    t.grad_buf(sid).v[static_cast<std::size_t>(c)] += acc;
                }
            }
    });
}

// per-(sample,channel) normalization over H,W
template <class T>
Var<T> instance_norm(Var<T> x, T eps) {
    const Array<T>& xv = x.val();
    if (xv.ndim() != 4) throw EngineError("instance_norm expects rank-4 input");
    const int NC = xv.dim(0) * xv.dim(1);
    const int M = xv.dim(2) * xv.dim(3);
    Array<T> out(xv.shape);
    std::vector<T> inv_sd(static_cast<std::size_t>(NC));
    for (int g = 0; g < NC; ++g) {
        const T* p = xv.v.data() + static_cast<std::size_t>(g) * M;
        T mu = 0;
        for (int i = 0; i < M; ++i) mu += p[i];
        mu /= static_cast<T>(M);
        T var = 0;
        for (int i = 0; i < M; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= static_cast<T>(M);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_sd[static_cast<std::size_t>(g)] = inv;
        T* o = out.v.data() + static_cast<std::size_t>(g) * M;
        for (int i = 0; i < M; ++i) o[i] = (p[i] - mu) * inv;
    }
    const int xid = x.id;
    return x.tape->make("instance_norm", {xid}, std::move(out),
                        [xid, NC, M, inv_sd](Tape<T>& t, Node<T>& self) {
        if (!t.wants_grad(xid)) return;
        Array<T>& gx = t.grad_buf(xid);
        for (int g = 0; g < NC; ++g) {
            const T* xh = self.val.v.data() + static_cast<std::size_t>(g) * M;
            const T* dy = self.grad.v.data() + static_cast<std::size_t>(g) * M;
            T* dx = gx.v.data() + static_cast<std::size_t>(g) * M;
            T mg = 0, mgx = 0;
            for (int i = 0; i < M; ++i) {
                mg += dy[i];
                mgx += dy[i] * xh[i];
            }
            mg /= static_cast<T>(M);
            mgx /= static_cast<T>(M);
            const T inv = inv_sd[static_cast<std::size_t>(g)];
            for (int i = 0; i < M; ++i) dx[i] += inv * (dy[i] - mg - xh[i] * mgx);
        }
    });
}

// ---------------------------------------------------------------------------
// string-keyed entry point over the primitive set

template <class T>
Var<T> apply(const std::string& op, std::vector<Var<T>> in,
             const std::map<std::string, double>& attrs = {}) {
    auto attr = [&](const char* k, double dflt) {
        auto it = attrs.find(k);
        return it == attrs.end() ? dflt : it->second;
    };
    auto need = [&](std::size_t n) {
        if (in.size() != n) throw EngineError("apply(" + op + "): expected " + std::to_string(n) + " inputs");
    };
    if (op == "add") { need(2); return add(in[0], in[1]); }
    if (op == "sub") { need(2); return sub(in[0], in[1]); }
    if (op == "mul") { need(2); return mul(in[0], in[1]); }
    if (op == "matmul") { need(2); return matmul(in[0], in[1]); }
    if (op == "conv2d") { need(2); return conv2d(in[0], in[1], static_cast<int>(attr("stride", 1)), static_cast<int>(attr("pad", 0))); }
    if (op == "conv_transpose2d") { need(2); return conv_transpose2d(in[0], in[1], static_cast<int>(attr("stride", 1)), static_cast<int>(attr("pad", 0))); }
    if (op == "instance_norm") { need(1); return instance_norm(in[0], static_cast<T>(attr("eps", 1e-5))); }
    if (op == "leaky_relu") { need(1); return leaky_relu(in[0], static_cast<T>(attr("slope", 0.2))); }
    if (op == "relu") { need(1); return relu(in[0]); }
    if (op == "sigmoid") { need(1); return sigmoid(in[0]); }
    if (op == "tanh") { need(1); return tanh_op(in[0]); }
    if (op == "exp") { need(1); return exp_op(in[0]); }
    if (op == "log") { need(1); return log_op(in[0]); }
    if (op == "abs") { need(1); return abs_op(in[0]); }
    if (op == "pow") { need(1); return pow_scalar(in[0], static_cast<T>(attr("exponent", 2.0))); }
    if (op == "mean") { need(1); return mean_all(in[0]); }
    if (op == "sum") { need(1); return sum_all(in[0]); }
    if (op == "concat") { need(2); return concat(in[0], in[1], static_cast<int>(attr("axis", 1))); }
    if (op == "upsample_nearest_2x") { need(1); return upsample_nearest_2x(in[0]); }
    if (op == "pad_reflect") { need(1); return pad_reflect(in[0], static_cast<int>(attr("pad", 1))); }
    if (op == "crop") {
        need(1);
        return crop2d(in[0], static_cast<int>(attr("top", 0)), static_cast<int>(attr("left", 0)),
                      static_cast<int>(attr("height", 1)), static_cast<int>(attr("width", 1)));
    }
    throw EngineError("apply: unknown op '" + op + "'");
}

}  // namespace rg
