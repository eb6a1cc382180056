#pragma once

#include <cmath>
#include <limits>

#include "retinagan/core/ops.hpp"
#include "retinagan/core/rng.hpp"

namespace rg {

// Power-iteration state for one weight, viewed as [out_features, rest].
template <class T>
struct SpectralState {
    Array<T> u;  // left singular vector estimate, unit norm
    long long iterations = 0;

    void init(int out_features, Rng& rng) {
        u = Array<T>({out_features});
        T nrm = 0;
        for (auto& e : u.v) {
            e = static_cast<T>(rng.normal());
            nrm += e * e;
        }
        nrm = std::sqrt(nrm);
        if (nrm < T(1e-12)) {
            u.v[0] = T(1);
        } else {
            for (auto& e : u.v) e /= nrm;
        }
    }
};

namespace detail {

template <class T>
void l2_normalize(std::vector<T>& x, T eps = T(1e-12)) {
    T n = 0;
    for (T e : x) n += e * e;
    n = std::sqrt(n);
    if (n < eps) n = eps;
    for (T& e : x) e /= n;
}

}  // namespace detail

// Out-of-graph power iteration on W viewed as [rows, cols]; updates
// state.u and returns the right vector v for the current estimate.
template <class T>
std::vector<T> spectral_power_iterate(const Array<T>& w, int rows, SpectralState<T>& st, int iters) {
    const int cols = static_cast<int>(w.size()) / rows;
    std::vector<T> v(static_cast<std::size_t>(cols), T(0));
    for (int it = 0; it < iters; ++it) {
        std::fill(v.begin(), v.end(), T(0));
        for (int i = 0; i < rows; ++i) {
            const T ui = st.u.v[static_cast<std::size_t>(i)];
            const T* wr = w.v.data() + static_cast<std::size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) v[static_cast<std::size_t>(j)] += ui * wr[j];
        }
        detail::l2_normalize(v);
        for (int i = 0; i < rows; ++i) {
            const T* wr = w.v.data() + static_cast<std::size_t>(i) * cols;
            T s = 0;
            for (int j = 0; j < cols; ++j) s += wr[j] * v[static_cast<std::size_t>(j)];
            st.u.v[static_cast<std::size_t>(i)] = s;
        }
        detail::l2_normalize(st.u.v);
        st.iterations += 1;
    }
    // recompute v for the final u so sigma = u^T W v is the current estimate
    std::fill(v.begin(), v.end(), T(0));
    for (int i = 0; i < rows; ++i) {
        const T ui = st.u.v[static_cast<std::size_t>(i)];
        const T* wr = w.v.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) v[static_cast<std::size_t>(j)] += ui * wr[j];
    }
    detail::l2_normalize(v);
    return v;
}

// sigma estimate for a weight already iterated; u, v fixed
template <class T>
T spectral_sigma(const Array<T>& w, int rows, const SpectralState<T>& st, const std::vector<T>& v) {
    const int cols = static_cast<int>(w.size()) / rows;
    T sigma = 0;
    for (int i = 0; i < rows; ++i) {
        const T* wr = w.v.data() + static_cast<std::size_t>(i) * cols;
        T s = 0;
        for (int j = 0; j < cols; ++j) s += wr[j] * v[static_cast<std::size_t>(j)];
        sigma += st.u.v[static_cast<std::size_t>(i)] * s;
    }
    return sigma;
}

// In-graph normalized view W / sigma with u, v treated as constants;
// gradient flows through sigma = u^T W v.
template <class T>
Var<T> spectral_normalize(Var<T> w, SpectralState<T>& st, int iters = 1) {
    const Array<T>& wv = w.val();
    const int rows = wv.dim(0);
    const int cols = static_cast<int>(wv.size()) / rows;
    if (static_cast<int>(st.u.size()) != rows)
        throw EngineError("spectral state size does not match weight rows");
    std::vector<T> v = spectral_power_iterate(wv, rows, st, iters);
    Tape<T>& tp = *w.tape;
    Var<T> wm = reshape(w, {rows, cols});
    Var<T> uvar = tp.leaf(st.u);
    Var<T> vvar = tp.leaf(Array<T>({cols, 1}, std::vector<T>(v.begin(), v.end())));
    Var<T> sigma = matmul(reshape(uvar, {1, rows}), matmul(wm, vvar));  // [1,1]
    sigma = clamp(sigma, T(1e-12), std::numeric_limits<T>::max());
    return reshape(div(wm, sigma), wv.shape);
}

}  // namespace rg
