#pragma once

#include <cmath>
#include <vector>

#include "retinagan/core/tape.hpp"

namespace rg {

// Bias-corrected Adam with decoupled weight decay applied after the
// adaptive step.
template <class T>
struct OptimState {
    std::vector<Array<T>> m;
    std::vector<Array<T>> v;
    long long step = 0;
    T lr = T(1e-4);
    T beta1 = T(0.1);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0);

    void bind(const std::vector<Param<T>*>& params) {
        m.clear();
        v.clear();
        for (const Param<T>* p : params) {
            m.emplace_back(p->value.shape);
            v.emplace_back(p->value.shape);
        }
    }
};

template <class T>
void adam_step(std::vector<Param<T>*>& params, OptimState<T>& st) {
    if (st.m.size() != params.size())
        throw EngineError("optimizer state not bound to this parameter set");
    st.step += 1;
    const T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.step));
    const T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param<T>& p = *params[i];
        if (p.grad.shape != p.value.shape)
            throw EngineError("gradient shape mismatch for parameter " + p.name);
        if (!all_finite(p.grad)) throw EngineError("non-finite gradient for parameter " + p.name);
        Array<T>& m = st.m[i];
        Array<T>& v = st.v[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const T g = p.grad.v[j];
            m.v[j] = st.beta1 * m.v[j] + (T(1) - st.beta1) * g;
            v.v[j] = st.beta2 * v.v[j] + (T(1) - st.beta2) * g * g;
            const T mhat = m.v[j] / bc1;
            const T vhat = v.v[j] / bc2;
            T x = p.value.v[j] - st.lr * mhat / (std::sqrt(vhat) + st.eps);
            x -= st.lr * st.weight_decay * x;
            p.value.v[j] = x;
        }
    }
}

}  // namespace rg
