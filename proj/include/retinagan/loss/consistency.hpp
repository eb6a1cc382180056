#pragma once

#include "retinagan/core/ops.hpp"
#include "retinagan/det/head_outputs.hpp"

namespace rg {

template <class T>
struct LossParams {
    T gamma = T(2);
    T alpha = T(0.25);
    T delta = T(1);       // Huber transition, in encoded-offset units
    T lambda_prcp = T(0.1);
    T lambda_cycle = T(10);
    T lambda_gan = T(1);
};

constexpr double kProbClampLo = 1e-7;
constexpr double kProbClampHi = 1.0 - 1e-7;
constexpr double kNormFloor = 1.0;  // denominator floor for tensor-wide normalizers

// -------------------------------------------------------------------------
// elementwise builders; y is the target, p the prediction, both in [0,1]

template <class T>
Var<T> cross_entropy_elem(Var<T> y, Var<T> p) {
    Tape<T>& tp = *p.tape;
    Var<T> pc = clamp(p, T(kProbClampLo), T(kProbClampHi));
    Var<T> one = tp.constant(T(1));
    // -y log p - (1-y) log(1-p)
    Var<T> t1 = mul(y, log_op(pc));
    Var<T> t2 = mul(sub(one, y), log_op(sub(one, pc)));
    return mul_scalar(add(t1, t2), T(-1));
}

// weight [(2a-1)p + (1-a)] interpolates the binary balance terms in p
template <class T>
Var<T> balanced_ce_elem(Var<T> y, Var<T> p, T alpha) {
    Var<T> pc = clamp(p, T(kProbClampLo), T(kProbClampHi));
    Var<T> w = add_scalar(mul_scalar(pc, T(2) * alpha - T(1)), T(1) - alpha);
    return mul(w, cross_entropy_elem(y, p));
}

// |y-p|^gamma * BCE(y,p); reduces to the focal loss at binary y
template <class T>
Var<T> fcl_elem(Var<T> y, Var<T> p, T gamma, T alpha) {
    Var<T> pc = clamp(p, T(kProbClampLo), T(kProbClampHi));
    Var<T> focus = gamma == T(0) ? p.tape->constant(T(1))
                                 : pow_scalar(abs_op(sub(y, pc)), gamma);
    return mul(focus, balanced_ce_elem(y, p, alpha));
}

// -------------------------------------------------------------------------
// scalar convenience surface (shares the graph code path)

namespace lossdetail {

template <class F>
double eval_scalar(double y, double p, F build) {
    Tape<double> t;
    Var<double> yv = t.constant(y);
    Var<double> pv = t.constant(p);
    return build(yv, pv).val().v[0];
}

}  // namespace lossdetail

inline double cross_entropy(double y, double p) {
    return lossdetail::eval_scalar(y, p, [](auto yv, auto pv) { return cross_entropy_elem(yv, pv); });
}

inline double balanced_ce(double y, double p, double alpha) {
    return lossdetail::eval_scalar(y, p, [alpha](auto yv, auto pv) { return balanced_ce_elem(yv, pv, alpha); });
}

inline double fcl(double y, double p, double gamma, double alpha) {
    return lossdetail::eval_scalar(y, p, [gamma, alpha](auto yv, auto pv) { return fcl_elem(yv, pv, gamma, alpha); });
}

// binary-target focal loss; soft targets belong to fcl
inline double focal_loss(double y, double p, double gamma, double alpha) {
    if (y != 0.0 && y != 1.0)
        throw EngineError("focal_loss requires binary targets; use fcl for probability targets");
    return fcl(y, p, gamma, alpha);
}

// -------------------------------------------------------------------------
// tensor-level consistency terms

// sum of fcl over anchors/classes, normalized by the total probability in
// the reference tensor (floored); the reference supplies the targets
template <class T>
Var<T> fcl_class_term(Var<T> cls_ref, Var<T> cls_cmp, T gamma, T alpha) {
    if (cls_ref.shape() != cls_cmp.shape())
        throw EngineError("fcl_class_term shape mismatch " + shape_str(cls_ref.shape()) + " vs " +
                          shape_str(cls_cmp.shape()));
    Var<T> total = sum_all(fcl_elem(cls_ref, cls_cmp, gamma, alpha));
    Var<T> denom = clamp(sum_all(cls_ref), T(kNormFloor), std::numeric_limits<T>::max());
    return div(total, denom);
}

// per-anchor-weighted Huber distance between box regression tensors
// box_*: [A,4], weights: [A]
template <class T>
Var<T> huber_box(Var<T> box_ref, Var<T> box_cmp, Var<T> weights, T delta) {
    if (box_ref.shape() != box_cmp.shape())
        throw EngineError("huber_box shape mismatch");
    const Shape& s = box_ref.shape();
    if (s.back() != 4 || weights.size() * 4 != box_ref.size())
        throw EngineError("huber_box expects [A,4] boxes and [A] weights");
    Var<T> per_coord = huber(sub(box_ref, box_cmp), delta);
    Var<T> weighted = mul(per_coord, expand_last(weights, 4));
    Var<T> denom = clamp(sum_all(weights), T(kNormFloor), std::numeric_limits<T>::max());
    return div(sum_all(weighted), denom);
}

// Eq-style pairwise perception loss on raw head outputs; `a` is the
// reference (supplies fcl targets, box weights and both normalizers), so
// the function is intentionally asymmetric.
template <class T>
Var<T> pair_prcp_loss(const HeadOutputs<T>& a, const HeadOutputs<T>& b, const LossParams<T>& params) {
    if (a.cls.size() != b.cls.size() || a.box.size() != b.box.size())
        throw EngineError("pair_prcp_loss: pyramid level count mismatch");
    Var<T> total;
    for (std::size_t lvl = 0; lvl < a.cls.size(); ++lvl) {
        if (a.cls[lvl].shape() != b.cls[lvl].shape() || a.box[lvl].shape() != b.box[lvl].shape())
            throw EngineError("pair_prcp_loss: anchor grid mismatch at level " + std::to_string(lvl));
        Var<T> p_ref = sigmoid(a.cls[lvl]);
        Var<T> p_cmp = sigmoid(b.cls[lvl]);
        Var<T> cls_term = fcl_class_term(p_ref, p_cmp, params.gamma, params.alpha);
        Var<T> w = reduce_max_last(p_ref);
        Var<T> box_term = huber_box(a.box[lvl], b.box[lvl], w, params.delta);
        Var<T> lvl_total = add(cls_term, box_term);
        total = total.valid() ? add(total, lvl_total) : lvl_total;
    }
    return total;
}

// Six-pair aggregate over {x, x', x''} and {y, y', y''} head outputs, with
// the cycled-image terms halved.
template <class T>
Var<T> full_prcp_from_heads(const HeadOutputs<T>& x, const HeadOutputs<T>& xp, const HeadOutputs<T>& xpp,
                            const HeadOutputs<T>& y, const HeadOutputs<T>& yp, const HeadOutputs<T>& ypp,
                            const LossParams<T>& params) {
    Var<T> l = pair_prcp_loss(x, xp, params);
    l = add(l, mul_scalar(pair_prcp_loss(x, xpp, params), T(0.5)));
    l = add(l, mul_scalar(pair_prcp_loss(xp, xpp, params), T(0.5)));
    l = add(l, pair_prcp_loss(y, yp, params));
    l = add(l, mul_scalar(pair_prcp_loss(y, ypp, params), T(0.5)));
    l = add(l, mul_scalar(pair_prcp_loss(yp, ypp, params), T(0.5)));
    return l;
}

}  // namespace rg
