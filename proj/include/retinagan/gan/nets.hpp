#pragma once

#include <map>

#include "retinagan/core/adam.hpp"
#include "retinagan/core/params.hpp"
#include "retinagan/core/spectral.hpp"
#include "retinagan/det/detector.hpp"
#include "retinagan/loss/consistency.hpp"

namespace rg {

// 3-down/3-up U-Net with skip concatenation; final sigmoid keeps outputs
// in [0,1] for any parameter values.
template <class T>
struct Generator {
    int image_size = 64;
    int base = 16;
    ParamStore<T> params;

    void init(std::uint64_t seed) {
        Rng rng(seed);
        auto conv = [&](const std::string& name, int co, int ci, int k) {
            params.create(name + ".w", init_conv<T>(rng, co, ci, k, k));
            params.create(name + ".b", init_const<T>({co}, T(0)));
        };
        auto convt = [&](const std::string& name, int ci, int co, int k) {
            // transpose kernels are stored [Ci,Co,kh,kw]
            Array<T> w({ci, co, k, k});
            const double sd = std::sqrt(2.0 / (static_cast<double>(co) * k * k));
            for (auto& v : w.v) v = static_cast<T>(rng.normal(0.0, sd));
            params.create(name + ".w", std::move(w));
            params.create(name + ".b", init_const<T>({co}, T(0)));
        };
        conv("e1", base, 3, 4);
        conv("e2", base * 2, base, 4);
        conv("e3", base * 4, base * 2, 4);
        convt("d3", base * 4, base * 2, 4);
        convt("d2", base * 4, base, 4);
        convt("d1", base * 2, base, 4);
        conv("out", 3, base, 3);
    }

    Var<T> forward(Tape<T>& tp, Var<T> x, bool train) {
        const Array<T>& xv = x.val();
        if (xv.ndim() != 4 || xv.dim(1) != 3 || xv.dim(2) != image_size || xv.dim(3) != image_size)
            throw EngineError("generator expects [N,3," + std::to_string(image_size) + "," +
                              std::to_string(image_size) + "], got " + shape_str(xv.shape));
        auto w = [&](const std::string& name) {
            Param<T>& p = params.at(name);
            return train ? tp.param(p) : tp.leaf(p.value, false);
        };
        auto enc = [&](Var<T> h, const char* name) {
            Var<T> c = conv2d(h, w(std::string(name) + ".w"), 2, 1);
            return leaky_relu(add_bias(instance_norm(c, T(1e-5)), w(std::string(name) + ".b")), T(0.2));
        };
        auto dec = [&](Var<T> h, const char* name) {
            Var<T> c = conv_transpose2d(h, w(std::string(name) + ".w"), 2, 1);
            return relu(add_bias(instance_norm(c, T(1e-5)), w(std::string(name) + ".b")));
        };
        Var<T> e1 = enc(x, "e1");   // 32
        Var<T> e2 = enc(e1, "e2");  // 16
        Var<T> e3 = enc(e2, "e3");  // 8
        Var<T> d3 = concat(dec(e3, "d3"), e2, 1);  // 16
        Var<T> d2 = concat(dec(d3, "d2"), e1, 1);  // 32
        Var<T> d1 = dec(d2, "d1");                 // 64
        return sigmoid(add_bias(conv2d(d1, w("out.w"), 1, 1), w("out.b")));
    }
};

// 4-downsample patch discriminator; every conv weight spectrally
// normalized. Output is a raw [N,1,S/16,S/16] score map.
template <class T>
struct Discriminator {
    int image_size = 64;
    int base = 16;
    ParamStore<T> params;
    std::map<std::string, SpectralState<T>> spec;

    void init(std::uint64_t seed) {
        Rng rng(seed);
        auto conv = [&](const std::string& name, int co, int ci, int k) {
            params.create(name + ".w", init_conv<T>(rng, co, ci, k, k));
            params.create(name + ".b", init_const<T>({co}, T(0)));
            spec[name + ".w"].init(co, rng);
        };
        conv("c1", base, 3, 4);
        conv("c2", base * 2, base, 4);
        conv("c3", base * 4, base * 2, 4);
        conv("c4", base * 8, base * 4, 4);
        conv("out", 1, base * 8, 3);
    }

    // `power_iters` > 0 advances the spectral estimates (training phase);
    // 0 reuses the stored vectors so a frozen pass has no side effects.
    Var<T> forward(Tape<T>& tp, Var<T> x, bool train, int power_iters = 1) {
        auto w = [&](const std::string& name) {
            Param<T>& p = params.at(name);
            Var<T> raw = train ? tp.param(p) : tp.leaf(p.value, false);
            auto it = spec.find(name);
            return it == spec.end() ? raw : spectral_normalize(raw, it->second, power_iters);
        };
        auto layer = [&](Var<T> h, const char* name, int stride, int pad) {
            Var<T> c = conv2d(h, w(std::string(name) + ".w"), stride, pad);
            return add_bias(c, train ? tp.param(params.at(std::string(name) + ".b"))
                                     : tp.leaf(params.at(std::string(name) + ".b").value, false));
        };
        Var<T> h = leaky_relu(layer(x, "c1", 2, 1), T(0.2));
        h = leaky_relu(layer(h, "c2", 2, 1), T(0.2));
        h = leaky_relu(layer(h, "c3", 2, 1), T(0.2));
        h = leaky_relu(layer(h, "c4", 2, 1), T(0.2));
        return layer(h, "out", 1, 1);
    }
};

// least-squares objective; returns (d_loss, g_loss)
template <class T>
std::pair<Var<T>, Var<T>> adversarial_losses(Var<T> d_real, Var<T> d_fake) {
    if (d_real.shape() != d_fake.shape()) throw EngineError("adversarial_losses shape mismatch");
    Var<T> d = add(mul_scalar(mean_all(pow_scalar(add_scalar(d_real, T(-1)), T(2))), T(0.5)),
                   mul_scalar(mean_all(pow_scalar(d_fake, T(2))), T(0.5)));
    Var<T> g = mean_all(pow_scalar(add_scalar(d_fake, T(-1)), T(2)));
    return {d, g};
}

// mean absolute error of both reconstructions, summed
template <class T>
Var<T> cycle_loss(Var<T> x, Var<T> xpp, Var<T> y, Var<T> ypp) {
    return add(mean_all(abs_op(sub(x, xpp))), mean_all(abs_op(sub(y, ypp))));
}

template <class T>
struct GanBundle {
    Generator<T> g_xy;  // G: sim -> real
    Generator<T> g_yx;  // F: real -> sim
    Discriminator<T> d_x;  // scores sim-domain images
    Discriminator<T> d_y;  // scores real-domain images
    OptimState<T> opt_g, opt_d;
    long long step = 0;

    void init(std::uint64_t seed) {
        g_xy.init(derive_seed(seed, 10, 0));
        g_yx.init(derive_seed(seed, 10, 1));
        d_x.init(derive_seed(seed, 10, 2));
        d_y.init(derive_seed(seed, 10, 3));
        opt_g.bind(gen_params());
        opt_d.bind(disc_params());
    }

    std::vector<Param<T>*> gen_params() {
        auto out = g_xy.params.all();
        for (auto* p : g_yx.params.all()) out.push_back(p);
        return out;
    }

    std::vector<Param<T>*> disc_params() {
        auto out = d_x.params.all();
        for (auto* p : d_y.params.all()) out.push_back(p);
        return out;
    }
};

struct LossReport {
    long long step = 0;
    double g_adv_xy = 0, g_adv_yx = 0, d_x = 0, d_y = 0;
    double cycle = 0, prcp = 0, total_g = 0, total_d = 0;
};

namespace gandetail {

// mean over the batch of the six-term perception loss on detector
// outputs; the six image groups run through the detector as one batch
template <class T>
Var<T> batch_prcp(Tape<T>& tp, Detector<T>& det, Var<T> x, Var<T> xp, Var<T> xpp, Var<T> y,
                  Var<T> yp, Var<T> ypp, const LossParams<T>& lp) {
    const int N = x.val().dim(0);
    Var<T> stacked = concat(concat(concat(x, xp, 0), concat(xpp, y, 0), 0), concat(yp, ypp, 0), 0);
    HeadOutputs<T> all = det.forward(tp, stacked, false);
    auto group = [&](int g, int i) { return head_sample(all, g * N + i); };
    Var<T> total;
    for (int i = 0; i < N; ++i) {
        Var<T> li = full_prcp_from_heads(group(0, i), group(1, i), group(2, i), group(3, i),
                                         group(4, i), group(5, i), lp);
        total = total.valid() ? add(total, li) : li;
    }
    return mul_scalar(total, T(1) / static_cast<T>(N));
}

}  // namespace gandetail

// Discriminator-phase graph: generators and detector stay out of the
// gradient; spectral estimates advance once.
template <class T>
struct DiscGraph {
    Var<T> d_x_loss, d_y_loss, total_d;
};

template <class T>
DiscGraph<T> disc_graph(Tape<T>& tp, GanBundle<T>& b, Var<T> x, Var<T> y, bool train) {
    Var<T> xp = b.g_xy.forward(tp, x, false);  // fake real
    Var<T> yp = b.g_yx.forward(tp, y, false);  // fake sim
    const int iters = train ? 1 : 0;
    auto [dx, gx] = adversarial_losses(b.d_x.forward(tp, x, train, iters),
                                       b.d_x.forward(tp, yp, train, 0));
    auto [dy, gy] = adversarial_losses(b.d_y.forward(tp, y, train, 0),
                                       b.d_y.forward(tp, xp, train, 0));
    (void)gx;
    (void)gy;
    DiscGraph<T> g;
    g.d_x_loss = dx;
    g.d_y_loss = dy;
    g.total_d = add(dx, dy);
    return g;
}

// Generator-phase graph: discriminators and detector frozen.
template <class T>
struct GenGraph {
    Var<T> xp, xpp, yp, ypp;
    Var<T> g_adv_xy, g_adv_yx, cycle, prcp, total_g;
};

template <class T>
GenGraph<T> gen_graph(Tape<T>& tp, GanBundle<T>& b, Detector<T>* det, Var<T> x, Var<T> y,
                      const LossParams<T>& lp, bool train) {
    GenGraph<T> g;
    g.xp = b.g_xy.forward(tp, x, train);
    g.xpp = b.g_yx.forward(tp, g.xp, train);
    g.yp = b.g_yx.forward(tp, y, train);
    g.ypp = b.g_xy.forward(tp, g.yp, train);
    // generator side of the least-squares objective; real-image scores are
    // not needed here
    g.g_adv_xy = mean_all(pow_scalar(add_scalar(b.d_y.forward(tp, g.xp, false, 0), T(-1)), T(2)));
    g.g_adv_yx = mean_all(pow_scalar(add_scalar(b.d_x.forward(tp, g.yp, false, 0), T(-1)), T(2)));
    g.cycle = cycle_loss(x, g.xpp, y, g.ypp);
    if (lp.lambda_prcp != T(0)) {
        if (det == nullptr) throw EngineError("perception loss requires a detector");
        g.prcp = gandetail::batch_prcp(tp, *det, x, g.xp, g.xpp, y, g.yp, g.ypp, lp);
    } else {
        g.prcp = tp.constant(T(0));
    }
    Var<T> adv = add(g.g_adv_xy, g.g_adv_yx);
    g.total_g = add(add(mul_scalar(adv, lp.lambda_gan), mul_scalar(g.cycle, lp.lambda_cycle)),
                    mul_scalar(g.prcp, lp.lambda_prcp));
    return g;
}

// Evaluates every report term on one batch without touching parameters or
// spectral state.
template <class T>
LossReport retinagan_total(GanBundle<T>& b, Detector<T>* det, const Array<T>& x_batch,
                           const Array<T>& y_batch, const LossParams<T>& lp) {
    Tape<T> tp;
    Var<T> x = tp.leaf(x_batch, false);
    Var<T> y = tp.leaf(y_batch, false);
    DiscGraph<T> d = disc_graph(tp, b, x, y, false);
    GenGraph<T> g = gen_graph(tp, b, det, x, y, lp, false);
    LossReport r;
    r.step = b.step;
    r.g_adv_xy = static_cast<double>(g.g_adv_xy.val().v[0]);
    r.g_adv_yx = static_cast<double>(g.g_adv_yx.val().v[0]);
    r.d_x = static_cast<double>(d.d_x_loss.val().v[0]);
    r.d_y = static_cast<double>(d.d_y_loss.val().v[0]);
    r.cycle = static_cast<double>(g.cycle.val().v[0]);
    r.prcp = static_cast<double>(g.prcp.val().v[0]);
    r.total_g = static_cast<double>(g.total_g.val().v[0]);
    r.total_d = static_cast<double>(d.total_d.val().v[0]);
    return r;
}

}  // namespace rg
