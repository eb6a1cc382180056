#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "retinagan/loss/consistency.hpp"

using namespace rg;
using rgtest::gradcheck;
using rgtest::random_array;

namespace {

// unvectorized references, written independently of the graph builders
double oracle_fcl(double y, double p, double gamma, double alpha) {
    p = std::min(std::max(p, kProbClampLo), kProbClampHi);
    const double ce = -y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
    const double w = (2.0 * alpha - 1.0) * p + (1.0 - alpha);
    const double focus = gamma == 0.0 ? 1.0 : std::pow(std::abs(y - p), gamma);
    return focus * w * ce;
}

double oracle_huber(double d, double delta) {
    return std::abs(d) <= delta ? 0.5 * d * d / delta : std::abs(d) - 0.5 * delta;
}

Var<double> leaf_probs(Tape<double>& t, Array<double> a) { return t.leaf(std::move(a), false); }

HeadOutputs<double> random_heads(Tape<double>& t, Rng& rng, const std::vector<int>& level_anchors,
                                 int K, bool needs_grad = false) {
    HeadOutputs<double> h;
    for (int a : level_anchors) {
        h.cls.push_back(t.leaf(random_array({a, K}, rng, -2.0, 2.0), needs_grad));
        h.box.push_back(t.leaf(random_array({a, 4}, rng, -1.5, 1.5), needs_grad));
    }
    return h;
}

double oracle_pair(const HeadOutputs<double>& a, const HeadOutputs<double>& b, double gamma,
                   double alpha, double delta) {
    double total = 0.0;
    for (std::size_t l = 0; l < a.cls.size(); ++l) {
        const Array<double>& ca = a.cls[l].val();
        const Array<double>& cb = b.cls[l].val();
        const int A = ca.dim(0), K = ca.dim(1);
        double fcl_sum = 0.0, ref_sum = 0.0;
        for (std::size_t i = 0; i < ca.size(); ++i) {
            const double pr = 1.0 / (1.0 + std::exp(-ca.v[i]));
            const double pc = 1.0 / (1.0 + std::exp(-cb.v[i]));
            fcl_sum += oracle_fcl(pr, pc, gamma, alpha);
            ref_sum += pr;
        }
        total += fcl_sum / std::max(ref_sum, kNormFloor);
        const Array<double>& ba = a.box[l].val();
        const Array<double>& bb = b.box[l].val();
        double hub = 0.0, wsum = 0.0;
        for (int i = 0; i < A; ++i) {
            double w = 0.0;
            for (int k = 0; k < K; ++k)
                w = std::max(w, 1.0 / (1.0 + std::exp(-ca.v[static_cast<std::size_t>(i * K + k)])));
            wsum += w;
            for (int c = 0; c < 4; ++c)
                hub += w * oracle_huber(ba.v[static_cast<std::size_t>(i * 4 + c)] -
                                            bb.v[static_cast<std::size_t>(i * 4 + c)],
                                        delta);
        }
        total += hub / std::max(wsum, kNormFloor);
    }
    return total;
}

}  // namespace

TEST_CASE("cross entropy hits its closed-form values") {
    REQUIRE(cross_entropy(1.0, 1.0 - 1e-9) < 1e-6);
    REQUIRE(cross_entropy(0.5, 0.5) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    REQUIRE(cross_entropy(0.5, 0.9) ==
            Catch::Approx(-0.5 * std::log(0.9) - 0.5 * std::log(0.1)).epsilon(1e-12));
    REQUIRE(cross_entropy(0.5, 0.9) == Catch::Approx(1.20397).margin(1e-5));
}

TEST_CASE("balanced cross entropy applies the interpolated weight") {
    for (double p : {0.1, 0.35, 0.8}) {
        REQUIRE(balanced_ce(0.7, p, 0.5) == Catch::Approx(0.5 * cross_entropy(0.7, p)).epsilon(1e-12));
        REQUIRE(balanced_ce(0.3, p, 0.25) / cross_entropy(0.3, p) ==
                Catch::Approx(-0.5 * p + 0.75).epsilon(1e-12));
    }
    REQUIRE(balanced_ce(1.0, 0.9, 0.25) / cross_entropy(1.0, 0.9) == Catch::Approx(0.3).epsilon(1e-10));
    // alpha=1 weight is p itself, reaching 1 at p=1
    REQUIRE(balanced_ce(1.0, 0.9, 1.0) / cross_entropy(1.0, 0.9) == Catch::Approx(0.9).epsilon(1e-10));
}

TEST_CASE("focal loss values and binary-target guard") {
    REQUIRE(focal_loss(1.0, 0.9, 0.0, 0.25) == Catch::Approx(balanced_ce(1.0, 0.9, 0.25)).epsilon(1e-12));
    // 0.1^2 * [(2a-1)p + (1-a)] * (-ln 0.9)
    REQUIRE(focal_loss(1.0, 0.9, 2.0, 0.25) ==
            Catch::Approx(0.01 * 0.3 * -std::log(0.9)).epsilon(1e-10));
    REQUIRE(focal_loss(1.0, 1.0 - 1e-9, 2.0, 0.25) < 1e-12);
    REQUIRE_THROWS_AS(focal_loss(0.5, 0.9, 2.0, 0.25), EngineError);
}

TEST_CASE("fcl matches focal loss on binary targets and collapses at gamma 0") {
    for (double p : {0.05, 0.3, 0.5, 0.77, 0.95})
        for (double gamma : {0.0, 1.0, 2.0, 5.0})
            for (double alpha : {0.25, 0.5, 0.75})
                for (double y : {0.0, 1.0})
                    REQUIRE(std::abs(fcl(y, p, gamma, alpha) - focal_loss(y, p, gamma, alpha)) <= 1e-9);
    for (double y : {0.2, 0.6})
        for (double p : {0.1, 0.9})
            REQUIRE(fcl(y, p, 0.0, 0.25) == balanced_ce(y, p, 0.25));
    REQUIRE(fcl(0.4, 0.4, 2.0, 0.25) == 0.0);
    // soft-target case, term by term: |y-p|^2 * weight * CE
    REQUIRE(fcl(0.5, 0.9, 2.0, 0.25) ==
            Catch::Approx(0.16 * 0.3 * 1.2039728043259361).epsilon(1e-10));
    REQUIRE(fcl(0.5, 0.9, 2.0, 0.25) == Catch::Approx(0.05779).margin(1e-5));
}

TEST_CASE("fcl_class_term: zeros, floor, and a scalar-loop oracle") {
    Rng rng(77);
    Tape<double> t;
    auto same = random_array({6, 2}, rng, 0.05, 0.95);
    REQUIRE(fcl_class_term(leaf_probs(t, same), leaf_probs(t, same), 2.0, 0.25).val().v[0] == 0.0);

    Array<double> zeros({6, 2});
    auto p = random_array({6, 2}, rng, 0.05, 0.95);
    double v = fcl_class_term(leaf_probs(t, zeros), leaf_probs(t, p), 2.0, 0.25).val().v[0];
    double expect = 0.0;
    for (double e : p.v) expect += oracle_fcl(0.0, e, 2.0, 0.25);
    REQUIRE(v == Catch::Approx(expect / 1.0).epsilon(1e-10));  // denominator floored at 1

    auto ref = random_array({6, 2}, rng, 0.05, 0.95);
    auto cmp = random_array({6, 2}, rng, 0.05, 0.95);
    double got = fcl_class_term(leaf_probs(t, ref), leaf_probs(t, cmp), 2.0, 0.25).val().v[0];
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        num += oracle_fcl(ref.v[i], cmp.v[i], 2.0, 0.25);
        den += ref.v[i];
    }
    REQUIRE(got == Catch::Approx(num / std::max(den, 1.0)).epsilon(1e-10));

    auto bad = random_array({5, 2}, rng, 0.0, 1.0);
    REQUIRE_THROWS_AS(fcl_class_term(leaf_probs(t, ref), leaf_probs(t, bad), 2.0, 0.25), EngineError);
}

TEST_CASE("huber_box: zero, branch continuity, and a scalar oracle") {
    Rng rng(78);
    Tape<double> t;
    auto b = random_array({4, 4}, rng);
    auto w = random_array({4}, rng, 0.0, 1.0);
    REQUIRE(huber_box(t.leaf(b), t.leaf(b), t.leaf(w), 1.0).val().v[0] == 0.0);

    const double delta = 0.7;
    Array<double> zero({1, 4}), ones_w({1}, {1.0});
    Array<double> lo({1, 4}, {delta - 1e-9, 0, 0, 0}), hi({1, 4}, {delta + 1e-9, 0, 0, 0});
    double vlo = huber_box(t.leaf(zero), t.leaf(lo), t.leaf(ones_w), delta).val().v[0];
    double vhi = huber_box(t.leaf(zero), t.leaf(hi), t.leaf(ones_w), delta).val().v[0];
    REQUIRE(std::abs(vlo - vhi) < 1e-8);
    REQUIRE(vlo == Catch::Approx(0.5 * delta).margin(1e-8));

    auto ref = random_array({6, 4}, rng, -2.0, 2.0);
    auto cmp = random_array({6, 4}, rng, -2.0, 2.0);
    auto wt = random_array({6}, rng, 0.0, 1.0);
    double got = huber_box(t.leaf(ref), t.leaf(cmp), t.leaf(wt), 1.0).val().v[0];
    double num = 0.0, den = 0.0;
    for (int a = 0; a < 6; ++a) {
        den += wt.v[static_cast<std::size_t>(a)];
        for (int c = 0; c < 4; ++c)
            num += wt.v[static_cast<std::size_t>(a)] *
                   oracle_huber(ref.v[static_cast<std::size_t>(a * 4 + c)] -
                                    cmp.v[static_cast<std::size_t>(a * 4 + c)],
                                1.0);
    }
    REQUIRE(got == Catch::Approx(num / std::max(den, 1.0)).epsilon(1e-10));
}

TEST_CASE("pair_prcp_loss: identity, dead-anchor weighting, composition oracle") {
    Rng rng(79);
    LossParams<double> params;
    Tape<double> t;
    HeadOutputs<double> a = random_heads(t, rng, {6, 3}, 4);
    REQUIRE(pair_prcp_loss(a, a, params).val().v[0] == 0.0);

    // reference probability 0 at the shifted anchor kills the box term
    Array<double> dead_cls({2, 4});
    for (auto& v : dead_cls.v) v = -800.0;
    HeadOutputs<double> ref, shifted;
    ref.cls.push_back(t.leaf(dead_cls));
    ref.box.push_back(t.leaf(random_array({2, 4}, rng)));
    shifted.cls.push_back(t.leaf(dead_cls));
    Array<double> sb = ref.box[0].val();
    sb.v[0] += 3.0;
    shifted.box.push_back(t.leaf(sb));
    // class term is below 1e-18 once probabilities underflow to zero
    REQUIRE(pair_prcp_loss(ref, shifted, params).val().v[0] < 1e-18);

    HeadOutputs<double> b = random_heads(t, rng, {6, 3}, 4);
    double got = pair_prcp_loss(a, b, params).val().v[0];
    REQUIRE(got == Catch::Approx(oracle_pair(a, b, 2.0, 0.25, 1.0)).epsilon(1e-9));
    REQUIRE(got >= 0.0);
    // asymmetric by construction
    REQUIRE(got != pair_prcp_loss(b, a, params).val().v[0]);

    HeadOutputs<double> wrong = random_heads(t, rng, {6}, 4);
    REQUIRE_THROWS_AS(pair_prcp_loss(a, wrong, params), EngineError);
}

TEST_CASE("full perception loss is the weighted six-pair sum") {
    Rng rng(80);
    LossParams<double> params;
    Tape<double> t;
    auto H = [&] { return random_heads(t, rng, {5, 2}, 4); };
    HeadOutputs<double> x = H(), xp = H(), xpp = H(), y = H(), yp = H(), ypp = H();

    double got = full_prcp_from_heads(x, xp, xpp, y, yp, ypp, params).val().v[0];
    double want = pair_prcp_loss(x, xp, params).val().v[0] +
                  0.5 * pair_prcp_loss(x, xpp, params).val().v[0] +
                  0.5 * pair_prcp_loss(xp, xpp, params).val().v[0] +
                  pair_prcp_loss(y, yp, params).val().v[0] +
                  0.5 * pair_prcp_loss(y, ypp, params).val().v[0] +
                  0.5 * pair_prcp_loss(yp, ypp, params).val().v[0];
    REQUIRE(got == Catch::Approx(want).epsilon(1e-12));

    // identity generators: every pair equal, total vanishes
    REQUIRE(full_prcp_from_heads(x, x, x, y, y, y, params).val().v[0] == 0.0);

    // only the x-chain pairs can contribute when the y-chain is constant
    double partial = full_prcp_from_heads(x, xp, x, y, y, y, params).val().v[0];
    double expect = pair_prcp_loss(x, xp, params).val().v[0] +
                    0.5 * pair_prcp_loss(xp, x, params).val().v[0];
    REQUIRE(partial == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(81);
    // soft targets away from y=p where |y-p|^gamma is smooth
    auto y = random_array({5, 3}, rng, 0.05, 0.35);
    auto p = random_array({5, 3}, rng, 0.55, 0.95);
    gradcheck([](Tape<double>& t, auto& v) {
        (void)t;
        return sum_all(fcl_elem(v[0], v[1], 2.0, 0.25));
    }, {y, p});
    gradcheck([](Tape<double>& t, auto& v) {
        (void)t;
        return fcl_class_term(v[0], v[1], 2.0, 0.25);
    }, {y, p});
    auto br = random_array({5, 4}, rng, -2.0, 2.0);
    auto bc = random_array({5, 4}, rng, -2.0, 2.0);
    auto w = random_array({5}, rng, 0.1, 0.9);
    gradcheck([](Tape<double>& t, auto& v) {
        (void)t;
        return huber_box(v[0], v[1], v[2], 1.0);
    }, {br, bc, w});
    // through the whole pairwise loss, both arguments
    auto ca = random_array({4, 3}, rng, -1.5, 1.5);
    auto cb = random_array({4, 3}, rng, -1.5, 1.5);
    auto ba = random_array({4, 4}, rng, -1.0, 1.0);
    auto bb = random_array({4, 4}, rng, -1.0, 1.0);
    gradcheck([](Tape<double>& t, auto& v) {
        (void)t;
        LossParams<double> params;
        HeadOutputs<double> a, b;
        a.cls.push_back(v[0]);
        a.box.push_back(v[2]);
        b.cls.push_back(v[1]);
        b.box.push_back(v[3]);
        return pair_prcp_loss(a, b, params);
    }, {ca, cb, ba, bb}, 2e-4);
}
