#pragma once

// Catch-free reference oracles shared by the unit tests and the
// acceptance binary.

#include "retinagan/core/ops.hpp"
#include "retinagan/core/rng.hpp"

namespace rgtest {

inline rg::Array<double> random_array(rg::Shape s, rg::Rng& rng, double lo = -1.0, double hi = 1.0) {
    rg::Array<double> a(std::move(s));
    for (auto& e : a.v) e = rng.uniform(lo, hi);
    return a;
}

// Central finite differences against the analytic gradient; returns the
// worst relative error over up to `max_probe` coordinates per input.
template <class F>
double max_grad_err(F f, std::vector<rg::Array<double>> inputs, int max_probe = 20,
                    double h = 1e-4) {
    rg::Tape<double> tape;
    std::vector<rg::Var<double>> vars;
    for (auto& a : inputs) vars.push_back(tape.leaf(a, true));
    rg::Var<double> loss = f(tape, vars);
    if (loss.size() != 1) throw rg::EngineError("gradcheck loss must be scalar");
    tape.backward(loss);

    double worst = 0.0;
    rg::Rng prng(12345);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const rg::Node<double>& n = tape.at(vars[k].id);
        rg::Array<double> analytic = n.has_grad() ? n.grad : rg::Array<double>(inputs[k].shape);
        std::size_t cnt = inputs[k].size();
        for (int probe = 0; probe < max_probe; ++probe) {
            std::size_t j = probe < static_cast<int>(cnt) && cnt <= static_cast<std::size_t>(max_probe)
                                ? static_cast<std::size_t>(probe)
                                : prng.uniform_int(cnt);
            auto eval = [&](double delta) {
                rg::Tape<double> t2;
                std::vector<rg::Var<double>> vs;
                for (std::size_t q = 0; q < inputs.size(); ++q) {
                    rg::Array<double> a = inputs[q];
                    if (q == k) a.v[j] += delta;
                    vs.push_back(t2.leaf(a, false));
                }
                return f(t2, vs).val().v[0];
            };
            const double fd = (eval(h) - eval(-h)) / (2.0 * h);
            const double an = analytic.v[j];
            const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

// largest singular value via Jacobi eigen-iteration on W^T W
inline double svd_sigma_max(const rg::Array<double>& w, int rows) {
    const int cols = static_cast<int>(w.size()) / rows;
    std::vector<double> a(static_cast<std::size_t>(cols) * cols, 0.0);
    for (int i = 0; i < rows; ++i)
        for (int p = 0; p < cols; ++p)
            for (int q = 0; q < cols; ++q)
                a[static_cast<std::size_t>(p) * cols + q] += w.v[static_cast<std::size_t>(i) * cols + p] *
                                                             w.v[static_cast<std::size_t>(i) * cols + q];
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < cols; ++p)
            for (int q = p + 1; q < cols; ++q) off += std::abs(a[static_cast<std::size_t>(p) * cols + q]);
        if (off < 1e-14) break;
        for (int p = 0; p < cols; ++p)
            for (int q = p + 1; q < cols; ++q) {
                double apq = a[static_cast<std::size_t>(p) * cols + q];
                if (std::abs(apq) < 1e-18) continue;
                double app = a[static_cast<std::size_t>(p) * cols + p];
                double aqq = a[static_cast<std::size_t>(q) * cols + q];
                double theta = 0.5 * std::atan2(2.0 * apq, app - aqq);
                double c = std::cos(theta), s = std::sin(theta);
                for (int r = 0; r < cols; ++r) {
                    double arp = a[static_cast<std::size_t>(r) * cols + p];
                    double arq = a[static_cast<std::size_t>(r) * cols + q];
                    a[static_cast<std::size_t>(r) * cols + p] = c * arp + s * arq;
                    a[static_cast<std::size_t>(r) * cols + q] = -s * arp + c * arq;
                }
                for (int r = 0; r < cols; ++r) {
                    double apr = a[static_cast<std::size_t>(p) * cols + r];
                    double aqr = a[static_cast<std::size_t>(q) * cols + r];
                    a[static_cast<std::size_t>(p) * cols + r] = c * apr + s * aqr;
                    a[static_cast<std::size_t>(q) * cols + r] = -s * apr + c * aqr;
                }
            }
    }
    double lmax = 0.0;
    for (int p = 0; p < cols; ++p) lmax = std::max(lmax, a[static_cast<std::size_t>(p) * cols + p]);
    return std::sqrt(lmax);
}

}  // namespace rgtest
