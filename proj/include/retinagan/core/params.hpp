#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "retinagan/core/rng.hpp"
#include "retinagan/core/tape.hpp"

namespace rg {

// Ordered, name-indexed parameter collection. Deque storage keeps Param
// addresses stable across create() calls.
template <class T>
class ParamStore {
public:
    // movable only: a copy would alias the by-name pointer table
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    Param<T>& create(const std::string& name, Array<T> init) {
        if (by_name_.count(name)) throw EngineError("duplicate parameter '" + name + "'");
        store_.emplace_back(name, std::move(init));
        by_name_[name] = &store_.back();
        return store_.back();
    }

    Param<T>& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw EngineError("unknown parameter '" + name + "'");
        return *it->second;
    }

    bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

    std::vector<Param<T>*> all() {
        std::vector<Param<T>*> out;
        for (auto& p : store_) out.push_back(&p);
        return out;
    }

    void zero_grad() {
        for (auto& p : store_) p.zero_grad();
    }

    std::size_t count() const { return store_.size(); }

    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& p : store_) n += p.value.size();
        return n;
    }

private:
    std::deque<Param<T>> store_;
    std::map<std::string, Param<T>*> by_name_;
};

// He-style normal init for conv kernels [Co,Ci,kh,kw]
template <class T>
Array<T> init_conv(Rng& rng, int co, int ci, int kh, int kw, double gain = 2.0) {
    Array<T> a({co, ci, kh, kw});
    const double sd = std::sqrt(gain / (static_cast<double>(ci) * kh * kw));
    for (auto& v : a.v) v = static_cast<T>(rng.normal(0.0, sd));
    return a;
}

template <class T>
Array<T> init_dense(Rng& rng, int rows, int cols, double gain = 2.0) {
    Array<T> a({rows, cols});
    const double sd = std::sqrt(gain / static_cast<double>(cols));
    for (auto& v : a.v) v = static_cast<T>(rng.normal(0.0, sd));
    return a;
}

template <class T>
Array<T> init_const(Shape s, T x) {
    Array<T> a(std::move(s));
    std::fill(a.v.begin(), a.v.end(), x);
    return a;
}

}  // namespace rg
