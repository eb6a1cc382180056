#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rg {

using Shape = std::vector<int>;

struct EngineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw EngineError("negative extent in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major n-d array.
template <class T>
struct Array {
    Shape shape;
    std::vector<T> v;

    Array() = default;
    explicit Array(Shape s) : shape(std::move(s)), v(shape_numel(shape), T(0)) {}
    Array(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != shape_numel(shape))
            throw EngineError("array data size does not match shape " + shape_str(shape));
    }

    static Array full(Shape s, T x) {
        Array a(std::move(s));
        std::fill(a.v.begin(), a.v.end(), x);
        return a;
    }
    static Array scalar(T x) { return full({1}, x); }

    std::size_t size() const { return v.size(); }
    T& operator[](std::size_t i) { return v[i]; }
    const T& operator[](std::size_t i) const { return v[i]; }

    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    bool same_shape(const Array& o) const { return shape == o.shape; }
};

template <class T>
bool all_finite(const Array<T>& a) {
    for (T x : a.v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

}  // namespace rg
