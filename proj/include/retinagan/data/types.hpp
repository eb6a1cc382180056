#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retinagan/image/image.hpp"

namespace rg {

// (ymin,xmin,ymax,xmax), normalized to [0,1]
struct Box {
    double ymin = 0, xmin = 0, ymax = 0, xmax = 0;

    double area() const { return (ymax - ymin) * (xmax - xmin); }
    bool ordered() const { return ymin < ymax && xmin < xmax; }
};

inline double box_iou(const Box& a, const Box& b) {
    double iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    double ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    if (iy <= 0.0 || ix <= 0.0) return 0.0;
    double inter = iy * ix;
    return inter / (a.area() + b.area() - inter);
}

enum class Domain { Sim, Real };

inline const char* domain_name(Domain d) { return d == Domain::Sim ? "sim" : "real"; }

struct LabeledImage {
    Image pixels;
    std::vector<Box> boxes;
    std::vector<int> classes;
    Domain domain = Domain::Sim;
    std::uint64_t seed = 0;
};

}  // namespace rg
