#pragma once

#include <vector>

#include "retinagan/core/tape.hpp"

namespace rg {

// Per-pyramid-level raw detector outputs for one image or batch:
// cls[lvl] has shape [A_l, K] (or [N, A_l, K]), box[lvl] [A_l, 4].
template <class T>
struct HeadOutputs {
    std::vector<Var<T>> cls;
    std::vector<Var<T>> box;
};

}  // namespace rg
