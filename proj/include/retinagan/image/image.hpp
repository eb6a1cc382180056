#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "retinagan/core/array.hpp"

namespace rg {

// H x W x 3 interleaved float image, values in [0,1].
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> px;  // h*w*3, row-major HWC

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_ * 3, 0.0f) {}

    float* at(int y, int x) { return px.data() + (static_cast<std::size_t>(y) * w + x) * 3; }
    const float* at(int y, int x) const { return px.data() + (static_cast<std::size_t>(y) * w + x) * 3; }

    void clip01() {
        for (float& v : px) v = std::min(1.0f, std::max(0.0f, v));
    }
};

// [N,3,H,W] batch from interleaved images
template <class T>
Array<T> images_to_batch(const std::vector<Image>& imgs) {
    const int N = static_cast<int>(imgs.size());
    const int H = imgs[0].h, W = imgs[0].w;
    Array<T> out({N, 3, H, W});
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const float* p = imgs[static_cast<std::size_t>(n)].at(y, x);
                for (int c = 0; c < 3; ++c)
                    out.v[((static_cast<std::size_t>(n) * 3 + c) * H + y) * W + x] = static_cast<T>(p[c]);
            }
    return out;
}

template <class T>
Image batch_to_image(const Array<T>& batch, int n) {
    const int H = batch.dim(2), W = batch.dim(3);
    Image img(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x)[c] = static_cast<float>(
                    batch.v[((static_cast<std::size_t>(n) * 3 + c) * H + y) * W + x]);
    return img;
}

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    float mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    float d = mx - mn;
    s = mx <= 0.0f ? 0.0f : d / mx;
    if (d <= 0.0f) {
        h = 0.0f;
        return;
    }
    if (mx == r)
        h = (g - b) / d + (g < b ? 6.0f : 0.0f);
    else if (mx == g)
        h = (b - r) / d + 2.0f;
    else
        h = (r - g) / d + 4.0f;
    h /= 6.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    h = h - std::floor(h);
    float hh = h * 6.0f;
    int i = std::min(5, static_cast<int>(hh));
    float f = hh - static_cast<float>(i);
    float p = v * (1.0f - s);
    float q = v * (1.0f - s * f);
    float t = v * (1.0f - s * (1.0f - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

inline std::vector<std::uint8_t> to_rgb8(const Image& img) {
    std::vector<std::uint8_t> out(img.px.size());
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        float v = std::min(1.0f, std::max(0.0f, img.px[i]));
        out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

inline Image from_rgb8(const std::vector<std::uint8_t>& data, int h, int w) {
    Image img(h, w);
    for (std::size_t i = 0; i < img.px.size(); ++i)
        img.px[i] = static_cast<float>(data[i]) / 255.0f;
    return img;
}

inline double psnr(const Image& a, const Image& b) {
    double mse = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        double d = static_cast<double>(a.px[i]) - b.px[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.px.size());
    if (mse <= 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace rg
