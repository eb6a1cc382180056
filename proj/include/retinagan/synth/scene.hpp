#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "retinagan/core/rng.hpp"
#include "retinagan/data/types.hpp"

namespace rg {

enum class ShapeKind { Disk = 0, Rectangle = 1, Triangle = 2, Ring = 3 };

struct ObjectSpec {
    int class_id = 0;
    ShapeKind shape = ShapeKind::Disk;
    double cy = 0.5, cx = 0.5;  // center, normalized
    double size = 0.2;          // characteristic half-extent diameter, normalized
    double rotation = 0.0;      // radians
    float color[3] = {0.5f, 0.5f, 0.5f};
};

struct SynthConfig {
    int image_size = 64;
    int num_classes = 4;
    int min_objects = 2;
    int max_objects = 6;
    double min_size = 0.14;
    double max_size = 0.34;
};

struct Scene {
    std::uint64_t seed = 0;
    std::vector<ObjectSpec> objects;
    int background_style = 0;
};

struct SynthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic in (seed, config). Object classes are uniform; one shape
// primitive per class so the detector has something to tell apart.
inline Scene sample_scene(std::uint64_t seed, const SynthConfig& cfg) {
    Rng rng(derive_seed(seed, 101, 0));
    Scene scene;
    scene.seed = seed;
    scene.background_style = static_cast<int>(rng.uniform_int(4));
    const int count = cfg.min_objects +
                      static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
    const double min_px_area = 9.0 / (static_cast<double>(cfg.image_size) * cfg.image_size);
    for (int k = 0; k < count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            ObjectSpec obj;
            obj.class_id = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_classes)));
            obj.shape = static_cast<ShapeKind>(obj.class_id % 4);
            obj.size = rng.uniform(cfg.min_size, cfg.max_size);
            const double r = obj.size * 0.5;
            obj.cy = rng.uniform(r + 0.02, 1.0 - r - 0.02);
            obj.cx = rng.uniform(r + 0.02, 1.0 - r - 0.02);
            obj.rotation = rng.uniform(0.0, 6.283185307179586);
            obj.color[0] = static_cast<float>(rng.uniform(0.15, 0.95));
            obj.color[1] = static_cast<float>(rng.uniform(0.15, 0.95));
            obj.color[2] = static_cast<float>(rng.uniform(0.15, 0.95));
            if (obj.size * obj.size * 0.25 < min_px_area) continue;
            bool clash = false;
            for (const auto& o : scene.objects) {
                double d = std::hypot(o.cy - obj.cy, o.cx - obj.cx);
                if (d < 0.55 * (o.size + obj.size) * 0.5 + 0.03) clash = true;
            }
            if (clash) continue;
            scene.objects.push_back(obj);
            placed = true;
        }
        if (!placed)
            throw SynthError("unsatisfiable object placement after 1000 rejection samples (seed " +
                             std::to_string(seed) + ")");
    }
    return scene;
}

namespace synthdetail {

// coverage in [0,1] of a point against one object, with a soft edge of
// half a pixel for cheap anti-aliasing
inline double object_coverage(const ObjectSpec& o, double y, double x) {
    const double dy = y - o.cy, dx = x - o.cx;
    const double c = std::cos(-o.rotation), s = std::sin(-o.rotation);
    const double ly = c * dy - s * dx;
    const double lx = s * dy + c * dx;
    const double r = o.size * 0.5;
    switch (o.shape) {
        case ShapeKind::Disk:
            return std::hypot(ly, lx) <= r ? 1.0 : 0.0;
        case ShapeKind::Rectangle:
            return (std::abs(ly) <= r * 0.8 && std::abs(lx) <= r) ? 1.0 : 0.0;
        case ShapeKind::Triangle: {
            // equilateral triangle inscribed in radius r, apex up
            const double h = r * 1.5;
            const double ty = ly + r;  // apex at local y = -r
            if (ty < 0.0 || ty > h) return 0.0;
            const double halfw = r * 0.8660254037844386 * (ty / h);
            return std::abs(lx) <= halfw ? 1.0 : 0.0;
        }
        case ShapeKind::Ring: {
            const double d = std::hypot(ly, lx);
            return (d <= r && d >= 0.55 * r) ? 1.0 : 0.0;
        }
    }
    return 0.0;
}

// 2x2 supersampled coverage for pixel (py,px)
inline double pixel_coverage(const ObjectSpec& o, int py, int px, int size) {
    double cov = 0.0;
    for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
            double y = (py + 0.25 + 0.5 * sy) / size;
            double x = (px + 0.25 + 0.5 * sx) / size;
            cov += object_coverage(o, y, x);
        }
    return cov * 0.25;
}

// cheap seeded value-noise in [0,1], smooth over a few pixels
inline double value_noise(std::uint64_t seed, double y, double x, double freq) {
    auto hash2 = [seed](int iy, int ix) {
        std::uint64_t h = derive_seed(seed, static_cast<std::uint64_t>(iy + 4096),
                                      static_cast<std::uint64_t>(ix + 4096));
        return static_cast<double>(h >> 11) * 0x1.0p-53;
    };
    double fy = y * freq, fx = x * freq;
    int iy = static_cast<int>(std::floor(fy)), ix = static_cast<int>(std::floor(fx));
    double ty = fy - iy, tx = fx - ix;
    ty = ty * ty * (3.0 - 2.0 * ty);
    tx = tx * tx * (3.0 - 2.0 * tx);
    double v00 = hash2(iy, ix), v01 = hash2(iy, ix + 1);
    double v10 = hash2(iy + 1, ix), v11 = hash2(iy + 1, ix + 1);
    return (v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty;
}

}  // namespace synthdetail

// Exact photometric parameters; applied in a fixed order.
struct PhotometricParams {
    double brightness = 0.0;  // additive shift
    double contrast = 1.0;    // scale around 0.5
    double saturation = 1.0;  // HSV S scale
    double hue = 0.0;         // rotation in radians
    double noise_sigma = 0.0; // Gaussian pixel noise
};

inline Image apply_photometric(const Image& in, const PhotometricParams& p, std::uint64_t noise_seed) {
    Image out = in;
    const bool hsv_pass = p.saturation != 1.0 || p.hue != 0.0;
    const bool bright_pass = p.brightness != 0.0;
    const bool contrast_pass = p.contrast != 1.0;
    for (std::size_t i = 0; i < out.px.size(); i += 3) {
        float r = out.px[i], g = out.px[i + 1], b = out.px[i + 2];
        if (bright_pass) {
            r += static_cast<float>(p.brightness);
            g += static_cast<float>(p.brightness);
            b += static_cast<float>(p.brightness);
        }
        if (hsv_pass) {
            float h, s, v;
            rgb_to_hsv(std::min(1.0f, std::max(0.0f, r)), std::min(1.0f, std::max(0.0f, g)),
                       std::min(1.0f, std::max(0.0f, b)), h, s, v);
            s = std::min(1.0f, static_cast<float>(s * p.saturation));
            h += static_cast<float>(p.hue / 6.283185307179586);
            hsv_to_rgb(h, s, v, r, g, b);
        }
        if (contrast_pass) {
            r = 0.5f + (r - 0.5f) * static_cast<float>(p.contrast);
            g = 0.5f + (g - 0.5f) * static_cast<float>(p.contrast);
            b = 0.5f + (b - 0.5f) * static_cast<float>(p.contrast);
        }
        out.px[i] = r;
        out.px[i + 1] = g;
        out.px[i + 2] = b;
    }
    if (p.noise_sigma > 0.0) {
        Rng rng(derive_seed(noise_seed, 77, 0));
        for (auto& v : out.px) v += static_cast<float>(rng.normal(0.0, p.noise_sigma));
    }
    out.clip01();
    return out;
}

// Magnitudes for seeded random distortion.
struct DistortStrengths {
    double brightness = 0.1;
    double contrast = 0.15;
    double saturation = 0.3;
    double hue = 0.35;   // radians
    double noise = 0.0;  // sigma upper bound
};

inline Image photometric_distort(const Image& in, std::uint64_t seed, const DistortStrengths& s) {
    Rng rng(derive_seed(seed, 78, 0));
    PhotometricParams p;
    p.brightness = rng.uniform(-s.brightness, s.brightness);
    p.contrast = 1.0 + rng.uniform(-s.contrast, s.contrast);
    p.saturation = 1.0 + rng.uniform(-s.saturation, s.saturation);
    p.hue = rng.uniform(-s.hue, s.hue);
    p.noise_sigma = s.noise > 0.0 ? rng.uniform(0.0, s.noise) : 0.0;
    return apply_photometric(in, p, derive_seed(seed, 79, 0));
}

// Render a scene in one of the two visual styles. Geometry (and thus the
// ground-truth boxes) is style-invariant; only appearance differs.
inline LabeledImage render(const Scene& scene, Domain style, std::uint64_t style_seed,
                           const SynthConfig& cfg) {
    using namespace synthdetail;
    const int S = cfg.image_size;
    LabeledImage out;
    out.pixels = Image(S, S);
    out.domain = style;
    out.seed = scene.seed;

    // background
    Rng brng(derive_seed(scene.seed, 102, 0));
    float bg_base = static_cast<float>(0.72 + 0.06 * scene.background_style / 3.0);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            float* p = out.pixels.at(y, x);
            p[0] = p[1] = p[2] = bg_base;
        }

    // objects back-to-front, boxes from the rendered masks
    for (const auto& obj : scene.objects) {
        int ymin = S, xmin = S, ymax = -1, xmax = -1;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                double cov = pixel_coverage(obj, y, x, S);
                if (cov <= 0.0) continue;
                ymin = std::min(ymin, y);
                xmin = std::min(xmin, x);
                ymax = std::max(ymax, y);
                xmax = std::max(xmax, x);
                float* p = out.pixels.at(y, x);
                for (int c = 0; c < 3; ++c)
                    p[c] = static_cast<float>((1.0 - cov) * p[c] + cov * obj.color[c]);
            }
        if (ymax < 0) continue;  // degenerate: nothing rasterized
        out.boxes.push_back(Box{static_cast<double>(ymin) / S, static_cast<double>(xmin) / S,
                                static_cast<double>(ymax + 1) / S, static_cast<double>(xmax + 1) / S});
        out.classes.push_back(obj.class_id);
    }

    if (style == Domain::Real) {
        // texture overlay -> directional shading -> photometric -> noise -> vignette
        std::uint64_t tseed = derive_seed(scene.seed, 103, 0);
        Rng srng(derive_seed(style_seed, 104, 0));
        double ang = srng.uniform(0.0, 6.283185307179586);
        double shade_dy = std::sin(ang), shade_dx = std::cos(ang);
        double shade_amp = srng.uniform(0.1, 0.22);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                double fy = (y + 0.5) / S, fx = (x + 0.5) / S;
                double tex = 0.6 * value_noise(tseed, fy, fx, 9.0) + 0.4 * value_noise(tseed + 1, fy, fx, 23.0);
                double shade = 1.0 - shade_amp * (0.5 + 0.5 * (shade_dy * (fy - 0.5) + shade_dx * (fx - 0.5)) * 2.0);
                float* p = out.pixels.at(y, x);
                for (int c = 0; c < 3; ++c) {
                    double v = p[c];
                    v = v * (0.82 + 0.36 * tex);
                    v *= shade;
                    p[c] = static_cast<float>(v);
                }
            }
        DistortStrengths ds;
        out.pixels = photometric_distort(out.pixels, derive_seed(style_seed, 105, scene.seed), ds);
        Rng nrng(derive_seed(style_seed, 106, scene.seed));
        for (auto& v : out.pixels.px) v += static_cast<float>(nrng.normal(0.0, 0.02));
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                double fy = (y + 0.5) / S - 0.5, fx = (x + 0.5) / S - 0.5;
                double vig = 1.0 - 0.55 * (fy * fy + fx * fx) * 2.0;
                float* p = out.pixels.at(y, x);
                for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(p[c] * vig);
            }
        out.pixels.clip01();
    }
    return out;
}

}  // namespace rg
