#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "retinagan/image/png_io.hpp"
#include "retinagan/synth/scene.hpp"

namespace rg {

struct TrainConfig {
    int steps = 5000;
    int batch = 2;  // per domain
    double lr = 1e-4;
    double beta1 = 0.1;
    double beta2 = 0.999;
    double weight_decay = 7e-5;
    double lambda_gan = 1.0;
    double lambda_cycle = 10.0;
    double lambda_prcp = 0.1;
    double gamma = 2.0;
    double alpha = 0.25;
    double delta = 1.0;
    std::uint64_t seed = 0;
    int crop = 56;
    int image_size = 64;
    DistortStrengths distort;
    int checkpoint_every = 1000;

    void validate() const {
        if (steps <= 0) throw IoError("config: steps must be > 0");
        if (batch <= 0) throw IoError("config: batch must be > 0");
        if (crop <= 0 || crop > image_size) throw IoError("config: crop must be in (0, image_size]");
        for (double w : {lambda_gan, lambda_cycle, lambda_prcp, weight_decay, gamma, delta})
            if (w < 0) throw IoError("config: loss weights must be >= 0");
        if (alpha < 0 || alpha > 1) throw IoError("config: alpha must be in [0,1]");
    }
};

namespace confdetail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <class T>
struct Field {
    const char* key;
    T TrainConfig::* ptr;
};

inline constexpr Field<int> int_fields[] = {
    {"steps", &TrainConfig::steps},         {"batch", &TrainConfig::batch},
    {"crop", &TrainConfig::crop},           {"image_size", &TrainConfig::image_size},
    {"checkpoint_every", &TrainConfig::checkpoint_every},
};

inline constexpr Field<double> double_fields[] = {
    {"lr", &TrainConfig::lr},
    {"beta1", &TrainConfig::beta1},
    {"beta2", &TrainConfig::beta2},
    {"weight_decay", &TrainConfig::weight_decay},
    {"lambda_gan", &TrainConfig::lambda_gan},
    {"lambda_cycle", &TrainConfig::lambda_cycle},
    {"lambda_prcp", &TrainConfig::lambda_prcp},
    {"gamma", &TrainConfig::gamma},
    {"alpha", &TrainConfig::alpha},
    {"delta", &TrainConfig::delta},
};

struct DistortField {
    const char* key;
    double DistortStrengths::* ptr;
};

inline constexpr DistortField distort_fields[] = {
    {"distort_brightness", &DistortStrengths::brightness},
    {"distort_contrast", &DistortStrengths::contrast},
    {"distort_saturation", &DistortStrengths::saturation},
    {"distort_hue", &DistortStrengths::hue},
    {"distort_noise", &DistortStrengths::noise},
};

}  // namespace confdetail

// flat `key = value` lines, one per field
inline std::string config_to_string(const TrainConfig& c) {
    using namespace confdetail;
    std::ostringstream out;
    for (const auto& f : int_fields) out << f.key << " = " << c.*(f.ptr) << "\n";
    out << "seed = " << c.seed << "\n";
    for (const auto& f : double_fields) out << f.key << " = " << fmt_double(c.*(f.ptr)) << "\n";
    for (const auto& f : distort_fields) out << f.key << " = " << fmt_double(c.distort.*(f.ptr)) << "\n";
    return out.str();
}

inline TrainConfig config_from_string(const std::string& text) {
    using namespace confdetail;
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        bool known = false;
        try {
            for (const auto& f : int_fields)
                if (key == f.key) {
                    c.*(f.ptr) = std::stoi(val);
                    known = true;
                }
            for (const auto& f : double_fields)
                if (key == f.key) {
                    c.*(f.ptr) = std::stod(val);
                    known = true;
                }
            for (const auto& f : distort_fields)
                if (key == f.key) {
                    c.distort.*(f.ptr) = std::stod(val);
                    known = true;
                }
            if (key == "seed") {
                c.seed = std::stoull(val);
                known = true;
            }
        } catch (const std::exception&) {
            throw IoError("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
        }
        if (!known) throw IoError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

inline void save_config(const TrainConfig& c, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write config: " + path);
    f << config_to_string(c);
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return config_from_string(buf.str());
}

}  // namespace rg
