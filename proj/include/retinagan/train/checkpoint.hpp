#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "retinagan/gan/nets.hpp"
#include "retinagan/image/png_io.hpp"
#include "retinagan/train/config.hpp"

namespace rg {

// Container format: magic "RGAN", u32 LE version, u64 LE header length,
// JSON header, then tightly packed little-endian f32 payloads.
inline constexpr std::uint32_t kCkptVersion = 1;

struct CheckpointData {
    nlohmann::json meta;
    std::map<std::string, Array<float>> tensors;
};

namespace ckptdetail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)])) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const std::string& s, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)])) << (8 * i);
    return v;
}

}  // namespace ckptdetail

// tensors serialize in name order; offsets are relative to the payload
inline void write_checkpoint(const std::string& path, nlohmann::json meta,
                             const std::map<std::string, Array<float>>& tensors) {
    namespace fs = std::filesystem;
    nlohmann::json table = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, arr] : tensors) {
        table.push_back({{"name", name}, {"shape", arr.shape}, {"dtype", "f32"}, {"offset", offset}});
        offset += arr.size() * 4;
    }
    meta["tensors"] = std::move(table);
    const std::string header = meta.dump();

    std::string out = "RGAN";
    ckptdetail::put_u32(out, kCkptVersion);
    ckptdetail::put_u64(out, header.size());
    out += header;
    static_assert(sizeof(float) == 4);
    for (const auto& [name, arr] : tensors) {
        const std::size_t pos = out.size();
        out.resize(pos + arr.size() * 4);
        // little-endian host assumed; bytes go out verbatim
        std::memcpy(out.data() + pos, arr.v.data(), arr.size() * 4);
    }
    const std::string tmp = path + ".tmp";
    write_file(tmp, std::vector<std::uint8_t>(out.begin(), out.end()));
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

inline CheckpointData read_checkpoint(const std::string& path) {
    auto bytes = read_file(path);
    std::string s(bytes.begin(), bytes.end());
    if (s.size() < 16) throw IoError("truncated checkpoint (no header): " + path);
    if (s.compare(0, 4, "RGAN") != 0) throw IoError("bad checkpoint magic in " + path);
    const std::uint32_t version = ckptdetail::get_u32(s, 4);
    if (version != kCkptVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    const std::uint64_t hlen = ckptdetail::get_u64(s, 8);
    if (s.size() < 16 + hlen) throw IoError("truncated checkpoint (header cut short): " + path);

    CheckpointData ck;
    try {
        ck.meta = nlohmann::json::parse(s.substr(16, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint header parse error in " + path + ": " + e.what());
    }
    const std::size_t payload = 16 + hlen;
    for (const auto& entry : ck.meta.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
        Array<float> arr(shape);
        if (payload + off + arr.size() * 4 > s.size())
            throw IoError("truncated checkpoint (payload cut short at '" + name + "'): " + path);
        std::memcpy(arr.v.data(), s.data() + payload + off, arr.size() * 4);
        ck.tensors.emplace(name, std::move(arr));
    }
    return ck;
}

namespace ckptdetail {

inline const Array<float>& need(const CheckpointData& ck, const std::string& name) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw IoError("checkpoint missing tensor '" + name + "'");
    return it->second;
}

inline void load_into(ParamStore<float>& store, const CheckpointData& ck, const std::string& prefix) {
    for (Param<float>* p : store.all()) {
        const Array<float>& src = need(ck, prefix + p->name);
        if (src.shape != p->value.shape)
            throw IoError("checkpoint shape mismatch for '" + prefix + p->name + "': stored " +
                          shape_str(src.shape) + " vs model " + shape_str(p->value.shape));
        p->value = src;
    }
}

inline void dump_store(std::map<std::string, Array<float>>& out, ParamStore<float>& store,
                       const std::string& prefix) {
    for (Param<float>* p : store.all()) out.emplace(prefix + p->name, p->value);
}

inline void dump_opt(std::map<std::string, Array<float>>& out, const OptimState<float>& opt,
                     const std::string& prefix) {
    for (std::size_t i = 0; i < opt.m.size(); ++i) {
        out.emplace(prefix + "m." + std::to_string(i), opt.m[i]);
        out.emplace(prefix + "v." + std::to_string(i), opt.v[i]);
    }
}

inline void load_opt(OptimState<float>& opt, const CheckpointData& ck, const std::string& prefix) {
    for (std::size_t i = 0; i < opt.m.size(); ++i) {
        opt.m[i] = need(ck, prefix + "m." + std::to_string(i));
        opt.v[i] = need(ck, prefix + "v." + std::to_string(i));
    }
}

inline void dump_spec(std::map<std::string, Array<float>>& out, Discriminator<float>& d,
                      const std::string& prefix) {
    for (auto& [name, st] : d.spec) out.emplace(prefix + name + ".u", st.u);
}

inline void load_spec(Discriminator<float>& d, const CheckpointData& ck, const std::string& prefix) {
    for (auto& [name, st] : d.spec) st.u = need(ck, prefix + name + ".u");
}

}  // namespace ckptdetail

// ------------------------------------------------------------------------
// detector checkpoints

inline void save_detector(Detector<float>& det, const std::string& path) {
    nlohmann::json meta{{"kind", "detector"},
                        {"image_size", det.cfg.image_size},
                        {"num_classes", det.cfg.num_classes},
                        {"strides", det.cfg.strides},
                        {"ratios", det.cfg.ratios},
                        {"anchor_scale", det.cfg.anchor_scale},
                        {"fpn_channels", det.cfg.fpn_channels}};
    std::map<std::string, Array<float>> tensors;
    ckptdetail::dump_store(tensors, det.params, "");
    write_checkpoint(path, std::move(meta), tensors);
}

inline Detector<float> load_detector(const std::string& path) {
    CheckpointData ck = read_checkpoint(path);
    if (ck.meta.value("kind", "") != "detector")
        throw IoError("not a detector checkpoint: " + path);
    Detector<float> det;
    det.cfg.image_size = ck.meta.at("image_size").get<int>();
    det.cfg.num_classes = ck.meta.at("num_classes").get<int>();
    det.cfg.strides = ck.meta.at("strides").get<std::vector<int>>();
    det.cfg.ratios = ck.meta.at("ratios").get<std::vector<double>>();
    det.cfg.anchor_scale = ck.meta.at("anchor_scale").get<double>();
    det.cfg.fpn_channels = ck.meta.at("fpn_channels").get<int>();
    det.init(0);
    ckptdetail::load_into(det.params, ck, "");
    return det;
}

// ------------------------------------------------------------------------
// GAN bundle checkpoints

inline void save_bundle(GanBundle<float>& b, const TrainConfig& tc, const std::string& path) {
    nlohmann::json meta{{"kind", "gan"},
                        {"step", b.step},
                        {"opt_g_step", b.opt_g.step},
                        {"opt_d_step", b.opt_d.step},
                        {"config", config_to_string(tc)}};
    std::map<std::string, Array<float>> tensors;
    ckptdetail::dump_store(tensors, b.g_xy.params, "g_xy.");
    ckptdetail::dump_store(tensors, b.g_yx.params, "g_yx.");
    ckptdetail::dump_store(tensors, b.d_x.params, "d_x.");
    ckptdetail::dump_store(tensors, b.d_y.params, "d_y.");
    ckptdetail::dump_spec(tensors, b.d_x, "d_x.");
    ckptdetail::dump_spec(tensors, b.d_y, "d_y.");
    ckptdetail::dump_opt(tensors, b.opt_g, "opt_g.");
    ckptdetail::dump_opt(tensors, b.opt_d, "opt_d.");
    write_checkpoint(path, std::move(meta), tensors);
}

// returns the bundle and the TrainConfig snapshot it was saved with
inline std::pair<GanBundle<float>, TrainConfig> load_bundle(const std::string& path) {
    CheckpointData ck = read_checkpoint(path);
    if (ck.meta.value("kind", "") != "gan") throw IoError("not a GAN checkpoint: " + path);
    TrainConfig tc = config_from_string(ck.meta.at("config").get<std::string>());
    GanBundle<float> b;
    b.init(tc.seed);
    b.step = ck.meta.at("step").get<long long>();
    b.opt_g.step = ck.meta.at("opt_g_step").get<long long>();
    b.opt_d.step = ck.meta.at("opt_d_step").get<long long>();
    ckptdetail::load_into(b.g_xy.params, ck, "g_xy.");
    ckptdetail::load_into(b.g_yx.params, ck, "g_yx.");
    ckptdetail::load_into(b.d_x.params, ck, "d_x.");
    ckptdetail::load_into(b.d_y.params, ck, "d_y.");
    ckptdetail::load_spec(b.d_x, ck, "d_x.");
    ckptdetail::load_spec(b.d_y, ck, "d_y.");
    ckptdetail::load_opt(b.opt_g, ck, "opt_g.");
    ckptdetail::load_opt(b.opt_d, ck, "opt_d.");
    return {std::move(b), tc};
}

}  // namespace rg
