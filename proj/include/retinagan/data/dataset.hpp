#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "retinagan/image/png_io.hpp"
#include "retinagan/synth/scene.hpp"

namespace rg {

struct DatasetRecord {
    std::string image;  // path relative to the dataset dir
    Domain domain = Domain::Sim;
    std::uint64_t seed = 0;
    std::vector<Box> boxes;
    std::vector<int> classes;
};

struct Dataset {
    std::string dir;
    std::vector<DatasetRecord> records;

    Image load_image(std::size_t i) const {
        return load_png((std::filesystem::path(dir) / records[i].image).string());
    }
};

namespace datadetail {

inline nlohmann::json record_to_json(const DatasetRecord& r) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.ymin, b.xmin, b.ymax, b.xmax});
    return nlohmann::json{{"image", r.image},
                          {"domain", domain_name(r.domain)},
                          {"seed", r.seed},
                          {"boxes", boxes},
                          {"classes", r.classes}};
}

inline DatasetRecord record_from_json(const nlohmann::json& j, std::size_t idx) {
    try {
        DatasetRecord r;
        r.image = j.at("image").get<std::string>();
        std::string d = j.at("domain").get<std::string>();
        if (d != "sim" && d != "real") throw IoError("bad domain tag '" + d + "'");
        r.domain = d == "sim" ? Domain::Sim : Domain::Real;
        r.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& b : j.at("boxes")) {
            Box box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
            if (!box.ordered() || box.ymin < 0 || box.xmin < 0 || box.ymax > 1 || box.xmax > 1)
                throw IoError("box coordinates out of range");
            r.boxes.push_back(box);
        }
        r.classes = j.at("classes").get<std::vector<int>>();
        if (r.classes.size() != r.boxes.size()) throw IoError("boxes/classes length mismatch");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest record " + std::to_string(idx) + " malformed: " + e.what());
    } catch (const IoError& e) {
        throw IoError("manifest record " + std::to_string(idx) + " malformed: " + e.what());
    }
}

}  // namespace datadetail

// One PNG per (scene, style); records in scene-major, style-minor order.
// Returns the manifest path.
inline std::string export_dataset(const std::vector<Scene>& scenes, const std::vector<Domain>& styles,
                                  const std::string& dir, const SynthConfig& cfg,
                                  std::uint64_t style_seed = 0) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& scene : scenes)
        for (Domain style : styles) {
            LabeledImage li = render(scene, style, style_seed, cfg);
            DatasetRecord r;
            r.image = std::string("images/") + std::to_string(scene.seed) + "_" + domain_name(style) + ".png";
            r.domain = style;
            r.seed = scene.seed;
            r.boxes = li.boxes;
            r.classes = li.classes;
            save_png((fs::path(dir) / r.image).string(), li.pixels);
            manifest.push_back(datadetail::record_to_json(r));
        }
    std::string mpath = (fs::path(dir) / "manifest.json").string();
    std::ofstream f(mpath, std::ios::trunc);
    if (!f) throw IoError("cannot write manifest: " + mpath);
    f << manifest.dump(1) << "\n";
    return mpath;
}

inline Dataset load_dataset(const std::string& dir) {
    std::string mpath = (std::filesystem::path(dir) / "manifest.json").string();
    std::ifstream f(mpath);
    if (!f) throw IoError("cannot open manifest: " + mpath);
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest parse error in " + mpath + ": " + e.what());
    }
    if (!manifest.is_array()) throw IoError("manifest root must be an array: " + mpath);
    Dataset ds;
    ds.dir = dir;
    for (std::size_t i = 0; i < manifest.size(); ++i)
        ds.records.push_back(datadetail::record_from_json(manifest[i], i));
    return ds;
}

// In-memory corpus for training loops; images decoded once.
struct Corpus {
    std::vector<LabeledImage> items;

    static Corpus from_dataset(const Dataset& ds) {
        Corpus c;
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            const auto& r = ds.records[i];
            LabeledImage li;
            li.pixels = ds.load_image(i);
            li.boxes = r.boxes;
            li.classes = r.classes;
            li.domain = r.domain;
            li.seed = r.seed;
            c.items.push_back(std::move(li));
        }
        return c;
    }
};

}  // namespace rg
