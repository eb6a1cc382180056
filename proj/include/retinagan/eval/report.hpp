#pragma once

#include <fstream>

#include "retinagan/eval/metrics.hpp"

namespace rg {

struct EvalImageRecord {
    std::string image;
    int detections_source = 0;
    int detections_translated = 0;
    double pair_miou = 0.0;
};

struct EvalReport {
    double consistency_miou = 0.0;
    double class_agreement = 0.0;
    double gt_map_translated = 0.0;
    double gt_map_source = 0.0;
    double domain_score = 0.0;
    double domain_score_source = 0.0;  // same classifier on the untranslated images
    double classifier_val_accuracy = 0.0;
    bool domain_score_valid = false;  // false when the classifier underfits
    std::vector<EvalImageRecord> records;
    std::string config;  // echo of the GAN checkpoint's training config

    bool operator==(const EvalReport& o) const {
        auto rec_eq = [&] {
            if (records.size() != o.records.size()) return false;
            for (std::size_t i = 0; i < records.size(); ++i)
                if (records[i].image != o.records[i].image ||
                    records[i].detections_source != o.records[i].detections_source ||
                    records[i].detections_translated != o.records[i].detections_translated ||
                    records[i].pair_miou != o.records[i].pair_miou)
                    return false;
            return true;
        };
        return consistency_miou == o.consistency_miou && class_agreement == o.class_agreement &&
               gt_map_translated == o.gt_map_translated && gt_map_source == o.gt_map_source &&
               domain_score == o.domain_score && domain_score_source == o.domain_score_source &&
               classifier_val_accuracy == o.classifier_val_accuracy &&
               domain_score_valid == o.domain_score_valid && config == o.config && rec_eq();
    }
};

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json recs = nlohmann::json::array();
    for (const EvalImageRecord& rec : r.records)
        recs.push_back({{"image", rec.image},
                        {"detections_source", rec.detections_source},
                        {"detections_translated", rec.detections_translated},
                        {"pair_miou", rec.pair_miou}});
    return {{"consistency_miou", r.consistency_miou},
            {"class_agreement", r.class_agreement},
            {"gt_map_translated", r.gt_map_translated},
            {"gt_map_source", r.gt_map_source},
            {"domain_score", r.domain_score},
            {"domain_score_source", r.domain_score_source},
            {"classifier_val_accuracy", r.classifier_val_accuracy},
            {"domain_score_valid", r.domain_score_valid},
            {"records", std::move(recs)},
            {"config", r.config}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.consistency_miou = j.at("consistency_miou").get<double>();
    r.class_agreement = j.at("class_agreement").get<double>();
    r.gt_map_translated = j.at("gt_map_translated").get<double>();
    r.gt_map_source = j.at("gt_map_source").get<double>();
    r.domain_score = j.at("domain_score").get<double>();
    r.domain_score_source = j.at("domain_score_source").get<double>();
    r.classifier_val_accuracy = j.at("classifier_val_accuracy").get<double>();
    r.domain_score_valid = j.at("domain_score_valid").get<bool>();
    for (const auto& e : j.at("records")) {
        EvalImageRecord rec;
        rec.image = e.at("image").get<std::string>();
        rec.detections_source = e.at("detections_source").get<int>();
        rec.detections_translated = e.at("detections_translated").get<int>();
        rec.pair_miou = e.at("pair_miou").get<double>();
        r.records.push_back(std::move(rec));
    }
    r.config = j.at("config").get<std::string>();
    return r;
}

namespace evaldetail {

inline void draw_box(Image& img, const Box& b, float r, float g, float bl) {
    auto clampi = [&](double v, int hi) {
        return std::min(hi - 1, std::max(0, static_cast<int>(std::floor(v))));
    };
    const int y0 = clampi(b.ymin * img.h, img.h), y1 = clampi(b.ymax * img.h, img.h);
    const int x0 = clampi(b.xmin * img.w, img.w), x1 = clampi(b.xmax * img.w, img.w);
    auto put = [&](int y, int x) {
        img.at(y, x)[0] = r;
        img.at(y, x)[1] = g;
        img.at(y, x)[2] = bl;
    };
    for (int x = x0; x <= x1; ++x) {
        put(y0, x);
        put(y1, x);
    }
    for (int y = y0; y <= y1; ++y) {
        put(y, x0);
        put(y, x1);
    }
}

// class id -> distinct saturated color
inline void class_color(int c, float& r, float& g, float& b) {
    static const float palette[][3] = {
        {1.0f, 0.2f, 0.2f}, {0.2f, 1.0f, 0.2f}, {0.3f, 0.5f, 1.0f},
        {1.0f, 1.0f, 0.2f}, {1.0f, 0.3f, 1.0f}, {0.2f, 1.0f, 1.0f},
    };
    const auto& p = palette[static_cast<std::size_t>(c) % 6];
    r = p[0];
    g = p[1];
    b = p[2];
}

// original | translated | translated with detection overlays
inline Image overlay_strip(const Image& original, const Image& translated,
                           const std::vector<Detection>& dets) {
    Image strip(original.h, original.w * 3);
    Image marked = translated;
    for (const Detection& d : dets) {
        float r, g, b;
        class_color(d.class_id, r, g, b);
        draw_box(marked, d.box, r, g, b);
    }
    for (int y = 0; y < original.h; ++y)
        for (int x = 0; x < original.w; ++x)
            for (int c = 0; c < 3; ++c) {
                strip.at(y, x)[c] = original.at(y, x)[c];
                strip.at(y, x + original.w)[c] = translated.at(y, x)[c];
                strip.at(y, x + 2 * original.w)[c] = marked.at(y, x)[c];
            }
    return strip;
}

}  // namespace evaldetail

inline constexpr int kOverlayCount = 8;

// writes report.json, summary.csv and overlays/ under out_dir
inline void emit_report(const EvalReport& r, const std::string& out_dir,
                        const std::vector<Image>& originals, const std::vector<Image>& translated,
                        Detector<float>* det) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "overlays", ec);
    if (ec) throw IoError("cannot create report directory " + out_dir + ": " + ec.message());

    {
        std::ofstream f((fs::path(out_dir) / "report.json").string(), std::ios::trunc);
        if (!f) throw IoError("cannot write report.json under " + out_dir);
        f << report_to_json(r).dump(1) << "\n";
    }
    {
        std::ofstream f((fs::path(out_dir) / "summary.csv").string(), std::ios::trunc);
        if (!f) throw IoError("cannot write summary.csv under " + out_dir);
        f << "metric,value\n";
        f << "consistency_miou," << r.consistency_miou << "\n";
        f << "class_agreement," << r.class_agreement << "\n";
        f << "gt_map_translated," << r.gt_map_translated << "\n";
        f << "gt_map_source," << r.gt_map_source << "\n";
        f << "domain_score," << r.domain_score << "\n";
        f << "domain_score_source," << r.domain_score_source << "\n";
        f << "classifier_val_accuracy," << r.classifier_val_accuracy << "\n";
        f << "domain_score_valid," << (r.domain_score_valid ? 1 : 0) << "\n";
    }
    const std::size_t n = std::min<std::size_t>(kOverlayCount,
                                                std::min(originals.size(), translated.size()));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Detection> dets;
        if (det != nullptr) dets = detect_image(*det, translated[i]);
        Image strip = evaldetail::overlay_strip(originals[i], translated[i], dets);
        save_png((fs::path(out_dir) / "overlays" / (std::to_string(i) + ".png")).string(), strip);
    }
}

// ------------------------------------------------------------------------
// full evaluation pass

// paired: oracle set carrying both domains per seed; its real half (and
// sim half) anchors the domain classifier. The translated-and-scored sim
// set defaults to the paired sim half, or comes from eval_data when given.
inline EvalReport run_eval(Detector<float>& det, GanBundle<float>& bundle, const Dataset& paired,
                           const std::string& out_dir, std::uint64_t seed,
                           const std::string& config_echo = "",
                           const Dataset* eval_data = nullptr) {
    std::vector<std::size_t> paired_sim_idx, real_idx;
    for (std::size_t i = 0; i < paired.records.size(); ++i)
        (paired.records[i].domain == Domain::Sim ? paired_sim_idx : real_idx).push_back(i);
    if (paired_sim_idx.empty() || real_idx.empty())
        throw IoError("eval needs both sim and real records in the paired set");

    const Dataset& eval_src = eval_data != nullptr ? *eval_data : paired;
    std::vector<std::size_t> sim_idx;
    if (eval_data != nullptr) {
        for (std::size_t i = 0; i < eval_src.records.size(); ++i)
            if (eval_src.records[i].domain == Domain::Sim) sim_idx.push_back(i);
        if (sim_idx.empty()) throw IoError("eval data has no sim records");
    } else {
        sim_idx = paired_sim_idx;
    }

    std::vector<Image> sim_imgs, real_imgs, paired_sim_imgs;
    Corpus sim_corpus;
    for (std::size_t i : sim_idx) {
        LabeledImage li;
        li.pixels = eval_src.load_image(i);
        li.boxes = eval_src.records[i].boxes;
        li.classes = eval_src.records[i].classes;
        li.domain = Domain::Sim;
        li.seed = eval_src.records[i].seed;
        sim_imgs.push_back(li.pixels);
        sim_corpus.items.push_back(std::move(li));
    }
    for (std::size_t i : paired_sim_idx) paired_sim_imgs.push_back(paired.load_image(i));
    for (std::size_t i : real_idx) real_imgs.push_back(paired.load_image(i));

    // translate the sim half
    std::vector<Image> translated;
    Corpus trans_corpus = sim_corpus;
    for (std::size_t i = 0; i < sim_imgs.size(); ++i) {
        Tape<float> tp;
        Var<float> out =
            bundle.g_xy.forward(tp, tp.leaf(images_to_batch<float>({sim_imgs[i]})), false);
        translated.push_back(batch_to_image(out.val(), 0));
        trans_corpus.items[i].pixels = translated.back();
        trans_corpus.items[i].domain = Domain::Real;
    }

    EvalReport r;
    r.config = config_echo;
    ConsistencyResult cons = detection_consistency(det, sim_imgs, translated);
    r.consistency_miou = cons.miou;
    r.class_agreement = cons.class_agreement;
    r.gt_map_source = gt_preservation(det, sim_corpus);
    r.gt_map_translated = gt_preservation(det, trans_corpus);

    // domain classifier: first halves train, second halves validate
    const std::size_t sim_half = paired_sim_imgs.size() / 2, real_half = real_imgs.size() / 2;
    std::vector<Image> sim_tr(paired_sim_imgs.begin(),
                              paired_sim_imgs.begin() + static_cast<long>(sim_half));
    std::vector<Image> sim_val(paired_sim_imgs.begin() + static_cast<long>(sim_half),
                               paired_sim_imgs.end());
    std::vector<Image> real_tr(real_imgs.begin(), real_imgs.begin() + static_cast<long>(real_half));
    std::vector<Image> real_val(real_imgs.begin() + static_cast<long>(real_half), real_imgs.end());
    DomainClassifier clf;
    clf.init(derive_seed(seed, 60, 0));
    DomainTrainConfig dtc;
    dtc.seed = seed;
    train_domain_classifier(clf, sim_tr, real_tr, dtc);
    r.classifier_val_accuracy = domain_val_accuracy(clf, sim_val, real_val);
    r.domain_score_valid = r.classifier_val_accuracy >= 0.9;
    r.domain_score = domain_score(clf, translated);
    r.domain_score_source = domain_score(clf, sim_imgs);

    for (std::size_t i = 0; i < sim_imgs.size(); ++i) {
        EvalImageRecord rec;
        rec.image = eval_src.records[sim_idx[i]].image;
        std::vector<Detection> da = detect_image(det, sim_imgs[i]);
        std::vector<Detection> db = detect_image(det, translated[i]);
        rec.detections_source = static_cast<int>(da.size());
        rec.detections_translated = static_cast<int>(db.size());
        ConsistencyResult one = detection_consistency(det, {sim_imgs[i]}, {translated[i]});
        rec.pair_miou = one.miou;
        r.records.push_back(std::move(rec));
    }

    emit_report(r, out_dir, sim_imgs, translated, &det);
    return r;
}

}  // namespace rg
