#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "retinagan/eval/report.hpp"

using namespace rg;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

Corpus load_corpus_dirs(const std::string& dirs) {
    Corpus all;
    for (const std::string& dir : split_list(dirs)) {
        Corpus c = Corpus::from_dataset(load_dataset(dir));
        for (auto& li : c.items) all.items.push_back(std::move(li));
    }
    if (all.items.empty()) throw IoError("no images found in: " + dirs);
    return all;
}

Corpus filter_domain(const Corpus& c, Domain d) {
    Corpus out;
    for (const auto& li : c.items)
        if (li.domain == d) out.items.push_back(li);
    return out;
}

int cmd_gen_data(const std::string& out, int num, std::uint64_t seed, const std::string& style,
                 int size) {
    SynthConfig cfg;
    cfg.image_size = size;
    std::vector<Domain> styles;
    if (style == "sim")
        styles = {Domain::Sim};
    else if (style == "real")
        styles = {Domain::Real};
    else if (style == "paired")
        styles = {Domain::Sim, Domain::Real};
    else
        throw IoError("style must be sim, real or paired, got '" + style + "'");
    std::vector<Scene> scenes;
    for (int i = 0; i < num; ++i) scenes.push_back(sample_scene(seed + static_cast<std::uint64_t>(i), cfg));
    std::string manifest = export_dataset(scenes, styles, out, cfg, seed);
    std::cout << "wrote " << scenes.size() * styles.size() << " images, manifest " << manifest
              << "\n";
    return 0;
}

int cmd_train_detector(const std::string& data, const std::string& out, int steps,
                       std::uint64_t seed) {
    Corpus corpus = load_corpus_dirs(data);
    Detector<float> det;
    det.cfg.image_size = corpus.items.front().pixels.h;
    det.init(seed);
    DetTrainConfig tc;
    tc.steps = steps;
    tc.seed = seed;
    train_detector(det, corpus, tc, [&](int step, double loss) {
        if (step % 100 == 0 || step + 1 == steps)
            std::cout << "step " << step << " loss " << loss << "\n";
    });
    save_detector(det, out);
    std::cout << "saved " << out << "\n";
    return 0;
}

int cmd_detect(const std::string& ckpt, const std::string& image, const std::string& out) {
    Detector<float> det = load_detector(ckpt);
    Image img = load_png(image);
    std::vector<Detection> dets = detect_image(det, img);
    nlohmann::json boxes = nlohmann::json::array(), scores = nlohmann::json::array(),
                   classes = nlohmann::json::array();
    for (const Detection& d : dets) {
        boxes.push_back({d.box.ymin, d.box.xmin, d.box.ymax, d.box.xmax});
        scores.push_back(d.score);
        classes.push_back(d.class_id);
    }
    nlohmann::json j{{"boxes", boxes}, {"scores", scores}, {"classes", classes}};
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + out);
    f << j.dump(1) << "\n";
    std::cout << dets.size() << " detections -> " << out << "\n";
    return 0;
}

struct GanArgs {
    std::string sim, real, detector, out;
    int steps = 5000;
    std::uint64_t seed = 0;
    double lambda_prcp = 0.1;
    double lambda_cycle = 10.0;
    int batch = 2;
};

void add_gan_options(CLI::App* cmd, GanArgs& a) {
    cmd->add_option("--sim", a.sim, "sim-domain dataset directory")->required();
    cmd->add_option("--real", a.real, "real-domain dataset directory")->required();
    cmd->add_option("--detector", a.detector, "frozen detector checkpoint");
    cmd->add_option("--out", a.out, "output directory")->required();
    cmd->add_option("--steps", a.steps, "training steps");
    cmd->add_option("--seed", a.seed, "seed");
    cmd->add_option("--lambda-prcp", a.lambda_prcp, "perception loss weight");
    cmd->add_option("--lambda-cycle", a.lambda_cycle, "cycle loss weight");
    cmd->add_option("--batch", a.batch, "images per domain per step");
}

TrainConfig gan_config(const GanArgs& a) {
    TrainConfig tc;
    tc.steps = a.steps;
    tc.seed = a.seed;
    tc.lambda_prcp = a.lambda_prcp;
    tc.lambda_cycle = a.lambda_cycle;
    tc.batch = a.batch;
    return tc;
}

int cmd_train_gan(const GanArgs& a) {
    namespace fs = std::filesystem;
    Corpus sim = filter_domain(load_corpus_dirs(a.sim), Domain::Sim);
    Corpus real = filter_domain(load_corpus_dirs(a.real), Domain::Real);
    TrainConfig tc = gan_config(a);
    Detector<float> det;
    Detector<float>* det_ptr = nullptr;
    if (!a.detector.empty()) {
        det = load_detector(a.detector);
        det_ptr = &det;
    }
    fs::create_directories(a.out);
    const std::string ckpt_path = (fs::path(a.out) / "gan.ckpt").string();
    std::ofstream log((fs::path(a.out) / "losses.jsonl").string(), std::ios::trunc);
    GanBundle<float> b;
    b.init(tc.seed);
    train_retinagan(
        b, det_ptr, sim, real, tc,
        [&](const LossReport& r) {
            log << loss_report_json(r) << "\n";
            if (r.step % 100 == 0)
                std::cout << "step " << r.step << " total_g " << r.total_g << " total_d "
                          << r.total_d << "\n";
        },
        [&](GanBundle<float>& bundle) { save_bundle(bundle, tc, ckpt_path); });
    save_bundle(b, tc, ckpt_path);
    save_config(tc, (fs::path(a.out) / "config.txt").string());
    std::cout << "saved " << ckpt_path << "\n";
    return 0;
}

int cmd_ensemble(const GanArgs& a, int n) {
    Corpus sim = filter_domain(load_corpus_dirs(a.sim), Domain::Sim);
    Corpus real = filter_domain(load_corpus_dirs(a.real), Domain::Real);
    TrainConfig tc = gan_config(a);
    Detector<float> det;
    Detector<float>* det_ptr = nullptr;
    if (!a.detector.empty()) {
        det = load_detector(a.detector);
        det_ptr = &det;
    }
    auto paths = train_ensemble(det_ptr, sim, real, tc, n, a.out,
                                [&](int member, const LossReport& r) {
                                    if (r.step % 100 == 0)
                                        std::cout << "member " << member << " step " << r.step
                                                  << " total_g " << r.total_g << "\n";
                                });
    for (const auto& p : paths) std::cout << "saved " << p << "\n";
    return 0;
}

int cmd_translate(const std::string& ckpts, const std::string& data, const std::string& out,
                  const std::string& direction) {
    Direction dir = parse_direction(direction);
    std::vector<GanBundle<float>> bundles;
    for (const std::string& p : split_list(ckpts)) bundles.push_back(load_bundle(p).first);
    if (bundles.empty()) throw IoError("no checkpoints given");
    std::vector<GanBundle<float>*> members;
    for (auto& b : bundles) members.push_back(&b);
    Dataset in = load_dataset(data);
    TranslateStats stats;
    std::string manifest = translate_dataset(members, in, out, dir, &stats);
    std::cout << "translated " << in.records.size() << " images x " << members.size()
              << " members, mean psnr " << stats.mean_psnr << ", manifest " << manifest << "\n";
    return 0;
}

int cmd_eval(const std::string& detector, const std::string& ckpt, const std::string& data,
             const std::string& paired, const std::string& out, std::uint64_t seed) {
    Detector<float> det = load_detector(detector);
    auto [bundle, tc] = load_bundle(ckpt);
    Dataset paired_ds = load_dataset(paired);
    Dataset data_ds;
    const Dataset* data_ptr = nullptr;
    if (!data.empty()) {
        data_ds = load_dataset(data);
        data_ptr = &data_ds;
    }
    EvalReport r = run_eval(det, bundle, paired_ds, out, seed, config_to_string(tc), data_ptr);
    std::cout << "consistency_miou " << r.consistency_miou << "\n"
              << "class_agreement " << r.class_agreement << "\n"
              << "gt_map_translated " << r.gt_map_translated << "\n"
              << "gt_map_source " << r.gt_map_source << "\n"
              << "domain_score " << r.domain_score << " (source " << r.domain_score_source << ")\n"
              << "classifier_val_accuracy " << r.classifier_val_accuracy << "\n";
    if (!r.domain_score_valid) {
        std::cerr << "domain classifier underfit (val accuracy < 0.9); domain_score flagged invalid\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RetinaGAN: cycle-consistent sim-to-real translation with a perception loss"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_out, gd_style = "paired";
    int gd_num = 0, gd_size = 64;
    std::uint64_t gd_seed = 0;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    gen->add_option("--out", gd_out)->required();
    gen->add_option("--num", gd_num, "number of scenes")->required();
    gen->add_option("--seed", gd_seed);
    gen->add_option("--style", gd_style, "sim, real or paired");
    gen->add_option("--size", gd_size, "image resolution");

    // train-detector
    std::string td_data, td_out;
    int td_steps = 5000;
    std::uint64_t td_seed = 0;
    auto* traind = app.add_subcommand("train-detector", "train the micro-detector");
    traind->add_option("--data", td_data, "dataset dir(s), comma separated")->required();
    traind->add_option("--out", td_out)->required();
    traind->add_option("--steps", td_steps);
    traind->add_option("--seed", td_seed);

    // detect
    std::string de_ckpt, de_image, de_out;
    auto* detect = app.add_subcommand("detect", "run the detector on one image");
    detect->add_option("--ckpt", de_ckpt)->required();
    detect->add_option("--image", de_image)->required();
    detect->add_option("--out", de_out, "output json path")->required();

    // train-gan / ensemble
    GanArgs ga, ea;
    auto* traing = app.add_subcommand("train-gan", "train one RetinaGAN bundle");
    add_gan_options(traing, ga);
    int en_n = 3;
    auto* ens = app.add_subcommand("ensemble", "train an ensemble of bundles");
    add_gan_options(ens, ea);
    ens->add_option("--n", en_n, "ensemble size");

    // translate
    std::string tr_ckpt, tr_data, tr_out, tr_dir = "sim2real";
    auto* trans = app.add_subcommand("translate", "translate a dataset through generator(s)");
    trans->add_option("--ckpt", tr_ckpt, "checkpoint(s), comma separated")->required();
    trans->add_option("--data", tr_data)->required();
    trans->add_option("--out", tr_out)->required();
    trans->add_option("--direction", tr_dir, "sim2real or real2sim");

    // eval
    std::string ev_det, ev_ckpt, ev_data, ev_paired, ev_out;
    std::uint64_t ev_seed = 0;
    auto* ev = app.add_subcommand("eval", "evaluate translation quality");
    ev->add_option("--detector", ev_det)->required();
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--data", ev_data, "sim dataset to translate (default: paired sim half)");
    ev->add_option("--paired", ev_paired, "paired oracle dataset")->required();
    ev->add_option("--out", ev_out)->required();
    ev->add_option("--seed", ev_seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gd_out, gd_num, gd_seed, gd_style, gd_size);
        if (traind->parsed()) return cmd_train_detector(td_data, td_out, td_steps, td_seed);
        if (detect->parsed()) return cmd_detect(de_ckpt, de_image, de_out);
        if (traing->parsed()) return cmd_train_gan(ga);
        if (ens->parsed()) return cmd_ensemble(ea, en_n);
        if (trans->parsed()) return cmd_translate(tr_ckpt, tr_data, tr_out, tr_dir);
        if (ev->parsed()) return cmd_eval(ev_det, ev_ckpt, ev_data, ev_paired, ev_out, ev_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
