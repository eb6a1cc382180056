#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "retinagan/train/pipeline.hpp"

using namespace rg;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("rg_pipe_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

Corpus small_corpus(Domain d, std::uint64_t base_seed, int n = 6) {
    SynthConfig cfg;
    Corpus c;
    for (int i = 0; i < n; ++i)
        c.items.push_back(render(sample_scene(base_seed + static_cast<std::uint64_t>(i), cfg), d, 1, cfg));
    return c;
}

TrainConfig tiny_config(int steps) {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch = 1;
    tc.checkpoint_every = 0;
    return tc;
}

bool params_equal(std::vector<Param<float>*> a, std::vector<Param<float>*> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i]->value.v != b[i]->value.v) return false;
    return true;
}

}  // namespace

TEST_CASE("config round-trips losslessly and rejects junk") {
    TrainConfig c;
    c.steps = 123;
    c.lr = 3.14159e-4;
    c.lambda_prcp = 0.3;
    c.seed = 987654321;
    c.distort.hue = 0.123456789;
    std::string s = config_to_string(c);
    TrainConfig back = config_from_string(s);
    REQUIRE(config_to_string(back) == s);
    REQUIRE(back.steps == 123);
    REQUIRE(back.lr == c.lr);
    REQUIRE(back.distort.hue == c.distort.hue);

    REQUIRE_THROWS_WITH(config_from_string("bogus_key = 7\n"),
                        Catch::Matchers::ContainsSubstring("unknown key"));
    REQUIRE_THROWS_WITH(config_from_string("steps = banana\n"),
                        Catch::Matchers::ContainsSubstring("bad value"));
    REQUIRE_THROWS_AS(config_from_string("steps = -5\n"), IoError);
    // comments and blank lines are fine
    TrainConfig d = config_from_string("# comment\n\nsteps = 9\n");
    REQUIRE(d.steps == 9);
}

TEST_CASE("detector checkpoint round-trips bit-exactly") {
    std::string dir = temp_dir("det_ckpt");
    Detector<float> det;
    det.init(5);
    std::string path = dir + "/det.ckpt";
    save_detector(det, path);
    Detector<float> back = load_detector(path);
    REQUIRE(back.cfg.image_size == det.cfg.image_size);
    REQUIRE(back.grid.total() == det.grid.total());
    auto pa = det.params.all(), pb = back.params.all();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->name == pb[i]->name);
        REQUIRE(pa[i]->value.v == pb[i]->value.v);
    }
}

TEST_CASE("gan checkpoint round-trips parameters, optimizer and spectral state") {
    std::string dir = temp_dir("gan_ckpt");
    Corpus sim = small_corpus(Domain::Sim, 100), real = small_corpus(Domain::Real, 200);
    TrainConfig tc = tiny_config(2);
    tc.lambda_prcp = 0.0;  // no detector needed here
    GanBundle<float> b;
    b.init(tc.seed);
    train_retinagan(b, nullptr, sim, real, tc);
    std::string path = dir + "/gan.ckpt";
    save_bundle(b, tc, path);

    auto [back, tc2] = load_bundle(path);
    REQUIRE(tc2.steps == tc.steps);
    REQUIRE(back.step == b.step);
    REQUIRE(back.opt_g.step == b.opt_g.step);
    REQUIRE(params_equal(back.gen_params(), b.gen_params()));
    REQUIRE(params_equal(back.disc_params(), b.disc_params()));
    for (auto& [name, st] : b.d_x.spec) REQUIRE(back.d_x.spec.at(name).u.v == st.u.v);
    for (std::size_t i = 0; i < b.opt_g.m.size(); ++i) {
        REQUIRE(back.opt_g.m[i].v == b.opt_g.m[i].v);
        REQUIRE(back.opt_g.v[i].v == b.opt_g.v[i].v);
    }
}

TEST_CASE("checkpoint corruption is reported distinctly") {
    std::string dir = temp_dir("bad_ckpt");
    Detector<float> det;
    det.cfg.image_size = 32;
    det.init(1);
    std::string path = dir + "/det.ckpt";
    save_detector(det, path);
    auto bytes = read_file(path);

    SECTION("truncation") {
        for (std::size_t len : {std::size_t(3), std::size_t(12), bytes.size() - 40}) {
            std::string p = dir + "/trunc.ckpt";
            write_file(p, std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(len)));
            REQUIRE_THROWS_WITH(read_checkpoint(p), Catch::Matchers::ContainsSubstring("truncated"));
        }
    }
    SECTION("bad magic") {
        auto b2 = bytes;
        b2[0] = 'X';
        std::string p = dir + "/magic.ckpt";
        write_file(p, b2);
        REQUIRE_THROWS_WITH(read_checkpoint(p), Catch::Matchers::ContainsSubstring("magic"));
    }
    SECTION("unknown version") {
        auto b2 = bytes;
        b2[4] = 99;
        std::string p = dir + "/ver.ckpt";
        write_file(p, b2);
        REQUIRE_THROWS_WITH(read_checkpoint(p), Catch::Matchers::ContainsSubstring("version"));
    }
    SECTION("missing tensor") {
        CheckpointData ck = read_checkpoint(path);
        std::map<std::string, Array<float>> tensors(ck.tensors.begin(), ck.tensors.end());
        tensors.erase("bb1.w");
        nlohmann::json meta = ck.meta;
        meta.erase("tensors");
        std::string p = dir + "/missing.ckpt";
        write_checkpoint(p, meta, tensors);
        REQUIRE_THROWS_WITH(load_detector(p), Catch::Matchers::ContainsSubstring("missing tensor"));
    }
    SECTION("shape mismatch") {
        CheckpointData ck = read_checkpoint(path);
        std::map<std::string, Array<float>> tensors(ck.tensors.begin(), ck.tensors.end());
        tensors["bb1.w"] = Array<float>({2, 2});
        nlohmann::json meta = ck.meta;
        meta.erase("tensors");
        std::string p = dir + "/shape.ckpt";
        write_checkpoint(p, meta, tensors);
        REQUIRE_THROWS_WITH(load_detector(p), Catch::Matchers::ContainsSubstring("shape mismatch"));
    }
}

TEST_CASE("training is deterministic in config and seed") {
    Corpus sim = small_corpus(Domain::Sim, 300), real = small_corpus(Domain::Real, 400);
    Detector<float> det;
    det.init(7);
    TrainConfig tc = tiny_config(3);

    auto run = [&](std::vector<std::string>& log) {
        GanBundle<float> b;
        b.init(tc.seed);
        train_retinagan(b, &det, sim, real, tc,
                        [&](const LossReport& r) { log.push_back(loss_report_json(r)); });
        return b.gen_params();
    };
    std::vector<std::string> la, lb;
    GanBundle<float> ba, bb;
    ba.init(tc.seed);
    bb.init(tc.seed);
    train_retinagan(ba, &det, sim, real, tc, [&](const LossReport& r) { la.push_back(loss_report_json(r)); });
    train_retinagan(bb, &det, sim, real, tc, [&](const LossReport& r) { lb.push_back(loss_report_json(r)); });
    REQUIRE(la.size() == 3);
    REQUIRE(la == lb);
    REQUIRE(params_equal(ba.gen_params(), bb.gen_params()));
    REQUIRE(params_equal(ba.disc_params(), bb.disc_params()));
}

TEST_CASE("detector stays frozen through GAN training") {
    Corpus sim = small_corpus(Domain::Sim, 500), real = small_corpus(Domain::Real, 600);
    Detector<float> det;
    det.init(8);
    std::vector<std::vector<float>> before;
    for (Param<float>* p : det.params.all()) before.push_back(p->value.v);

    TrainConfig tc = tiny_config(2);
    GanBundle<float> b;
    b.init(1);
    train_retinagan(b, &det, sim, real, tc);
    auto plist = det.params.all();
    for (std::size_t i = 0; i < plist.size(); ++i) REQUIRE(plist[i]->value.v == before[i]);
}

TEST_CASE("resumed training matches the uninterrupted trajectory") {
    std::string dir = temp_dir("resume");
    Corpus sim = small_corpus(Domain::Sim, 700), real = small_corpus(Domain::Real, 800);
    TrainConfig tc = tiny_config(6);
    tc.lambda_prcp = 0.0;

    std::vector<std::string> full_log;
    GanBundle<float> full;
    full.init(tc.seed);
    train_retinagan(full, nullptr, sim, real, tc,
                    [&](const LossReport& r) { full_log.push_back(loss_report_json(r)); });

    TrainConfig half = tc;
    half.steps = 3;
    GanBundle<float> first;
    first.init(tc.seed);
    train_retinagan(first, nullptr, sim, real, half);
    save_bundle(first, tc, dir + "/mid.ckpt");

    auto [resumed, rtc] = load_bundle(dir + "/mid.ckpt");
    REQUIRE(resumed.step == 3);
    std::vector<std::string> tail_log;
    train_retinagan(resumed, nullptr, sim, real, rtc,
                    [&](const LossReport& r) { tail_log.push_back(loss_report_json(r)); });
    REQUIRE(tail_log.size() == 3);
    REQUIRE(std::vector<std::string>(full_log.begin() + 3, full_log.end()) == tail_log);
    REQUIRE(params_equal(resumed.gen_params(), full.gen_params()));
    REQUIRE(params_equal(resumed.disc_params(), full.disc_params()));
}

TEST_CASE("steps already reached leaves the bundle untouched") {
    Corpus sim = small_corpus(Domain::Sim, 900), real = small_corpus(Domain::Real, 1000);
    TrainConfig tc = tiny_config(1);
    tc.lambda_prcp = 0.0;
    GanBundle<float> b;
    b.init(2);
    b.step = 1;  // at the target already
    std::vector<std::vector<float>> before;
    for (Param<float>* p : b.gen_params()) before.push_back(p->value.v);
    int reports = 0;
    train_retinagan(b, nullptr, sim, real, tc, [&](const LossReport&) { ++reports; });
    REQUIRE(reports == 0);
    auto plist = b.gen_params();
    for (std::size_t i = 0; i < plist.size(); ++i) REQUIRE(plist[i]->value.v == before[i]);
}

TEST_CASE("non-finite parameters abort with the step number") {
    Corpus sim = small_corpus(Domain::Sim, 1100), real = small_corpus(Domain::Real, 1200);
    TrainConfig tc = tiny_config(1);
    tc.lambda_prcp = 0.0;
    GanBundle<float> b;
    b.init(3);
    b.g_xy.params.at("e1.w").value.v[0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_WITH(train_retinagan(b, nullptr, sim, real, tc),
                        Catch::Matchers::ContainsSubstring("step 0"));
}

TEST_CASE("translate_dataset copies labels and tags members") {
    std::string src_dir = temp_dir("trans_src");
    std::string out_dir = temp_dir("trans_out");
    SynthConfig cfg;
    std::vector<Scene> scenes;
    for (std::uint64_t s = 50; s < 55; ++s) scenes.push_back(sample_scene(s, cfg));
    export_dataset(scenes, {Domain::Sim}, src_dir, cfg, 9);
    Dataset src = load_dataset(src_dir);

    GanBundle<float> m0, m1;
    m0.init(11);
    m1.init(12);
    TranslateStats stats;
    std::string mpath = translate_dataset({&m0, &m1}, src, out_dir, Direction::Sim2Real, &stats);
    REQUIRE(stats.mean_psnr > 0.0);
    REQUIRE(std::isfinite(stats.mean_psnr));

    Dataset out = load_dataset(out_dir);
    REQUIRE(out.records.size() == src.records.size() * 2);
    for (std::size_t i = 0; i < out.records.size(); ++i) {
        const DatasetRecord& o = out.records[i];
        const DatasetRecord& s = src.records[i / 2];
        REQUIRE(o.seed == s.seed);
        REQUIRE(o.classes == s.classes);
        REQUIRE(o.domain == Domain::Real);
        REQUIRE(o.boxes.size() == s.boxes.size());
        for (std::size_t k = 0; k < o.boxes.size(); ++k) {
            REQUIRE(o.boxes[k].ymin == s.boxes[k].ymin);
            REQUIRE(o.boxes[k].xmin == s.boxes[k].xmin);
            REQUIRE(o.boxes[k].ymax == s.boxes[k].ymax);
            REQUIRE(o.boxes[k].xmax == s.boxes[k].xmax);
        }
    }
    // member provenance is recorded in the manifest
    std::ifstream f(mpath);
    nlohmann::json manifest;
    f >> manifest;
    REQUIRE(manifest[0].at("member").get<int>() == 0);
    REQUIRE(manifest[1].at("member").get<int>() == 1);

    // two members produce different translations
    Image a = out.load_image(0), bimg = out.load_image(1);
    REQUIRE(a.px != bimg.px);
}

TEST_CASE("ensemble members differ and follow the documented schedule") {
    std::string dir = temp_dir("ensemble");
    Corpus sim = small_corpus(Domain::Sim, 1300, 4), real = small_corpus(Domain::Real, 1400, 4);
    Detector<float> det;
    det.init(9);
    TrainConfig tc = tiny_config(2);
    auto paths = train_ensemble(&det, sim, real, tc, 3, dir);
    REQUIRE(paths.size() == 3);

    std::vector<TrainConfig> cfgs;
    std::vector<GanBundle<float>> bundles;
    for (const auto& p : paths) {
        auto [b, c] = load_bundle(p);
        bundles.push_back(std::move(b));
        cfgs.push_back(c);
    }
    REQUIRE(cfgs[0].lambda_prcp == 0.1);
    REQUIRE(cfgs[1].lambda_prcp == 0.3);
    REQUIRE(cfgs[2].lambda_prcp == 1.0);
    REQUIRE(cfgs[0].seed == tc.seed);
    REQUIRE(cfgs[1].seed == tc.seed + 1);
    REQUIRE(!params_equal(bundles[0].gen_params(), bundles[1].gen_params()));
    REQUIRE(!params_equal(bundles[1].gen_params(), bundles[2].gen_params()));
}
