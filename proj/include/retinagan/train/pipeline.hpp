#pragma once

#include <functional>
#include <iomanip>
#include <sstream>

#include "retinagan/data/dataset.hpp"
#include "retinagan/train/checkpoint.hpp"

namespace rg {

namespace traindetail {

// random crop then nearest resize back to full resolution
inline Image crop_resize(const Image& in, int top, int left, int crop, int out_size) {
    Image cropped(crop, crop);
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x)
            for (int c = 0; c < 3; ++c) cropped.at(y, x)[c] = in.at(top + y, left + x)[c];
    if (crop == out_size) return cropped;
    Image out(out_size, out_size);
    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x) {
            const int sy = y * crop / out_size, sx = x * crop / out_size;
            for (int c = 0; c < 3; ++c) out.at(y, x)[c] = cropped.at(sy, sx)[c];
        }
    return out;
}

inline Array<float> sample_batch(const Corpus& corpus, const TrainConfig& tc, std::uint64_t stream,
                                 int step) {
    std::vector<Image> imgs;
    for (int i = 0; i < tc.batch; ++i) {
        Rng rng(derive_seed(tc.seed, stream, static_cast<std::uint64_t>(step) * 4096 + static_cast<std::uint64_t>(i)));
        const Image& src = corpus.items[static_cast<std::size_t>(rng.uniform_int(corpus.items.size()))].pixels;
        const int span = tc.image_size - tc.crop;
        const int top = span > 0 ? static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span) + 1)) : 0;
        const int left = span > 0 ? static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span) + 1)) : 0;
        Image img = crop_resize(src, top, left, tc.crop, tc.image_size);
        img = photometric_distort(img, rng.next_u64(), tc.distort);
        img.clip01();
        imgs.push_back(std::move(img));
    }
    return images_to_batch<float>(imgs);
}

inline void check_term(double v, const char* term, long long step) {
    if (!std::isfinite(v))
        throw EngineError("non-finite loss at step " + std::to_string(step) + " in term '" + term + "'");
}

}  // namespace traindetail

inline std::string loss_report_json(const LossReport& r) {
    std::ostringstream out;
    out << std::setprecision(9)
        << "{\"step\":" << r.step << ",\"g_adv_xy\":" << r.g_adv_xy << ",\"g_adv_yx\":" << r.g_adv_yx
        << ",\"d_x\":" << r.d_x << ",\"d_y\":" << r.d_y << ",\"cycle\":" << r.cycle
        << ",\"prcp\":" << r.prcp << ",\"total_g\":" << r.total_g << ",\"total_d\":" << r.total_d << "}";
    return out.str();
}

// One optimization step on one batch: discriminators first, then
// generators, mirroring the alternating CycleGAN update.
inline LossReport train_step(GanBundle<float>& b, Detector<float>* det, const Array<float>& x,
                             const Array<float>& y, const LossParams<float>& lp) {
    LossReport r;
    r.step = b.step;
    try {
        {
            Tape<float> tp;
            DiscGraph<float> d = disc_graph(tp, b, tp.leaf(x), tp.leaf(y), true);
            for (Param<float>* p : b.disc_params()) p->zero_grad();
            tp.backward(d.total_d);
            auto dp = b.disc_params();
            adam_step(dp, b.opt_d);
            r.d_x = static_cast<double>(d.d_x_loss.val().v[0]);
            r.d_y = static_cast<double>(d.d_y_loss.val().v[0]);
            r.total_d = static_cast<double>(d.total_d.val().v[0]);
        }
        {
            Tape<float> tp;
            GenGraph<float> g = gen_graph(tp, b, det, tp.leaf(x), tp.leaf(y), lp, true);
            for (Param<float>* p : b.gen_params()) p->zero_grad();
            tp.backward(g.total_g);
            auto gp = b.gen_params();
            adam_step(gp, b.opt_g);
            r.g_adv_xy = static_cast<double>(g.g_adv_xy.val().v[0]);
            r.g_adv_yx = static_cast<double>(g.g_adv_yx.val().v[0]);
            r.cycle = static_cast<double>(g.cycle.val().v[0]);
            r.prcp = static_cast<double>(g.prcp.val().v[0]);
            r.total_g = static_cast<double>(g.total_g.val().v[0]);
        }
    } catch (const EngineError& e) {
        throw EngineError("step " + std::to_string(b.step) + ": " + e.what());
    }
    traindetail::check_term(r.total_d, "total_d", r.step);
    traindetail::check_term(r.total_g, "total_g", r.step);
    b.step += 1;
    return r;
}

// Runs from the bundle's current step up to tc.steps, so a freshly loaded
// checkpoint resumes the identical trajectory.
inline void train_retinagan(GanBundle<float>& b, Detector<float>* det, const Corpus& sim,
                            const Corpus& real, const TrainConfig& tc,
                            const std::function<void(const LossReport&)>& on_report = {},
                            const std::function<void(GanBundle<float>&)>& on_checkpoint = {}) {
    tc.validate();
    if (sim.items.empty() || real.items.empty())
        throw IoError("train_retinagan: empty sim or real dataset");
    if (tc.lambda_prcp > 0 && det == nullptr)
        throw IoError("train_retinagan: lambda_prcp > 0 requires a detector checkpoint");
    b.opt_g.lr = b.opt_d.lr = static_cast<float>(tc.lr);
    b.opt_g.beta1 = b.opt_d.beta1 = static_cast<float>(tc.beta1);
    b.opt_g.beta2 = b.opt_d.beta2 = static_cast<float>(tc.beta2);
    b.opt_g.weight_decay = b.opt_d.weight_decay = static_cast<float>(tc.weight_decay);
    LossParams<float> lp;
    lp.gamma = static_cast<float>(tc.gamma);
    lp.alpha = static_cast<float>(tc.alpha);
    lp.delta = static_cast<float>(tc.delta);
    lp.lambda_gan = static_cast<float>(tc.lambda_gan);
    lp.lambda_cycle = static_cast<float>(tc.lambda_cycle);
    lp.lambda_prcp = static_cast<float>(tc.lambda_prcp);

    while (b.step < tc.steps) {
        const int step = static_cast<int>(b.step);
        Array<float> x = traindetail::sample_batch(sim, tc, 40, step);
        Array<float> y = traindetail::sample_batch(real, tc, 41, step);
        LossReport r = train_step(b, det, x, y, lp);
        if (on_report) on_report(r);
        if (on_checkpoint && tc.checkpoint_every > 0 && b.step % tc.checkpoint_every == 0)
            on_checkpoint(b);
    }
}

// Seeds s, s+1, ... with lambda_prcp cycling over {0.1, 0.3, 1.0};
// members train independently and save under out_dir.
inline std::vector<std::string> train_ensemble(Detector<float>* det, const Corpus& sim,
                                               const Corpus& real, const TrainConfig& tc, int n,
                                               const std::string& out_dir,
                                               const std::function<void(int, const LossReport&)>& on_report = {}) {
    if (n < 1) throw IoError("train_ensemble: need at least one member");
    static const double kPrcpSchedule[] = {0.1, 0.3, 1.0};
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> paths;
    for (int i = 0; i < n; ++i) {
        TrainConfig mtc = tc;
        mtc.seed = tc.seed + static_cast<std::uint64_t>(i);
        mtc.lambda_prcp = kPrcpSchedule[i % 3];
        GanBundle<float> b;
        b.init(mtc.seed);
        train_retinagan(b, det, sim, real, mtc, [&, i](const LossReport& r) {
            if (on_report) on_report(i, r);
        });
        std::string path = (std::filesystem::path(out_dir) / ("member_" + std::to_string(i) + ".ckpt")).string();
        save_bundle(b, mtc, path);
        paths.push_back(std::move(path));
    }
    return paths;
}

enum class Direction { Sim2Real, Real2Sim };

inline Direction parse_direction(const std::string& s) {
    if (s == "sim2real") return Direction::Sim2Real;
    if (s == "real2sim") return Direction::Real2Sim;
    throw IoError("direction must be sim2real or real2sim, got '" + s + "'");
}

struct TranslateStats {
    double mean_psnr = 0.0;  // input vs output, averaged over emitted images
};

// Translates every image through each member's generator; labels are
// copied verbatim and each output record carries its member index.
inline std::string translate_dataset(std::vector<GanBundle<float>*> members, const Dataset& in,
                                     const std::string& out_dir, Direction dir,
                                     TranslateStats* stats = nullptr) {
    namespace fs = std::filesystem;
    if (members.empty()) throw IoError("translate_dataset: no generators");
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

    nlohmann::json manifest = nlohmann::json::array();
    double psnr_sum = 0.0;
    std::size_t count = 0;
    const Domain out_domain = dir == Direction::Sim2Real ? Domain::Real : Domain::Sim;
    for (std::size_t i = 0; i < in.records.size(); ++i) {
        const DatasetRecord& rec = in.records[i];
        Image src = in.load_image(i);
        for (std::size_t m = 0; m < members.size(); ++m) {
            Generator<float>& gen =
                dir == Direction::Sim2Real ? members[m]->g_xy : members[m]->g_yx;
            if (src.h != gen.image_size || src.w != gen.image_size)
                throw IoError("image '" + rec.image + "' is " + std::to_string(src.h) + "x" +
                              std::to_string(src.w) + ", generator expects " +
                              std::to_string(gen.image_size));
            Tape<float> tp;
            Var<float> out = gen.forward(tp, tp.leaf(images_to_batch<float>({src})), false);
            Image translated = batch_to_image(out.val(), 0);
            psnr_sum += psnr(src, translated);
            ++count;

            DatasetRecord outrec = rec;
            outrec.domain = out_domain;
            // input index disambiguates paired inputs that share a seed
            outrec.image = "images/" + std::to_string(i) + "_" + std::to_string(rec.seed) + "_" +
                           domain_name(out_domain) + "_m" + std::to_string(m) + ".png";
            save_png((fs::path(out_dir) / outrec.image).string(), translated);
            nlohmann::json j = datadetail::record_to_json(outrec);
            j["member"] = m;
            manifest.push_back(std::move(j));
        }
    }
    if (stats != nullptr) stats->mean_psnr = count > 0 ? psnr_sum / static_cast<double>(count) : 0.0;
    std::string mpath = (fs::path(out_dir) / "manifest.json").string();
    std::ofstream f(mpath, std::ios::trunc);
    if (!f) throw IoError("cannot write manifest: " + mpath);
    f << manifest.dump(1) << "\n";
    return mpath;
}

}  // namespace rg
