#pragma once

#include <functional>

#include "retinagan/core/adam.hpp"
#include "retinagan/core/ops.hpp"
#include "retinagan/core/params.hpp"
#include "retinagan/data/dataset.hpp"
#include "retinagan/det/anchors.hpp"
#include "retinagan/det/head_outputs.hpp"
#include "retinagan/image/image.hpp"
#include "retinagan/loss/consistency.hpp"

namespace rg {

struct DetectorConfig {
    int image_size = 64;
    int num_classes = 4;
    std::vector<int> strides{8, 16};
    std::vector<double> ratios{0.5, 1.0, 2.0};
    double anchor_scale = 2.0;
    int fpn_channels = 32;
};

// Strided-conv backbone, two-level feature pyramid, shared two-conv heads.
template <class T>
struct Detector {
    DetectorConfig cfg;
    ParamStore<T> params;
    AnchorGrid grid;

    int anchors_per_cell() const { return static_cast<int>(cfg.ratios.size()); }

    void init(std::uint64_t seed) {
        grid = build_anchors(cfg.image_size, cfg.strides, cfg.ratios, cfg.anchor_scale);
        Rng rng(seed);
        const int F = cfg.fpn_channels;
        const int A = anchors_per_cell(), K = cfg.num_classes;
        auto conv = [&](const std::string& name, int co, int ci, int k) {
            params.create(name + ".w", init_conv<T>(rng, co, ci, k, k));
            params.create(name + ".b", init_const<T>({co}, T(0)));
        };
        conv("bb1", 16, 3, 3);
        conv("bb2", 32, 16, 3);
        conv("bb3", 64, 32, 3);
        conv("bb4", 64, 64, 3);
        conv("lat3", F, 64, 1);
        conv("lat4", F, 64, 1);
        conv("smooth3", F, F, 3);
        conv("smooth4", F, F, 3);
        for (const char* head : {"cls", "box"}) {
            conv(std::string(head) + "1", F, F, 3);
            conv(std::string(head) + "2", F, F, 3);
        }
        params.create("cls_out.w", init_conv<T>(rng, A * K, F, 3, 3, 0.02));
        // rare-positive prior keeps early focal loss small
        params.create("cls_out.b", init_const<T>({A * K}, T(-4.59511985013459)));
        params.create("box_out.w", init_conv<T>(rng, A * 4, F, 3, 3, 0.02));
        params.create("box_out.b", init_const<T>({A * 4}, T(0)));
    }

    // `train` binds weights as differentiable parameters; otherwise they
    // enter the graph as constants and gradients reach only the image.
    HeadOutputs<T> forward(Tape<T>& tp, Var<T> image, bool train) {
        const Array<T>& iv = image.val();
        if (iv.ndim() != 4 || iv.dim(1) != 3 || iv.dim(2) != cfg.image_size || iv.dim(3) != cfg.image_size)
            throw EngineError("detector expects [N,3," + std::to_string(cfg.image_size) + "," +
                              std::to_string(cfg.image_size) + "] input, got " + shape_str(iv.shape));
        auto w = [&](const std::string& name) {
            Param<T>& p = params.at(name);
            return train ? tp.param(p) : tp.leaf(p.value, false);
        };
        auto conv = [&](Var<T> x, const std::string& name, int stride, int pad) {
            return add_bias(conv2d(x, w(name + ".w"), stride, pad), w(name + ".b"));
        };
        Var<T> c1 = relu(conv(image, "bb1", 2, 1));
        Var<T> c2 = relu(conv(c1, "bb2", 2, 1));
        Var<T> c3 = relu(conv(c2, "bb3", 2, 1));  // stride 8
        Var<T> c4 = relu(conv(c3, "bb4", 2, 1));  // stride 16
        Var<T> p4 = conv(c4, "lat4", 1, 0);
        Var<T> p3 = add(conv(c3, "lat3", 1, 0), upsample_nearest_2x(p4));
        p3 = relu(conv(p3, "smooth3", 1, 1));
        p4 = relu(conv(p4, "smooth4", 1, 1));

        const int A = anchors_per_cell(), K = cfg.num_classes;
        auto head = [&](Var<T> feat, const char* stem, const char* out_name, int per_anchor) {
            Var<T> h = relu(conv(feat, std::string(stem) + "1", 1, 1));
            h = relu(conv(h, std::string(stem) + "2", 1, 1));
            h = conv(h, out_name, 1, 1);  // [N, A*per_anchor, H, W]
            const int N = h.val().dim(0), H = h.val().dim(2), W = h.val().dim(3);
            h = reshape(h, {N, A, per_anchor, H, W});
            h = permute(h, {0, 1, 3, 4, 2});  // anchor index = a*(H*W) + y*W + x
            return reshape(h, {N, A * H * W, per_anchor});
        };
        HeadOutputs<T> out;
        for (Var<T> feat : {p3, p4}) {
            out.cls.push_back(head(feat, "cls", "cls_out", K));
            out.box.push_back(head(feat, "box", "box_out", 4));
        }
        return out;
    }
};

// drop the batch axis for sample i of a batched forward
template <class T>
HeadOutputs<T> head_sample(const HeadOutputs<T>& batched, int i) {
    HeadOutputs<T> out;
    for (auto v : batched.cls) out.cls.push_back(slice0(v, i));
    for (auto v : batched.box) out.box.push_back(slice0(v, i));
    return out;
}

// Focal class loss over non-ignored anchors plus Huber box loss over
// positives, each normalized by the positive count floored at 1.
template <class T>
Var<T> detector_training_loss(Tape<T>& tp, const HeadOutputs<T>& out, const MatchTargets& mt,
                              int num_classes, T gamma = T(2), T alpha = T(0.25), T delta = T(1)) {
    Var<T> cls_all = out.cls.size() == 1 ? out.cls[0] : concat(out.cls[0], out.cls[1], 0);
    Var<T> box_all = out.box.size() == 1 ? out.box[0] : concat(out.box[0], out.box[1], 0);
    for (std::size_t l = 2; l < out.cls.size(); ++l) {
        cls_all = concat(cls_all, out.cls[l], 0);
        box_all = concat(box_all, out.box[l], 0);
    }
    const int A = cls_all.val().dim(0), K = cls_all.val().dim(1);
    if (static_cast<std::size_t>(A) != mt.assignment.size() || K != num_classes)
        throw EngineError("detector_training_loss target/output mismatch");

    Array<T> y({A, K}), mask({A, K}), box_t({A, 4}), wpos({A});
    int npos = 0;
    for (int a = 0; a < A; ++a) {
        const int asg = mt.assignment[static_cast<std::size_t>(a)];
        if (asg == static_cast<int>(Assign::Ignore)) continue;
        for (int k = 0; k < K; ++k) mask.v[static_cast<std::size_t>(a * K + k)] = T(1);
        if (asg >= 0) {
            y.v[static_cast<std::size_t>(a * K + mt.class_targets[static_cast<std::size_t>(a)])] = T(1);
            for (int c = 0; c < 4; ++c)
                box_t.v[static_cast<std::size_t>(a * 4 + c)] =
                    static_cast<T>(mt.box_targets[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)]);
            wpos.v[static_cast<std::size_t>(a)] = T(1);
            ++npos;
        }
    }
    Var<T> yv = tp.leaf(std::move(y));
    Var<T> probs = sigmoid(cls_all);
    Var<T> cls_sum = sum_all(mul(tp.leaf(std::move(mask)), fcl_elem(yv, probs, gamma, alpha)));
    const T norm = static_cast<T>(std::max(npos, 1));
    Var<T> cls_term = mul_scalar(cls_sum, T(1) / norm);
    Var<T> box_term = huber_box(tp.leaf(std::move(box_t)), box_all, tp.leaf(std::move(wpos)), delta);
    return add(cls_term, box_term);
}

template <class T>
MatchTargets targets_for(const Detector<T>& det, const LabeledImage& li) {
    return match_anchors(flatten_anchors(det.grid), li.boxes, li.classes);
}

// ------------------------------------------------------------------------
// inference

template <class T>
std::vector<Detection> detect_image(Detector<T>& det, const Image& img, double score_thresh = 0.05,
                                    double nms_iou = 0.5, int max_det = 20) {
    Tape<T> tp;
    Var<T> x = tp.leaf(images_to_batch<T>({img}), false);
    HeadOutputs<T> out = det.forward(tp, x, false);
    const auto anchors = flatten_anchors(det.grid);
    std::vector<double> probs, boxes;
    for (std::size_t l = 0; l < out.cls.size(); ++l) {
        const Array<T>& cv = out.cls[l].val();
        const Array<T>& bv = out.box[l].val();
        for (const T& v : cv.v) probs.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        for (const T& v : bv.v) boxes.push_back(static_cast<double>(v));
    }
    return decode_nms(probs, boxes, anchors, det.cfg.num_classes, score_thresh, nms_iou, max_det);
}

template <class T>
ApResult evaluate_detector(Detector<T>& det, const Corpus& corpus) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Box>> gt_boxes;
    std::vector<std::vector<int>> gt_classes;
    for (const auto& li : corpus.items) {
        dets.push_back(detect_image(det, li.pixels));
        gt_boxes.push_back(li.boxes);
        gt_classes.push_back(li.classes);
    }
    return evaluate_map(dets, gt_boxes, gt_classes, det.cfg.num_classes);
}

// ------------------------------------------------------------------------
// training

struct DetTrainConfig {
    int steps = 5000;
    int batch = 8;
    std::uint64_t seed = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
};

template <class T>
void train_detector(Detector<T>& det, const Corpus& corpus, const DetTrainConfig& tc,
                    const std::function<void(int, double)>& on_step = {}) {
    if (corpus.items.empty()) throw EngineError("train_detector: empty corpus");
    std::vector<MatchTargets> targets;
    for (const auto& li : corpus.items) targets.push_back(targets_for(det, li));

    OptimState<T> opt;
    opt.lr = static_cast<T>(tc.lr);
    opt.beta1 = static_cast<T>(tc.beta1);
    opt.beta2 = static_cast<T>(tc.beta2);
    opt.weight_decay = static_cast<T>(tc.weight_decay);
    auto plist = det.params.all();
    opt.bind(plist);

    for (int step = 0; step < tc.steps; ++step) {
        Rng rng(derive_seed(tc.seed, 1, static_cast<std::uint64_t>(step)));
        std::vector<Image> imgs;
        std::vector<std::size_t> picked;
        for (int b = 0; b < tc.batch; ++b) {
            std::size_t i = static_cast<std::size_t>(rng.uniform_int(corpus.items.size()));
            picked.push_back(i);
            imgs.push_back(corpus.items[i].pixels);
        }
        Tape<T> tp;
        Var<T> x = tp.leaf(images_to_batch<T>(imgs), false);
        HeadOutputs<T> out = det.forward(tp, x, true);
        Var<T> total;
        for (int b = 0; b < tc.batch; ++b) {
            Var<T> li = detector_training_loss(tp, head_sample(out, b), targets[picked[static_cast<std::size_t>(b)]],
                                               det.cfg.num_classes);
            total = total.valid() ? add(total, li) : li;
        }
        total = mul_scalar(total, T(1) / static_cast<T>(tc.batch));
        det.params.zero_grad();
        tp.backward(total);
        adam_step(plist, opt);
        if (on_step) on_step(step, static_cast<double>(total.val().v[0]));
    }
}

}  // namespace rg
