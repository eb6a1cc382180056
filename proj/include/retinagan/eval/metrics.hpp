#pragma once

#include "retinagan/det/detector.hpp"
#include "retinagan/train/pipeline.hpp"

namespace rg {

// ------------------------------------------------------------------------
// detection consistency

struct ConsistencyResult {
    double miou = 1.0;
    double class_agreement = 1.0;
};

// Greedy IoU matching between one image pair's detection lists.
// Unmatched detections count as IoU 0 and as disagreements; pairs where
// neither list fires contribute nothing.
struct ConsistencyAccum {
    double iou_sum = 0.0;
    std::size_t agree = 0;
    std::size_t denom = 0;

    void add(const std::vector<Detection>& a, const std::vector<Detection>& b,
             double match_iou = 0.5) {
        struct Pair {
            double iou;
            std::size_t ia, ib;
        };
        std::vector<Pair> pairs;
        for (std::size_t p = 0; p < a.size(); ++p)
            for (std::size_t q = 0; q < b.size(); ++q) {
                const double v = box_iou(a[p].box, b[q].box);
                if (v >= match_iou) pairs.push_back({v, p, q});
            }
        std::stable_sort(pairs.begin(), pairs.end(),
                         [](const Pair& l, const Pair& r) { return l.iou > r.iou; });
        std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
        for (const Pair& p : pairs) {
            if (used_a[p.ia] || used_b[p.ib]) continue;
            used_a[p.ia] = used_b[p.ib] = 1;
            iou_sum += p.iou;
            if (a[p.ia].class_id == b[p.ib].class_id) ++agree;
        }
        denom += std::max(a.size(), b.size());
    }

    ConsistencyResult result() const {
        ConsistencyResult r;
        if (denom > 0) {
            r.miou = iou_sum / static_cast<double>(denom);
            r.class_agreement = static_cast<double>(agree) / static_cast<double>(denom);
        }
        return r;
    }
};

template <class T>
ConsistencyResult detection_consistency(Detector<T>& det, const std::vector<Image>& originals,
                                        const std::vector<Image>& translated,
                                        double match_iou = 0.5) {
    if (originals.empty()) throw IoError("detection_consistency: empty input");
    if (originals.size() != translated.size())
        throw IoError("detection_consistency: list lengths differ");
    ConsistencyAccum acc;
    for (std::size_t i = 0; i < originals.size(); ++i)
        acc.add(detect_image(det, originals[i]), detect_image(det, translated[i]), match_iou);
    return acc.result();
}

// mAP of detections on (possibly translated) images against the labels
// the corpus carries, which translate_dataset copies verbatim.
template <class T>
double gt_preservation(Detector<T>& det, const Corpus& corpus) {
    if (corpus.items.empty()) throw IoError("gt_preservation: empty corpus");
    return evaluate_detector(det, corpus).map;
}

// ------------------------------------------------------------------------
// domain classifier

// Small sim-vs-real binary classifier: the detector backbone's conv
// recipe with a linear head on pooled features. Output is one logit per
// image; sigmoid > 0.5 means "real".
struct DomainClassifier {
    int image_size = 64;
    ParamStore<float> params;

    void init(std::uint64_t seed) {
        Rng rng(seed);
        auto conv = [&](const char* name, int ci, int co) {
            params.create(std::string(name) + ".w", init_conv<float>(rng, co, ci, 3, 3));
            params.create(std::string(name) + ".b", init_const<float>({co}, 0.0f));
        };
        conv("c1", 3, 16);
        conv("c2", 16, 32);
        conv("c3", 32, 64);
        params.create("fc.w", init_dense<float>(rng, 64, 1, 1.0));
        params.create("fc.b", init_const<float>({1}, 0.0f));
    }

    // [N,3,S,S] -> [N,1] logits
    Var<float> forward(Tape<float>& tp, Var<float> x, bool train) {
        const Array<float>& xv = x.val();
        if (xv.ndim() != 4 || xv.dim(2) != image_size || xv.dim(3) != image_size)
            throw EngineError("domain classifier expects [N,3," + std::to_string(image_size) +
                              "," + std::to_string(image_size) + "], got " + shape_str(xv.shape));
        auto w = [&](const std::string& name) -> Var<float> {
            Param<float>& p = params.at(name);
            return train ? tp.param(p) : tp.leaf(p.value, false);
        };
        Var<float> h = relu(add_bias(conv2d(x, w("c1.w"), 2, 1), w("c1.b")));
        h = relu(add_bias(conv2d(h, w("c2.w"), 2, 1), w("c2.b")));
        h = relu(add_bias(conv2d(h, w("c3.w"), 2, 1), w("c3.b")));
        return add_bias(matmul(mean_hw(h), w("fc.w")), w("fc.b"));
    }
};

struct DomainTrainConfig {
    int steps = 400;
    int batch = 8;  // per domain
    std::uint64_t seed = 0;
    double lr = 1e-3;
};

// least-squares loss to targets sim=0, real=1
inline void train_domain_classifier(DomainClassifier& clf, const std::vector<Image>& sim,
                                    const std::vector<Image>& real, const DomainTrainConfig& tc) {
    if (sim.empty() || real.empty()) throw IoError("domain classifier: empty training split");
    OptimState<float> opt;
    opt.lr = static_cast<float>(tc.lr);
    opt.beta1 = 0.9f;
    opt.beta2 = 0.999f;
    opt.weight_decay = 0.0f;
    auto plist = clf.params.all();
    opt.bind(plist);

    for (int step = 0; step < tc.steps; ++step) {
        Rng rng(derive_seed(tc.seed, 50, static_cast<std::uint64_t>(step)));
        std::vector<Image> batch;
        Array<float> targets({2 * tc.batch, 1});
        for (int i = 0; i < tc.batch; ++i) {
            batch.push_back(sim[rng.uniform_int(sim.size())]);
            targets.v[static_cast<std::size_t>(i)] = 0.0f;
        }
        for (int i = 0; i < tc.batch; ++i) {
            batch.push_back(real[rng.uniform_int(real.size())]);
            targets.v[static_cast<std::size_t>(tc.batch + i)] = 1.0f;
        }
        Tape<float> tp;
        Var<float> logits = clf.forward(tp, tp.leaf(images_to_batch<float>(batch)), true);
        Var<float> err = sub(sigmoid(logits), tp.leaf(targets, false));
        Var<float> loss = mean_all(mul(err, err));
        clf.params.zero_grad();
        tp.backward(loss);
        adam_step(plist, opt);
    }
}

inline std::vector<int> classify_domain(DomainClassifier& clf, const std::vector<Image>& imgs) {
    std::vector<int> labels;
    for (const Image& img : imgs) {
        Tape<float> tp;
        Var<float> logit = clf.forward(tp, tp.leaf(images_to_batch<float>({img})), false);
        labels.push_back(logit.val().v[0] > 0.0f ? 1 : 0);
    }
    return labels;
}

// fraction of images the classifier labels "real"
inline double domain_score(DomainClassifier& clf, const std::vector<Image>& imgs) {
    if (imgs.empty()) throw IoError("domain_score: empty input");
    std::vector<int> labels = classify_domain(clf, imgs);
    double real_count = 0;
    for (int l : labels) real_count += l;
    return real_count / static_cast<double>(labels.size());
}

inline double domain_val_accuracy(DomainClassifier& clf, const std::vector<Image>& sim_val,
                                  const std::vector<Image>& real_val) {
    if (sim_val.empty() || real_val.empty()) throw IoError("domain classifier: empty val split");
    std::size_t correct = 0;
    for (int l : classify_domain(clf, sim_val)) correct += l == 0;
    for (int l : classify_domain(clf, real_val)) correct += l == 1;
    return static_cast<double>(correct) / static_cast<double>(sim_val.size() + real_val.size());
}

}  // namespace rg
