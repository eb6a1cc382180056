#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "retinagan/core/array.hpp"
#include "retinagan/data/types.hpp"

namespace rg {

// (cy,cx,h,w), normalized coordinates
struct Anchor {
    double cy, cx, h, w;

    Box to_box() const {
        return Box{cy - h * 0.5, cx - w * 0.5, cy + h * 0.5, cx + w * 0.5};
    }
};

struct AnchorLevel {
    int stride = 0;
    int grid = 0;  // feature cells per side
    std::vector<Anchor> anchors;  // ratio-major, then row, then column
};

struct AnchorGrid {
    int image_size = 0;
    std::vector<AnchorLevel> levels;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& l : levels) n += l.anchors.size();
        return n;
    }
};

// One scale per level: anchor area = (stride * scale)^2, aspect h:w per
// ratio. Centers sit at cell centers; anchors may overhang the image.
inline AnchorGrid build_anchors(int image_size, const std::vector<int>& strides,
                                const std::vector<double>& ratios, double scale = 2.0) {
    AnchorGrid grid;
    grid.image_size = image_size;
    for (int stride : strides) {
        if (image_size % stride != 0)
            throw EngineError("image size " + std::to_string(image_size) +
                              " not divisible by stride " + std::to_string(stride));
        AnchorLevel lvl;
        lvl.stride = stride;
        lvl.grid = image_size / stride;
        const double base = static_cast<double>(stride) * scale / image_size;
        for (double r : ratios) {
            const double h = base * std::sqrt(r);
            const double w = base / std::sqrt(r);
            for (int i = 0; i < lvl.grid; ++i)
                for (int j = 0; j < lvl.grid; ++j) {
                    const double cy = (i + 0.5) * stride / image_size;
                    const double cx = (j + 0.5) * stride / image_size;
                    lvl.anchors.push_back(Anchor{cy, cx, h, w});
                }
        }
        grid.levels.push_back(std::move(lvl));
    }
    return grid;
}

inline std::vector<Anchor> flatten_anchors(const AnchorGrid& grid) {
    std::vector<Anchor> out;
    for (const auto& l : grid.levels) out.insert(out.end(), l.anchors.begin(), l.anchors.end());
    return out;
}

inline double iou(const Box& a, const Box& b) { return box_iou(a, b); }

enum class Assign : int { Negative = -1, Ignore = -2 };

struct MatchTargets {
    // >= 0: positive, index of the matched gt; -1 negative; -2 ignore
    std::vector<int> assignment;
    std::vector<std::array<double, 4>> box_targets;  // valid for positives
    std::vector<int> class_targets;                  // valid for positives
};

inline std::array<double, 4> encode_box(const Box& gt, const Anchor& a) {
    const double gcy = (gt.ymin + gt.ymax) * 0.5, gcx = (gt.xmin + gt.xmax) * 0.5;
    const double gh = gt.ymax - gt.ymin, gw = gt.xmax - gt.xmin;
    return {(gcy - a.cy) / a.h, (gcx - a.cx) / a.w, std::log(gh / a.h), std::log(gw / a.w)};
}

inline Box decode_box(const std::array<double, 4>& d, const Anchor& a) {
    const double cy = a.cy + d[0] * a.h;
    const double cx = a.cx + d[1] * a.w;
    const double h = a.h * std::exp(d[2]);
    const double w = a.w * std::exp(d[3]);
    return Box{cy - h * 0.5, cx - w * 0.5, cy + h * 0.5, cx + w * 0.5};
}

// RetinaNet assignment: positive at IoU >= 0.5, negative below 0.4,
// ignore between; each gt with any overlap claims its argmax anchor.
inline MatchTargets match_anchors(const std::vector<Anchor>& anchors, const std::vector<Box>& gt,
                                  const std::vector<int>& gt_classes,
                                  double pos_thresh = 0.5, double neg_thresh = 0.4) {
    for (const auto& b : gt)
        if (!b.ordered() || b.area() <= 0.0)
            throw EngineError("degenerate ground-truth box in match_anchors");
    const std::size_t A = anchors.size(), G = gt.size();
    MatchTargets mt;
    mt.assignment.assign(A, static_cast<int>(Assign::Negative));
    mt.box_targets.resize(A);
    mt.class_targets.assign(A, -1);

    std::vector<double> best_iou(A, 0.0);
    std::vector<int> best_gt(A, -1);
    std::vector<double> gt_best_iou(G, 0.0);
    std::vector<int> gt_best_anchor(G, -1);
    for (std::size_t i = 0; i < A; ++i) {
        const Box ab = anchors[i].to_box();
        for (std::size_t g = 0; g < G; ++g) {
            const double v = iou(ab, gt[g]);
            if (v > best_iou[i]) {
                best_iou[i] = v;
                best_gt[i] = static_cast<int>(g);
            }
            if (v > gt_best_iou[g]) {
                gt_best_iou[g] = v;
                gt_best_anchor[g] = static_cast<int>(i);
            }
        }
    }
    for (std::size_t i = 0; i < A; ++i) {
        if (best_iou[i] >= pos_thresh)
            mt.assignment[i] = best_gt[i];
        else if (best_iou[i] >= neg_thresh)
            mt.assignment[i] = static_cast<int>(Assign::Ignore);
    }
    for (std::size_t g = 0; g < G; ++g)
        if (gt_best_anchor[g] >= 0 && gt_best_iou[g] > 0.0)
            mt.assignment[static_cast<std::size_t>(gt_best_anchor[g])] = static_cast<int>(g);
    for (std::size_t i = 0; i < A; ++i)
        if (mt.assignment[i] >= 0) {
            const int g = mt.assignment[i];
            mt.box_targets[i] = encode_box(gt[static_cast<std::size_t>(g)], anchors[i]);
            mt.class_targets[i] = gt_classes[static_cast<std::size_t>(g)];
        }
    return mt;
}

struct Detection {
    Box box;
    double score = 0.0;
    int class_id = 0;
};

// score threshold -> per-class greedy NMS -> global top-k by score
inline std::vector<Detection> decode_nms(const std::vector<double>& cls_probs,  // [A*K]
                                         const std::vector<double>& box_regs,   // [A*4]
                                         const std::vector<Anchor>& anchors, int num_classes,
                                         double score_thresh = 0.05, double nms_iou = 0.5,
                                         int max_det = 20) {
    const std::size_t A = anchors.size();
    std::vector<Detection> cands;
    for (std::size_t i = 0; i < A; ++i) {
        const Box decoded = decode_box({box_regs[i * 4], box_regs[i * 4 + 1], box_regs[i * 4 + 2],
                                        box_regs[i * 4 + 3]},
                                       anchors[i]);
        for (int k = 0; k < num_classes; ++k) {
            const double s = cls_probs[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(k)];
            if (s >= score_thresh) cands.push_back(Detection{decoded, s, k});
        }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    std::vector<bool> removed(cands.size(), false);
    for (std::size_t i = 0; i < cands.size(); ++i) {
        if (removed[i]) continue;
        kept.push_back(cands[i]);
        for (std::size_t j = i + 1; j < cands.size(); ++j) {
            if (removed[j] || cands[j].class_id != cands[i].class_id) continue;
            if (iou(cands[i].box, cands[j].box) >= nms_iou) removed[j] = true;
        }
    }
    if (static_cast<int>(kept.size()) > max_det) kept.resize(static_cast<std::size_t>(max_det));
    return kept;
}

struct ApResult {
    double map = 0.0;
    std::vector<double> per_class;  // -1 for classes with no ground truth
};

// All-points interpolated AP at a single IoU threshold; greedy matching in
// score order, each ground-truth box claimed at most once.
inline ApResult evaluate_map(const std::vector<std::vector<Detection>>& detections,
                             const std::vector<std::vector<Box>>& gt_boxes,
                             const std::vector<std::vector<int>>& gt_classes, int num_classes,
                             double iou_thresh = 0.5) {
    ApResult res;
    res.per_class.assign(static_cast<std::size_t>(num_classes), -1.0);
    double ap_sum = 0.0;
    int ap_count = 0;
    for (int k = 0; k < num_classes; ++k) {
        struct Scored {
            double score;
            std::size_t img;
            Box box;
        };
        std::vector<Scored> dets;
        int total_gt = 0;
        for (std::size_t im = 0; im < detections.size(); ++im) {
            for (const auto& d : detections[im])
                if (d.class_id == k) dets.push_back({d.score, im, d.box});
            for (int c : gt_classes[im])
                if (c == k) ++total_gt;
        }
        if (total_gt == 0) continue;
        std::stable_sort(dets.begin(), dets.end(),
                         [](const Scored& a, const Scored& b) { return a.score > b.score; });
        std::vector<std::vector<bool>> claimed(gt_boxes.size());
        for (std::size_t im = 0; im < gt_boxes.size(); ++im)
            claimed[im].assign(gt_boxes[im].size(), false);
        std::vector<int> tp(dets.size(), 0);
        for (std::size_t i = 0; i < dets.size(); ++i) {
            double best = iou_thresh;
            int best_g = -1;
            const auto& boxes = gt_boxes[dets[i].img];
            for (std::size_t g = 0; g < boxes.size(); ++g) {
                if (gt_classes[dets[i].img][g] != k || claimed[dets[i].img][g]) continue;
                const double v = iou(dets[i].box, boxes[g]);
                if (v >= best) {
                    best = v;
                    best_g = static_cast<int>(g);
                }
            }
            if (best_g >= 0) {
                tp[i] = 1;
                claimed[dets[i].img][static_cast<std::size_t>(best_g)] = true;
            }
        }
        // precision/recall points, then area under the interpolated curve
        std::vector<double> prec(dets.size()), rec(dets.size());
        int cum_tp = 0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            cum_tp += tp[i];
            prec[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
            rec[i] = static_cast<double>(cum_tp) / total_gt;
        }
        for (std::size_t i = dets.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
        double ap = 0.0, prev_rec = 0.0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            ap += (rec[i] - prev_rec) * prec[i];
            prev_rec = rec[i];
        }
        res.per_class[static_cast<std::size_t>(k)] = ap;
        ap_sum += ap;
        ++ap_count;
    }
    res.map = ap_count > 0 ? ap_sum / ap_count : 0.0;
    return res;
}

}  // namespace rg
