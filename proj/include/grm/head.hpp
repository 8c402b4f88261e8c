#pragma once
// Center/offset/size prediction head on the search feature map, target map
// generation, and the focal + GIoU + L1 training loss.

#include <algorithm>
#include <cmath>
#include <vector>

#include "grm/tensor.hpp"

namespace grm {

// Axis-aligned box (cx, cy, w, h). Units are contextual: normalized to [0,1]
// of the search region for head outputs, pixels for frame-level boxes.
struct BBox {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    double area() const { return w * h; }
    double x1() const { return cx - 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double x2() const { return cx + 0.5 * w; }
    double y2() const { return cy + 0.5 * h; }
};

inline double iou(const BBox& a, const BBox& b) {
    const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
    const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct LossWeights {
    double lambda_center = 1.0;
    double lambda_giou = 2.0;
    double lambda_l1 = 5.0;

    void validate() const {
        if (lambda_center < 0 || lambda_giou < 0 || lambda_l1 < 0)
            throw ConfigError("loss weights must be nonnegative");
        if (lambda_center == 0 && lambda_giou == 0 && lambda_l1 == 0)
            throw ConfigError("at least one loss weight must be positive");
    }
};

struct HeadOutput {
    Tensor center_scores;  // {1, h, w}, sigmoid
    Tensor offsets;        // {2, h, w}: channel 0 = x offset, channel 1 = y offset, sigmoid
    Tensor sizes;          // {2, h, w}: channel 0 = width, channel 1 = height, sigmoid

    int grid_h() const { return center_scores.shape[1]; }
    int grid_w() const { return center_scores.shape[2]; }
};

struct ConvStage {
    Tensor w;       // {cout, cin, 3, 3}
    Tensor norm_g;  // {cout}
    Tensor norm_b;  // {cout}
};

struct HeadBranch {
    std::vector<ConvStage> stages;
    Tensor out_w;  // {nout, cin, 1, 1}
    Tensor out_b;  // {nout}
};

struct HeadParams {
    HeadBranch center, offset, size;
};

constexpr double kHeadNormEps = 1e-5;

namespace detail {

inline Tensor run_branch(const Tensor& feat, const HeadBranch& b) {
    Tensor x = feat;
    for (const ConvStage& st : b.stages)
        x = relu(channel_norm(conv2d(x, st.w, 1, 1), st.norm_g, st.norm_b, kHeadNormEps));
    return sigmoid(bias_channels(conv2d(x, b.out_w, 1, 0), b.out_b));
}

}  // namespace detail

inline HeadOutput head_forward(const Tensor& feat_map, const HeadParams& p) {
    if (feat_map.ndim() != 3)
        throw ShapeError("head_forward: expected feature map {C,h,w}, got " + shape_str(feat_map.shape));
    HeadOutput out;
    out.center_scores = detail::run_branch(feat_map, p.center);
    out.offsets = detail::run_branch(feat_map, p.offset);
    out.sizes = detail::run_branch(feat_map, p.size);
    return out;
}

// Peak of the center map picks the cell; offsets/sizes at that cell give the
// box in normalized search coordinates. Score ties break row-major-first.
inline BBox decode_box(const HeadOutput& out) {
    const int h = out.grid_h(), w = out.grid_w();
    const auto& s = *out.center_scores.data;
    int best = 0;
    for (int i = 1; i < h * w; ++i)
        if (s[static_cast<std::size_t>(i)] > s[static_cast<std::size_t>(best)]) best = i;
    const int r = best / w, c = best % w;
    const auto& off = *out.offsets.data;
    const auto& sz = *out.sizes.data;
    BBox box;
    box.cx = (c + off[static_cast<std::size_t>(r) * w + c]) / w;
    box.cy = (r + off[static_cast<std::size_t>(h) * w + static_cast<std::size_t>(r) * w + c]) / h;
    box.w = sz[static_cast<std::size_t>(r) * w + c];
    box.h = sz[static_cast<std::size_t>(h) * w + static_cast<std::size_t>(r) * w + c];
    return box;
}

// Gaussian map over the grid with the peak at the real-valued grid position
// of gt_center; cell (r, c) is centered at ((c+0.5)/w, (r+0.5)/h).
inline Tensor gaussian_target(double cx, double cy, int h, int w, double sigma_cells) {
    if (sigma_cells <= 0.0) throw std::invalid_argument("gaussian_target: sigma must be positive");
    if (cx < 0.0 || cx > 1.0 || cy < 0.0 || cy > 1.0)
        throw std::invalid_argument("gaussian_target: center outside the unit square");
    const double c_gt = cx * w - 0.5;
    const double r_gt = cy * h - 0.5;
    Tensor t = Tensor::zeros({1, h, w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double d2 = (c - c_gt) * (c - c_gt) + (r - r_gt) * (r - r_gt);
            (*t.data)[static_cast<std::size_t>(r) * w + c] = std::exp(-d2 / (2.0 * sigma_cells * sigma_cells));
        }
    return t;
}

// Penalty-reduced pixelwise focal loss for Gaussian targets:
//   target == 1:  -(1-p)^alpha * log(p)
//   otherwise:    -(1-t)^beta * p^alpha * log(1-p)
// normalized by the number of peak cells (>= 1). Scores are clamped to
// [1e-7, 1-1e-7] before the logs.
inline Tensor focal_loss(const Tensor& scores, const Tensor& target, double alpha, double beta) {
    detail::check_same_shape(scores, target, "focal_loss");
    const std::int64_t n = scores.numel();
    Tensor peak = Tensor::zeros(scores.shape);
    Tensor neg_w = Tensor::zeros(scores.shape);
    int n_peak = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double t = target.at(i);
        if (t == 1.0) {
            peak.at(i) = 1.0;
            ++n_peak;
        } else {
            neg_w.at(i) = std::pow(1.0 - t, beta);
        }
    }
    if (n_peak == 0) n_peak = 1;
    const Tensor p = clamp(scores, 1e-7, 1.0 - 1e-7);
    const Tensor one_minus_p = affine_scalar(p, -1.0, 1.0);
    const Tensor pos = mul(peak, mul(pow_const(one_minus_p, alpha), log_t(p)));
    const Tensor negt = mul(neg_w, mul(pow_const(p, alpha), log_t(one_minus_p)));
    return scale(sum_all(add(pos, negt)), -1.0 / n_peak);
}

// 1 - GIoU, where GIoU = IoU - |hull \ union| / |hull|. Range [0, 2].
inline double giou_loss(const BBox& pred, const BBox& gt) {
    if (gt.area() <= 0.0) throw std::invalid_argument("giou_loss: ground-truth box has zero area");
    const double iw = std::max(0.0, std::min(pred.x2(), gt.x2()) - std::max(pred.x1(), gt.x1()));
    const double ih = std::max(0.0, std::min(pred.y2(), gt.y2()) - std::max(pred.y1(), gt.y1()));
    const double inter = iw * ih;
    const double uni = pred.area() + gt.area() - inter;
    const double hw = std::max(pred.x2(), gt.x2()) - std::min(pred.x1(), gt.x1());
    const double hh = std::max(pred.y2(), gt.y2()) - std::min(pred.y1(), gt.y1());
    const double hull = hw * hh;
    const double giou = inter / uni - (hull - uni) / hull;
    return 1.0 - giou;
}

inline double l1_loss(const BBox& pred, const BBox& gt) {
    return (std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) + std::abs(pred.w - gt.w) +
            std::abs(pred.h - gt.h)) /
           4.0;
}

namespace detail {

inline Tensor abs_t(const Tensor& x) { return add(relu(x), relu(neg(x))); }

struct BoxT {
    Tensor cx, cy, w, h;  // scalar tensors
    Tensor x1() const { return sub(cx, scale(w, 0.5)); }
    Tensor y1() const { return sub(cy, scale(h, 0.5)); }
    Tensor x2() const { return add(cx, scale(w, 0.5)); }
    Tensor y2() const { return add(cy, scale(h, 0.5)); }
};

inline Tensor giou_loss_t(const BoxT& p, const BBox& gt) {
    if (gt.area() <= 0.0) throw std::invalid_argument("giou_loss: ground-truth box has zero area");
    const Tensor gx1 = Tensor::scalar(gt.x1()), gy1 = Tensor::scalar(gt.y1());
    const Tensor gx2 = Tensor::scalar(gt.x2()), gy2 = Tensor::scalar(gt.y2());
    const Tensor px1 = p.x1(), py1 = p.y1(), px2 = p.x2(), py2 = p.y2();
    const Tensor iw = relu(sub(minimum(px2, gx2), maximum(px1, gx1)));
    const Tensor ih = relu(sub(minimum(py2, gy2), maximum(py1, gy1)));
    const Tensor inter = mul(iw, ih);
    const Tensor uni = sub(add(mul(p.w, p.h), Tensor::scalar(gt.area())), inter);
    const Tensor hull = mul(sub(maximum(px2, gx2), minimum(px1, gx1)),
                            sub(maximum(py2, gy2), minimum(py1, gy1)));
    const Tensor giou = sub(divide(inter, uni), divide(sub(hull, uni), hull));
    return affine_scalar(giou, -1.0, 1.0);
}

inline Tensor l1_loss_t(const BoxT& p, const BBox& gt) {
    Tensor acc = abs_t(sub(p.cx, Tensor::scalar(gt.cx)));
    acc = add(acc, abs_t(sub(p.cy, Tensor::scalar(gt.cy))));
    acc = add(acc, abs_t(sub(p.w, Tensor::scalar(gt.w))));
    acc = add(acc, abs_t(sub(p.h, Tensor::scalar(gt.h))));
    return scale(acc, 0.25);
}

}  // namespace detail

struct HeadLossConfig {
    double focal_alpha = 2.0;
    double focal_beta = 4.0;
    // sigma of the Gaussian target: mean box side in cells / 6, floored.
    double sigma_floor_cells = 0.5;
    bool anchor_at_gt = true;  // regression anchored at the gt peak cell (vs predicted argmax)
};

// Focal on the full map; GIoU and L1 on the box decoded at the anchor cell.
// The center target is the Gaussian centered on the anchor cell (peak exactly
// 1) and the offset channels absorb the sub-cell fraction, mirroring the
// decode path.
inline Tensor total_loss(const HeadOutput& out, const BBox& gt, const LossWeights& weights,
                         const HeadLossConfig& cfg = {}) {
    weights.validate();
    const int h = out.grid_h(), w = out.grid_w();
    if (gt.cx < 0.0 || gt.cx > 1.0 || gt.cy < 0.0 || gt.cy > 1.0)
        throw std::invalid_argument("total_loss: ground-truth center outside the unit square");

    int c_star, r_star;
    if (cfg.anchor_at_gt) {
        c_star = std::min(w - 1, static_cast<int>(std::floor(gt.cx * w)));
        r_star = std::min(h - 1, static_cast<int>(std::floor(gt.cy * h)));
    } else {
        const BBox pred = decode_box(out);
        c_star = std::min(w - 1, static_cast<int>(std::floor(pred.cx * w)));
        r_star = std::min(h - 1, static_cast<int>(std::floor(pred.cy * h)));
    }

    const double sigma = std::max(cfg.sigma_floor_cells, 0.5 * (gt.w * w + gt.h * h) / 6.0);
    const Tensor target = gaussian_target((c_star + 0.5) / w, (r_star + 0.5) / h, h, w, sigma);

    Tensor loss = scale(focal_loss(out.center_scores, target, cfg.focal_alpha, cfg.focal_beta),
                        weights.lambda_center);

    if (weights.lambda_giou > 0.0 || weights.lambda_l1 > 0.0) {
        const std::int64_t cell = static_cast<std::int64_t>(r_star) * w + c_star;
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        detail::BoxT pred;
        pred.cx = affine_scalar(pick(out.offsets, cell), 1.0 / w, static_cast<double>(c_star) / w);
        pred.cy = affine_scalar(pick(out.offsets, plane + cell), 1.0 / h, static_cast<double>(r_star) / h);
        pred.w = pick(out.sizes, cell);
        pred.h = pick(out.sizes, plane + cell);
        if (weights.lambda_giou > 0.0)
            loss = add(loss, scale(detail::giou_loss_t(pred, gt), weights.lambda_giou));
        if (weights.lambda_l1 > 0.0)
            loss = add(loss, scale(detail::l1_loss_t(pred, gt), weights.lambda_l1));
    }
    return loss;
}

}  // namespace grm
