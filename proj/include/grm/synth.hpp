#pragma once
// Synthetic tracking sequences: a colored target on a textured canvas with a
// smooth random walk, optional look-alike distractors, and pixel noise.
// Deterministic given the scenario seed; ground-truth boxes are exact.

#include <cmath>
#include <vector>

#include "grm/common.hpp"
#include "grm/head.hpp"
#include "grm/tensor.hpp"

namespace grm {

struct Frame {
    Tensor image;  // {3, H, W}, values in [0, 1]
    BBox gt;       // pixels
};

struct SyntheticScenario {
    std::uint64_t seed = 0;
    int frames = 24;
    int canvas = 96;
    double target_size = 18.0;       // pixel side of the target
    double motion_amplitude = 1.5;   // random-walk acceleration scale, px/frame
    int distractor_count = 0;
    double distractor_similarity = 0.5;  // 0 = unrelated colors, 1 = target color
    double noise = 0.02;

    void validate() const {
        if (frames < 1) throw ConfigError("scenario: need at least one frame");
        if (canvas < 32) throw ConfigError("scenario: canvas must be at least 32 px");
        if (target_size < 4.0) throw ConfigError("scenario: target smaller than 4 px");
        if (target_size >= canvas - 4.0)
            throw ConfigError("scenario: target cannot stay inside the canvas");
        if (distractor_count < 0 || noise < 0.0 || motion_amplitude < 0.0)
            throw ConfigError("scenario: negative counts or levels");
        if (distractor_similarity < 0.0 || distractor_similarity > 1.0)
            throw ConfigError("scenario: distractor_similarity must lie in [0, 1]");
    }
};

namespace detail {

struct MovingObject {
    double cx, cy, vx, vy;
    double w, h;
    double color[3];
    bool disc;  // disc vs rectangle
};

inline void step_object(MovingObject& o, Rng& rng, double amp, int canvas) {
    o.vx = 0.85 * o.vx + amp * 0.5 * rng.normal();
    o.vy = 0.85 * o.vy + amp * 0.5 * rng.normal();
    const double vmax = std::max(1.0, 2.0 * amp);
    o.vx = std::clamp(o.vx, -vmax, vmax);
    o.vy = std::clamp(o.vy, -vmax, vmax);
    o.cx += o.vx;
    o.cy += o.vy;
    // bounce so the box stays fully inside the canvas
    const double mx = o.w / 2 + 1, my = o.h / 2 + 1;
    if (o.cx < mx) { o.cx = mx; o.vx = std::abs(o.vx); }
    if (o.cx > canvas - mx) { o.cx = canvas - mx; o.vx = -std::abs(o.vx); }
    if (o.cy < my) { o.cy = my; o.vy = std::abs(o.vy); }
    if (o.cy > canvas - my) { o.cy = canvas - my; o.vy = -std::abs(o.vy); }
}

inline void draw_object(Tensor& img, const MovingObject& o) {
    const int h = img.shape[1], w = img.shape[2];
    const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - o.w / 2)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(o.cx + o.w / 2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - o.h / 2)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(o.cy + o.h / 2)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (o.disc) {
                const double dx = (x + 0.5 - o.cx) / (o.w / 2);
                const double dy = (y + 0.5 - o.cy) / (o.h / 2);
                if (dx * dx + dy * dy > 1.0) continue;
            } else {
                if (x + 0.5 < o.cx - o.w / 2 || x + 0.5 > o.cx + o.w / 2 ||
                    y + 0.5 < o.cy - o.h / 2 || y + 0.5 > o.cy + o.h / 2)
                    continue;
            }
            for (int c = 0; c < 3; ++c)
                (*img.data)[(static_cast<std::size_t>(c) * h + y) * w + x] = o.color[c];
        }
}

}  // namespace detail

inline std::vector<Frame> generate_scenario(const SyntheticScenario& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, 0x7363656eULL));

    double bg[3];
    for (double& c : bg) c = rng.uniform(0.05, 0.45);

    detail::MovingObject target;
    target.w = target.h = spec.target_size * rng.uniform(0.9, 1.1);
    target.cx = rng.uniform(target.w / 2 + 2, spec.canvas - target.w / 2 - 2);
    target.cy = rng.uniform(target.h / 2 + 2, spec.canvas - target.h / 2 - 2);
    target.vx = target.vy = 0.0;
    target.disc = rng.uniform() < 0.5;
    for (double& c : target.color) c = rng.uniform(0.55, 1.0);

    std::vector<detail::MovingObject> distractors;
    for (int i = 0; i < spec.distractor_count; ++i) {
        detail::MovingObject d;
        d.w = d.h = spec.target_size * rng.uniform(0.7, 1.3);
        d.cx = rng.uniform(d.w / 2 + 2, spec.canvas - d.w / 2 - 2);
        d.cy = rng.uniform(d.h / 2 + 2, spec.canvas - d.h / 2 - 2);
        d.vx = d.vy = 0.0;
        d.disc = target.disc;  // same shape family
        for (int c = 0; c < 3; ++c) {
            const double own = rng.uniform(0.3, 1.0);
            d.color[c] = own + spec.distractor_similarity * (target.color[c] - own);
        }
        distractors.push_back(d);
    }

    std::vector<Frame> frames;
    frames.reserve(static_cast<std::size_t>(spec.frames));
    for (int f = 0; f < spec.frames; ++f) {
        if (f > 0) {
            detail::step_object(target, rng, spec.motion_amplitude, spec.canvas);
            for (auto& d : distractors) detail::step_object(d, rng, spec.motion_amplitude, spec.canvas);
        }
        Frame frame;
        frame.image = Tensor::zeros({3, spec.canvas, spec.canvas});
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < spec.canvas * spec.canvas; ++i)
                (*frame.image.data)[static_cast<std::size_t>(c) * spec.canvas * spec.canvas + i] = bg[c];
        for (const auto& d : distractors) detail::draw_object(frame.image, d);
        detail::draw_object(frame.image, target);
        if (spec.noise > 0.0)
            for (auto& v : *frame.image.data)
                v = std::clamp(v + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0);
        frame.gt = BBox{target.cx, target.cy, target.w, target.h};
        if (frame.gt.x1() < 0 || frame.gt.y1() < 0 || frame.gt.x2() > spec.canvas ||
            frame.gt.y2() > spec.canvas)
            throw ConfigError("scenario: target left the canvas");
        frames.push_back(std::move(frame));
    }
    return frames;
}

// Checksum over the raw image bytes and the gt box; used for golden tests.
inline std::uint64_t frame_checksum(const Frame& f) {
    std::uint64_t h = fnv1a(f.image.data->data(), f.image.data->size() * sizeof(double));
    const double box[4] = {f.gt.cx, f.gt.cy, f.gt.w, f.gt.h};
    return fnv1a(box, sizeof(box), h);
}

}  // namespace grm
