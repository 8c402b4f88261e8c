#pragma once
// Crop geometry, the frame-by-frame inference loop, the training loop, and
// sequence-level evaluation metrics.
//
// Crops are square with side = factor * sqrt(w * h) around the box center
// (geometric-mean side), bilinearly resized with half-pixel centers and edge
// replication outside the canvas. The template is frozen after init.

#include <functional>
#include <utility>
#include <vector>

#include "grm/checkpoint.hpp"
#include "grm/model.hpp"
#include "grm/optim.hpp"
#include "grm/synth.hpp"

namespace grm {

constexpr double kTemplateCropFactor = 2.0;
constexpr double kSearchCropFactor = 4.0;

struct CropRecord {
    double x0 = 0.0, y0 = 0.0;  // top-left of the crop in frame pixels
    double side = 0.0;          // crop side in frame pixels
    int out_size = 0;           // resized resolution
};

inline Tensor crop_resize(const Tensor& img, double cx, double cy, double side, int out_size,
                          CropRecord* rec = nullptr) {
    if (img.ndim() != 3 || img.shape[0] != 3)
        throw ShapeError("crop_resize: expected image {3,H,W}");
    if (side <= 0.0 || out_size <= 0) throw std::invalid_argument("crop_resize: degenerate crop");
    const int h = img.shape[1], w = img.shape[2];
    const double x0 = cx - side / 2.0, y0 = cy - side / 2.0;
    if (rec) *rec = CropRecord{x0, y0, side, out_size};
    Tensor out = Tensor::zeros({3, out_size, out_size});
    const double scale = side / out_size;
    for (int oy = 0; oy < out_size; ++oy) {
        const double sy = std::clamp(y0 + (oy + 0.5) * scale - 0.5, 0.0, static_cast<double>(h - 1));
        const int iy0 = static_cast<int>(std::floor(sy));
        const int iy1 = std::min(iy0 + 1, h - 1);
        const double fy = sy - iy0;
        for (int ox = 0; ox < out_size; ++ox) {
            const double sx = std::clamp(x0 + (ox + 0.5) * scale - 0.5, 0.0, static_cast<double>(w - 1));
            const int ix0 = static_cast<int>(std::floor(sx));
            const int ix1 = std::min(ix0 + 1, w - 1);
            const double fx = sx - ix0;
            for (int c = 0; c < 3; ++c) {
                const double* plane = img.data->data() + static_cast<std::size_t>(c) * h * w;
                const double v00 = plane[static_cast<std::size_t>(iy0) * w + ix0];
                const double v01 = plane[static_cast<std::size_t>(iy0) * w + ix1];
                const double v10 = plane[static_cast<std::size_t>(iy1) * w + ix0];
                const double v11 = plane[static_cast<std::size_t>(iy1) * w + ix1];
                (*out.data)[(static_cast<std::size_t>(c) * out_size + oy) * out_size + ox] =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

inline Tensor crop_template(const Tensor& frame_img, const BBox& box_px, int out_size,
                            double factor = kTemplateCropFactor) {
    if (box_px.w <= 0.0 || box_px.h <= 0.0)
        throw std::invalid_argument("crop_template: degenerate box");
    return crop_resize(frame_img, box_px.cx, box_px.cy, factor * std::sqrt(box_px.w * box_px.h), out_size);
}

inline std::pair<Tensor, CropRecord> crop_search(const Tensor& frame_img, const BBox& prev_px,
                                                 int out_size, double factor = kSearchCropFactor) {
    if (prev_px.w <= 0.0 || prev_px.h <= 0.0)
        throw std::invalid_argument("crop_search: degenerate box");
    CropRecord rec;
    Tensor img = crop_resize(frame_img, prev_px.cx, prev_px.cy,
                             factor * std::sqrt(prev_px.w * prev_px.h), out_size, &rec);
    return {std::move(img), rec};
}

inline BBox box_to_crop(const BBox& frame_px, const CropRecord& rec) {
    return BBox{(frame_px.cx - rec.x0) / rec.side, (frame_px.cy - rec.y0) / rec.side,
                frame_px.w / rec.side, frame_px.h / rec.side};
}

inline BBox box_to_frame(const BBox& crop_norm, const CropRecord& rec) {
    return BBox{rec.x0 + crop_norm.cx * rec.side, rec.y0 + crop_norm.cy * rec.side,
                crop_norm.w * rec.side, crop_norm.h * rec.side};
}

struct TrackState {
    TokenBuffer template_tokens;  // frozen at init
    BBox prev_box;                // frame pixels
    CropRecord last_crop;
};

inline TrackState init_track(const GrmModel& m, const Frame& first, const BBox& init_px) {
    TrackState st;
    st.template_tokens = embed_template(m, crop_template(first.image, init_px, m.cfg.patch.template_size));
    st.template_tokens.tokens = st.template_tokens.tokens.detached();
    st.prev_box = init_px;
    return st;
}

struct StepResult {
    BBox box;  // frame pixels
    std::vector<std::optional<Division>> divisions;
};

inline StepResult track_step(const GrmModel& m, TrackState& st, const Frame& frame,
                             RelationPolicy policy = RelationPolicy::adaptive) {
    auto [search_img, rec] = crop_search(frame.image, st.prev_box, m.cfg.patch.search_size);
    GumbelConfig g;
    g.tau = m.cfg.tau;
    g.train = false;
    ModelForward fwd = model_forward_tokens(m, st.template_tokens.tokens,
                                            embed_search(m, search_img).tokens, g, policy, nullptr);
    BBox box = box_to_frame(decode_box(fwd.head), rec);
    // keep the next crop well-defined
    const int h = frame.image.shape[1], w = frame.image.shape[2];
    box.cx = std::clamp(box.cx, 0.0, static_cast<double>(w));
    box.cy = std::clamp(box.cy, 0.0, static_cast<double>(h));
    box.w = std::clamp(box.w, 2.0, static_cast<double>(w));
    box.h = std::clamp(box.h, 2.0, static_cast<double>(h));
    st.prev_box = box;
    st.last_crop = rec;
    return {box, std::move(fwd.stack.divisions)};
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 40;
    int pairs_per_epoch = 64;
    double lr = 1e-3;
    int decay_epoch = 0;  // 0 means floor(0.8 * epochs)
    double decay_factor = 0.1;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    double tau = 1.0;
    RelationPolicy policy = RelationPolicy::adaptive;
    LossWeights loss_weights;
    HeadLossConfig head_loss;
    int scenario_count = 8;
    int delta_max = 10;
    SyntheticScenario scenario;  // template for training scenarios; seed is derived

    int effective_decay_epoch() const {
        return decay_epoch > 0 ? decay_epoch : static_cast<int>(std::floor(0.8 * epochs));
    }

    void validate() const {
        if (epochs < 0 || pairs_per_epoch < 1 || scenario_count < 1)
            throw ConfigError("train: counts must be positive");
        if (lr <= 0.0 || decay_factor <= 0.0) throw ConfigError("train: rates must be positive");
        if (decay_epoch > 0 && decay_epoch >= epochs)
            throw ConfigError("train: decay epoch must precede the last epoch");
        if (delta_max < 1) throw ConfigError("train: delta_max must be >= 1");
        if (tau <= 0.0) throw ConfigError("train: tau must be positive");
        loss_weights.validate();
        scenario.validate();
    }
};

struct TrainResult {
    std::vector<double> epoch_loss;
};

// One (template, search) pair per optimizer step: template from frame t,
// search region from frame t+delta positioned by the frame-t box. Aborts
// with epoch/step context if the loss goes non-finite.
inline TrainResult train(GrmModel& model, const TrainConfig& cfg) {
    cfg.validate();
    std::vector<std::vector<Frame>> scenarios;
    for (int s = 0; s < cfg.scenario_count; ++s) {
        SyntheticScenario spec = cfg.scenario;
        spec.seed = derive_seed(cfg.seed, 0x747261696eULL + static_cast<std::uint64_t>(s));
        scenarios.push_back(generate_scenario(spec));
    }

    auto params = named_params(model);
    AdamW opt(params, AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    Rng sample_rng(derive_seed(cfg.seed, 0x70616972ULL));
    Rng gumbel_rng(derive_seed(cfg.seed, 0x67756d62ULL));

    GumbelConfig gumbel;
    gumbel.tau = cfg.tau;
    gumbel.train = true;

    TrainResult result;
    Tape tape;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch == cfg.effective_decay_epoch()) opt.set_lr(cfg.lr * cfg.decay_factor);
        double loss_sum = 0.0;
        for (int step = 0; step < cfg.pairs_per_epoch; ++step) {
            const auto& seq = scenarios[static_cast<std::size_t>(
                sample_rng.uniform_int(0, cfg.scenario_count - 1))];
            const int max_delta = std::min(cfg.delta_max, static_cast<int>(seq.size()) - 1);
            const int delta = max_delta >= 1 ? sample_rng.uniform_int(1, max_delta) : 0;
            const int t = sample_rng.uniform_int(0, static_cast<int>(seq.size()) - 1 - delta);

            const Tensor tmpl = crop_template(seq[t].image, seq[t].gt, model.cfg.patch.template_size);
            auto [search, rec] =
                crop_search(seq[t + delta].image, seq[t].gt, model.cfg.patch.search_size);
            BBox label = box_to_crop(seq[t + delta].gt, rec);
            label.cx = std::clamp(label.cx, 0.0, 1.0);
            label.cy = std::clamp(label.cy, 0.0, 1.0);
            label.w = std::clamp(label.w, 1e-3, 1.0);
            label.h = std::clamp(label.h, 1e-3, 1.0);

            double loss_value = 0.0;
            try {
                TapeScope scope(tape);
                ModelForward fwd = model_forward(model, tmpl, search, gumbel, cfg.policy, &gumbel_rng);
                Tensor loss = total_loss(fwd.head, label, cfg.loss_weights, cfg.head_loss);
                loss_value = loss.item();
                if (!std::isfinite(loss_value))
                    throw NumericError("train: non-finite loss");
                tape.backward(loss);
            } catch (const NumericError& e) {
                throw TrainAbortError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                          ", step " + std::to_string(step) + ")",
                                      epoch, step);
            }
            opt.step();
            opt.zero_grad();
            tape.clear();
            loss_sum += loss_value;
        }
        result.epoch_loss.push_back(loss_sum / cfg.pairs_per_epoch);
    }
    return result;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct Metrics {
    double mean_iou = 0.0;
    double sr50 = 0.0;
    double sr75 = 0.0;
    std::vector<double> ea_fraction_per_layer;
};

// Harness over arbitrary steppers (used by self-tests with oracle stubs).
// The factory receives the sequence and returns a per-frame stepper invoked
// for frames 1..end; frame 0 provides the init box.
using Stepper = std::function<BBox(const Frame&, int)>;
using StepperFactory = std::function<Stepper(const std::vector<Frame>&)>;

inline Metrics evaluate_sequences(const StepperFactory& make_stepper,
                                  const std::vector<std::vector<Frame>>& sequences) {
    Metrics m;
    long n = 0, n50 = 0, n75 = 0;
    double iou_sum = 0.0;
    for (const auto& seq : sequences) {
        if (seq.size() < 2) continue;
        Stepper step = make_stepper(seq);
        for (std::size_t f = 1; f < seq.size(); ++f) {
            const BBox pred = step(seq[f], static_cast<int>(f));
            const double v = iou(pred, seq[f].gt);
            iou_sum += v;
            ++n;
            if (v > 0.5) ++n50;
            if (v > 0.75) ++n75;
        }
    }
    if (n > 0) {
        m.mean_iou = iou_sum / n;
        m.sr50 = static_cast<double>(n50) / n;
        m.sr75 = static_cast<double>(n75) / n;
    }
    return m;
}

// Model evaluation from the ground-truth init box. Also reports the mean
// fraction of search tokens assigned to E_A per layer (layers running as
// plain one-stream count as all-E_A).
inline Metrics evaluate(const GrmModel& model, const std::vector<std::vector<Frame>>& sequences,
                        RelationPolicy policy = RelationPolicy::adaptive) {
    Metrics m;
    const int depth = static_cast<int>(model.layers.size());
    std::vector<double> ea_sum(static_cast<std::size_t>(depth), 0.0);
    long n = 0, n50 = 0, n75 = 0;
    double iou_sum = 0.0;
    for (const auto& seq : sequences) {
        if (seq.size() < 2) continue;
        TrackState st = init_track(model, seq[0], seq[0].gt);
        for (std::size_t f = 1; f < seq.size(); ++f) {
            StepResult res = track_step(model, st, seq[f], policy);
            const double v = iou(res.box, seq[f].gt);
            iou_sum += v;
            ++n;
            if (v > 0.5) ++n50;
            if (v > 0.75) ++n75;
            for (int l = 0; l < depth; ++l) {
                const auto& div = res.divisions[static_cast<std::size_t>(l)];
                ea_sum[static_cast<std::size_t>(l)] +=
                    div ? static_cast<double>(div->count_a()) / div->hard.rows() : 1.0;
            }
        }
    }
    if (n > 0) {
        m.mean_iou = iou_sum / n;
        m.sr50 = static_cast<double>(n50) / n;
        m.sr75 = static_cast<double>(n75) / n;
        for (double s : ea_sum) m.ea_fraction_per_layer.push_back(s / n);
    }
    return m;
}

}  // namespace grm
