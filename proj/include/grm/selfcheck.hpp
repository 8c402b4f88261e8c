#pragma once
// End-to-end gradient check on a tiny model (C=16, L=2, N_z=4, N_x=16).
//
// The forward pass runs the adaptive division in train mode with the Gumbel
// noise frozen to the draw of a base run, and the hard assignment replayed as
// a frozen additive offset (hard - soft at the base point). Under parameter
// perturbation the division path is then a smooth function whose derivative
// is exactly the straight-through backward, so central differences check the
// whole tape including the division estimator.

#include "grm/config.hpp"
#include "grm/gradcheck.hpp"
#include "grm/tracker.hpp"

namespace grm {

inline ModelConfig tiny_model_config() {
    ModelConfig mc;
    mc.patch.patch = 8;
    mc.patch.embed_dim = 16;
    mc.patch.template_size = 16;  // N_z = 4
    mc.patch.search_size = 32;    // N_x = 16
    mc.num_heads = 2;
    mc.num_layers = 2;
    mc.division_layers = {2};
    return mc;
}

namespace detail {

// Test fixture: identity forward whose recorded backward is scaled by 1.02,
// used to prove the checker flags a corrupted rule.
inline Tensor corrupted_identity(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape);
    std::copy(x.data->begin(), x.data->end(), out.data->begin());
    if (ambient_tape() && x.requires_grad) {
        mark(out);
        Tensor xc = x, oc = out;
        out.node_id = push([xc, oc]() mutable {
            for (std::size_t i = 0; i < oc.grad->size(); ++i) (*xc.grad)[i] += 1.02 * (*oc.grad)[i];
        });
    }
    return out;
}

}  // namespace detail

inline GradCheckReport run_model_grad_check(std::uint64_t seed, bool inject_fault = false) {
    GrmModel model = build_model(tiny_model_config(), seed);

    SyntheticScenario spec;
    spec.seed = derive_seed(seed, 0x67636865636bULL);
    spec.frames = 4;
    spec.canvas = 64;
    spec.target_size = 12.0;
    spec.distractor_count = 1;
    spec.noise = 0.02;
    const auto frames = generate_scenario(spec);

    const Tensor tmpl = crop_template(frames[0].image, frames[0].gt, model.cfg.patch.template_size);
    auto [search, rec] = crop_search(frames[1].image, frames[0].gt, model.cfg.patch.search_size);
    BBox label = box_to_crop(frames[1].gt, rec);
    label.cx = std::clamp(label.cx, 0.0, 1.0);
    label.cy = std::clamp(label.cy, 0.0, 1.0);

    GumbelConfig gumbel;
    gumbel.tau = model.cfg.tau;
    gumbel.train = true;

    // base run: draw the noise and capture the straight-through offsets
    std::vector<DivisionOverride> overrides(static_cast<std::size_t>(model.cfg.num_layers));
    {
        Rng rng(derive_seed(seed, 0x6e6f697365ULL));
        const ModelForward fwd =
            model_forward(model, tmpl, search, gumbel, RelationPolicy::adaptive, &rng);
        for (int l = 0; l < model.cfg.num_layers; ++l) {
            const auto& div = fwd.stack.divisions[static_cast<std::size_t>(l)];
            if (!div) continue;
            DivisionOverride ov;
            ov.noise = div->noise.clone_values();
            Tensor offset = Tensor::zeros(div->soft.shape);
            for (std::int64_t i = 0; i < offset.numel(); ++i)
                offset.at(i) = div->hard.at(i) - div->soft.at(i);
            ov.offset = offset;
            overrides[static_cast<std::size_t>(l)] = std::move(ov);
        }
    }

    const LossWeights weights;
    const HeadLossConfig head_cfg;
    auto f = [&]() {
        const ModelForward fwd = model_forward(model, tmpl, search, gumbel,
                                               RelationPolicy::adaptive, nullptr, &overrides);
        Tensor loss = total_loss(fwd.head, label, weights, head_cfg);
        return inject_fault ? detail::corrupted_identity(loss) : loss;
    };
    return finite_diff_check(f, named_params(model), 1e-5);
}

}  // namespace grm
