#pragma once
// The full encoder + head model: construction, deterministic initialization,
// named parameter enumeration, and the forward pass from image pair to head
// output.

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grm/embedding.hpp"
#include "grm/gradcheck.hpp"
#include "grm/head.hpp"
#include "grm/relation.hpp"

namespace grm {

struct ModelConfig {
    PatchConfig patch;
    int num_heads = 4;
    int num_layers = 4;
    std::vector<int> division_layers;  // 1-based; empty means 2..L
    Pooling pooling = Pooling::max;
    double tau = 1.0;

    std::vector<int> effective_division_layers() const {
        if (!division_layers.empty()) return division_layers;
        std::vector<int> out;
        for (int l = 2; l <= num_layers; ++l) out.push_back(l);
        return out;
    }

    std::set<int> division_layer_set() const {
        const auto v = effective_division_layers();
        return std::set<int>(v.begin(), v.end());
    }

    void validate() const {
        patch.validate();
        if (num_layers < 1) throw ConfigError("model: need at least one encoder layer");
        if (num_heads < 1 || patch.embed_dim % num_heads != 0)
            throw ConfigError("model: num_heads must divide embed_dim");
        if (tau <= 0.0) throw ConfigError("model: tau must be positive");
        for (int l : division_layers)
            if (l < 1 || l > num_layers)
                throw ConfigError("model: division layer " + std::to_string(l) + " outside 1.." +
                                  std::to_string(num_layers));
    }

    // Canonical string covering everything needed to rebuild parameter shapes.
    std::string canonical() const {
        std::ostringstream os;
        os << "patch=" << patch.patch << ";embed=" << patch.embed_dim << ";tmpl=" << patch.template_size
           << ";search=" << patch.search_size << ";heads=" << num_heads << ";layers=" << num_layers
           << ";div=";
        bool first = true;
        for (int l : effective_division_layers()) {
            if (!first) os << ",";
            os << l;
            first = false;
        }
        os << ";pool=" << (pooling == Pooling::max ? "max" : "avg");
        return os.str();
    }

    std::uint64_t digest() const { return fnv1a_str(canonical()); }
};

struct EmbedParams {
    Tensor proj_w, proj_b;  // {3P^2, C}, {C}
    Tensor pos_z, pos_x;    // {N_z, C}, {N_x, C}
};

struct GrmModel {
    ModelConfig cfg;
    EmbedParams embed;
    std::vector<EncoderLayerParams> layers;
    HeadParams head;
};

namespace detail {

inline Tensor init_normal(Shape s, Rng& rng, double stddev) {
    Tensor t = Tensor::zeros(std::move(s), /*req=*/true);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = rng.normal(0.0, stddev);
    return t;
}

inline Tensor init_const(Shape s, double v) {
    return Tensor::full(std::move(s), v, /*req=*/true);
}

inline HeadBranch init_branch(int c_in, int n_out, Rng& rng, double out_bias) {
    HeadBranch b;
    int cin = c_in;
    for (int i = 0; i < 4; ++i) {
        const int cout = std::max(1, cin / 2);
        ConvStage st;
        st.w = init_normal({cout, cin, 3, 3}, rng, std::sqrt(2.0 / (cin * 9.0)));
        st.norm_g = init_const({cout}, 1.0);
        st.norm_b = init_const({cout}, 0.0);
        b.stages.push_back(std::move(st));
        cin = cout;
    }
    b.out_w = init_normal({n_out, cin, 1, 1}, rng, 0.01);
    b.out_b = init_const({n_out}, out_bias);
    return b;
}

}  // namespace detail

inline GrmModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GrmModel m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, 0x6d6f64656cULL));

    const int c = cfg.patch.embed_dim;
    const int d = c / cfg.num_heads;
    const std::set<int> div_set = cfg.division_layer_set();

    m.embed.proj_w = detail::init_normal({cfg.patch.patch_dim(), c}, rng, 0.02);
    m.embed.proj_b = detail::init_const({c}, 0.0);
    m.embed.pos_z = detail::init_normal({cfg.patch.n_z(), c}, rng, 0.02);
    m.embed.pos_x = detail::init_normal({cfg.patch.n_x(), c}, rng, 0.02);

    for (int l = 1; l <= cfg.num_layers; ++l) {
        EncoderLayerParams p;
        p.num_heads = cfg.num_heads;
        for (int h = 0; h < cfg.num_heads; ++h) {
            p.wq.push_back(detail::init_normal({c, d}, rng, 0.02));
            p.bq.push_back(detail::init_const({d}, 0.0));
            p.wk.push_back(detail::init_normal({c, d}, rng, 0.02));
            p.bk.push_back(detail::init_const({d}, 0.0));
            p.wv.push_back(detail::init_normal({c, d}, rng, 0.02));
            p.bv.push_back(detail::init_const({d}, 0.0));
            p.wo.push_back(detail::init_normal({d, c}, rng, 0.02));
        }
        p.bo = detail::init_const({c}, 0.0);
        p.ln1_g = detail::init_const({c}, 1.0);
        p.ln1_b = detail::init_const({c}, 0.0);
        p.ln2_g = detail::init_const({c}, 1.0);
        p.ln2_b = detail::init_const({c}, 0.0);
        p.ffn_w1 = detail::init_normal({c, 4 * c}, rng, 0.02);
        p.ffn_b1 = detail::init_const({4 * c}, 0.0);
        p.ffn_w2 = detail::init_normal({4 * c, c}, rng, 0.02);
        p.ffn_b2 = detail::init_const({c}, 0.0);
        if (div_set.count(l)) {
            DivisionPredictorParams dp;
            const int h1 = std::max(2, c / 2), h2 = std::max(2, c / 4);
            dp.w1 = detail::init_normal({2 * c, h1}, rng, 0.02);
            dp.b1 = detail::init_const({h1}, 0.0);
            dp.w2 = detail::init_normal({h1, h2}, rng, 0.02);
            dp.b2 = detail::init_const({h2}, 0.0);
            // zero-initialized output layer: every token starts at pi = (0.5, 0.5)
            dp.w3 = detail::init_const({h2, 2}, 0.0);
            dp.b3 = detail::init_const({2}, 0.0);
            p.predictor = std::move(dp);
        }
        m.layers.push_back(std::move(p));
    }

    m.head.center = detail::init_branch(c, 1, rng, -2.0);  // low initial center confidence
    m.head.offset = detail::init_branch(c, 2, rng, 0.0);
    m.head.size = detail::init_branch(c, 2, rng, 0.0);
    return m;
}

inline std::vector<ParamRef> named_params(GrmModel& m) {
    std::vector<ParamRef> out;
    auto push = [&](const std::string& name, Tensor& t) { out.push_back({name, t}); };
    push("embed.proj_w", m.embed.proj_w);
    push("embed.proj_b", m.embed.proj_b);
    push("embed.pos_z", m.embed.pos_z);
    push("embed.pos_x", m.embed.pos_x);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string pre = "layer" + std::to_string(l + 1) + ".";
        EncoderLayerParams& p = m.layers[l];
        for (int h = 0; h < p.num_heads; ++h) {
            const std::string hp = pre + "attn.h" + std::to_string(h) + ".";
            push(hp + "wq", p.wq[static_cast<std::size_t>(h)]);
            push(hp + "bq", p.bq[static_cast<std::size_t>(h)]);
            push(hp + "wk", p.wk[static_cast<std::size_t>(h)]);
            push(hp + "bk", p.bk[static_cast<std::size_t>(h)]);
            push(hp + "wv", p.wv[static_cast<std::size_t>(h)]);
            push(hp + "bv", p.bv[static_cast<std::size_t>(h)]);
            push(hp + "wo", p.wo[static_cast<std::size_t>(h)]);
        }
        push(pre + "attn.bo", p.bo);
        push(pre + "ln1.g", p.ln1_g);
        push(pre + "ln1.b", p.ln1_b);
        push(pre + "ln2.g", p.ln2_g);
        push(pre + "ln2.b", p.ln2_b);
        push(pre + "ffn.w1", p.ffn_w1);
        push(pre + "ffn.b1", p.ffn_b1);
        push(pre + "ffn.w2", p.ffn_w2);
        push(pre + "ffn.b2", p.ffn_b2);
        if (p.predictor) {
            push(pre + "div.w1", p.predictor->w1);
            push(pre + "div.b1", p.predictor->b1);
            push(pre + "div.w2", p.predictor->w2);
            push(pre + "div.b2", p.predictor->b2);
            push(pre + "div.w3", p.predictor->w3);
            push(pre + "div.b3", p.predictor->b3);
        }
    }
    auto push_branch = [&](const std::string& name, HeadBranch& b) {
        for (std::size_t i = 0; i < b.stages.size(); ++i) {
            const std::string sp = "head." + name + ".stage" + std::to_string(i) + ".";
            push(sp + "w", b.stages[i].w);
            push(sp + "norm_g", b.stages[i].norm_g);
            push(sp + "norm_b", b.stages[i].norm_b);
        }
        push("head." + name + ".out_w", b.out_w);
        push("head." + name + ".out_b", b.out_b);
    };
    push_branch("center", m.head.center);
    push_branch("offset", m.head.offset);
    push_branch("size", m.head.size);
    return out;
}

inline TokenBuffer embed_template(const GrmModel& m, const Tensor& tmpl_img) {
    const int g = m.cfg.patch.grid_z();
    return embed_tokens(patchify(tmpl_img, m.cfg.patch.patch), m.embed.proj_w, m.embed.proj_b,
                        m.embed.pos_z, TokenOrigin::tmpl, g, g);
}

inline TokenBuffer embed_search(const GrmModel& m, const Tensor& search_img) {
    const int g = m.cfg.patch.grid_x();
    return embed_tokens(patchify(search_img, m.cfg.patch.patch), m.embed.proj_w, m.embed.proj_b,
                        m.embed.pos_x, TokenOrigin::search, g, g);
}

struct ModelForward {
    StackResult stack;
    HeadOutput head;
};

inline ModelForward model_forward_tokens(const GrmModel& m, const Tensor& tmpl_tokens,
                                         const Tensor& search_tokens, const GumbelConfig& gumbel,
                                         RelationPolicy policy, Rng* rng,
                                         const std::vector<DivisionOverride>* overrides = nullptr) {
    ModelForward fwd;
    fwd.stack = encoder_stack(tmpl_tokens, search_tokens, m.layers, gumbel, m.cfg.division_layer_set(),
                              policy, m.cfg.pooling, rng, overrides);
    TokenBuffer buf;
    buf.tokens = fwd.stack.e_x;
    buf.origin = TokenOrigin::search;
    buf.rows = m.cfg.patch.grid_x();
    buf.cols = m.cfg.patch.grid_x();
    fwd.head = head_forward(tokens_to_map(buf), m.head);
    return fwd;
}

inline ModelForward model_forward(const GrmModel& m, const Tensor& tmpl_img, const Tensor& search_img,
                                  const GumbelConfig& gumbel, RelationPolicy policy, Rng* rng,
                                  const std::vector<DivisionOverride>* overrides = nullptr) {
    return model_forward_tokens(m, embed_template(m, tmpl_img).tokens, embed_search(m, search_img).tokens,
                                gumbel, policy, rng, overrides);
}

}  // namespace grm
