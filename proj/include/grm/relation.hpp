#pragma once
// Tri-category relation modeling: adaptive division of search tokens into
// E_S / E_A, attention-mask construction from the division, and the unified
// masked multi-head attention that replaces three separate attention calls.
//
// Token categories over the concatenated sequence [E_z; E_x]:
//   E_T — all template tokens (fixed),
//   E_S — search tokens blocked from the template,
//   E_A — search tokens selected for cross-relation modeling.
// Interaction rules: T attends {T, A}; S attends {S, A}; A attends everything.

#include <cstdio>
#include <optional>
#include <set>
#include <vector>

#include "grm/common.hpp"
#include "grm/tensor.hpp"

namespace grm {

enum class Pooling { max, avg };
enum class DivisionPolicy { adaptive, force_all_s, force_all_a };
enum class RelationPolicy { adaptive, two_stream, one_stream };

struct GumbelConfig {
    double tau = 1.0;
    std::uint64_t rng_seed = 0;
    bool train = true;
};

struct Division {
    Tensor pi;     // {N_x, 2} rows on the simplex; col 0 = E_S, col 1 = E_A
    Tensor hard;   // {N_x, 2} one-hot rows
    Tensor soft;   // Gumbel-Softmax relaxation (train mode)
    Tensor st;     // forward-hard / backward-soft value used to build the mask
    Tensor noise;  // the Gumbel draw (train mode); kept for frozen-noise replay

    int count_a() const {
        int n = 0;
        for (int i = 0; i < hard.rows(); ++i)
            if (hard.at2(i, 1) == 1.0) ++n;
        return n;
    }
};

// Frozen randomness for gradient checking: the Gumbel noise drawn at a base
// point and, optionally, the additive offset (hard - soft) captured there so
// the division path stays a smooth function under parameter perturbation.
struct DivisionOverride {
    Tensor noise;   // {N_x, 2}
    Tensor offset;  // {N_x, 2}; empty => use the exact straight-through op
};

struct DivisionPredictorParams {
    Tensor w1, b1;  // 2C -> C/2
    Tensor w2, b2;  // C/2 -> C/4
    Tensor w3, b3;  // C/4 -> 2
};

struct EncoderLayerParams {
    int num_heads = 4;
    std::vector<Tensor> wq, bq, wk, bk, wv, bv;  // per head: {C,d} / {d}
    std::vector<Tensor> wo;                      // per head: {d,C}
    Tensor bo;                                   // {C}
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;           // {C}
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;       // C -> 4C -> C
    std::optional<DivisionPredictorParams> predictor;

    int embed_dim() const { return ln1_g.shape[0]; }
    int head_dim() const { return wq.empty() ? 0 : wq[0].cols(); }
};

struct LayerState {
    Tensor e_z;  // {N_z, C}
    Tensor e_x;  // {N_x, C}
};

// pi = Softmax(MLP([Pool(E_z); E_x])), rowwise over the two categories.
inline Tensor predict_division(const Tensor& e_z, const Tensor& e_x,
                               const DivisionPredictorParams& p, Pooling pooling) {
    const Tensor pooled = pooling == Pooling::max ? global_maxpool(e_z) : global_avgpool(e_z);
    const Tensor tiled = tile_rows(pooled, e_x.rows());
    const Tensor inp = concat_cols(tiled, e_x);
    Tensor h = gelu(linear(inp, p.w1, p.b1));
    h = gelu(linear(h, p.w2, p.b2));
    const Tensor logits = linear(h, p.w3, p.b3);
    return softmax_rows(logits);
}

// Train mode: D = one-hot(argmax(log pi + g)) with g ~ Gumbel(0,1) i.i.d. per
// entry; soft = softmax((log pi + g)/tau) over the two categories per token;
// st carries D forward and routes gradients through soft. Eval mode draws no
// noise: D = one-hot(argmax pi). Argmax ties resolve to E_A.
inline Division gumbel_divide(const Tensor& pi, const GumbelConfig& cfg, Rng* rng,
                              const DivisionOverride* ov = nullptr) {
    if (cfg.tau <= 0.0) throw ConfigError("gumbel_divide: tau must be positive");
    if (pi.ndim() != 2 || pi.cols() != 2)
        throw ShapeError("gumbel_divide: pi must be {N_x, 2}, got " + shape_str(pi.shape));
    const int n = pi.rows();

    Division div;
    div.pi = pi;

    if (!cfg.train) {
        Tensor hard = Tensor::zeros({n, 2});
        for (int i = 0; i < n; ++i) hard.at2(i, pi.at2(i, 1) >= pi.at2(i, 0) ? 1 : 0) = 1.0;
        div.hard = hard;
        div.soft = pi.detached();
        div.st = hard;
        return div;
    }

    Tensor noise;
    if (ov) {
        noise = ov->noise.detached();
    } else {
        if (!rng) throw ConfigError("gumbel_divide: train mode needs an RNG");
        noise = Tensor::zeros({n, 2});
        for (std::int64_t i = 0; i < noise.numel(); ++i) noise.at(i) = rng->gumbel();
    }

    div.noise = noise;
    const Tensor logpi = log_t(clamp(pi, 1e-12, 1.0));
    const Tensor perturbed = add(logpi, noise);
    div.soft = softmax_rows(scale(perturbed, 1.0 / cfg.tau));

    Tensor hard = Tensor::zeros({n, 2});
    for (int i = 0; i < n; ++i) hard.at2(i, perturbed.at2(i, 1) >= perturbed.at2(i, 0) ? 1 : 0) = 1.0;
    div.hard = hard;

    if (ov && ov->offset.data) {
        div.st = add(div.soft, ov->offset.detached());
    } else {
        div.st = straight_through(div.soft, hard);
    }
    return div;
}

// The 3x3 category interaction table: row = query category, col = key
// category, order (T, S, A).
inline Tensor relation_rules() {
    return Tensor::matrix({{1, 0, 1}, {0, 1, 1}, {1, 1, 1}});
}

// M = Dhat * A * Dhat^T with Dhat = [D_z; D_x], D_z rows = (1,0,0) and D_x the
// division prefixed with a zero T-column. Binary whenever d is one-hot; with
// straight-through values the construction stays on the tape.
inline Tensor build_mask(const Tensor& d, int n_z, bool validate = true) {
    if (d.ndim() != 2 || d.cols() != 2)
        throw ShapeError("build_mask: division must be {N_x, 2}, got " + shape_str(d.shape));
    if (n_z < 1) throw ShapeError("build_mask: need at least one template token");
    if (validate) {
        for (int i = 0; i < d.rows(); ++i) {
            const double a = d.at2(i, 0), b = d.at2(i, 1);
            const bool onehot = (a == 0.0 && b == 1.0) || (a == 1.0 && b == 0.0);
            if (!onehot)
                throw std::invalid_argument("build_mask: row " + std::to_string(i) + " is not one-hot");
        }
    }
    Tensor z_block = Tensor::zeros({n_z, 3});
    for (int i = 0; i < n_z; ++i) z_block.at2(i, 0) = 1.0;
    const Tensor x_block = concat_cols(Tensor::zeros({d.rows(), 1}), d);
    const Tensor dhat = concat_rows(z_block, x_block);
    return matmul(matmul(dhat, relation_rules()), transpose(dhat));
}

namespace detail {

// One multi-head attention pass: queries from q_src, keys/values from kv_src,
// optional admissibility mask over (q, kv) pairs. No residual.
inline Tensor attention_core(const Tensor& q_src, const Tensor& kv_src, const Tensor* mask,
                             const EncoderLayerParams& p) {
    const int heads = p.num_heads;
    const int d = p.wq[0].cols();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out;
    for (int h = 0; h < heads; ++h) {
        const Tensor q = linear(q_src, p.wq[h], p.bq[h]);
        const Tensor k = linear(kv_src, p.wk[h], p.bk[h]);
        const Tensor v = linear(kv_src, p.wv[h], p.bv[h]);
        const Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
        const Tensor attn = mask ? masked_softmax(scores, *mask) : softmax_rows(scores);
        const Tensor head = matmul(matmul(attn, v), p.wo[h]);
        out = h == 0 ? head : add(out, head);
    }
    return add_rowvec(out, p.bo);
}

}  // namespace detail

// Unified masked attention over the concatenated token sequence. Equivalent
// to running the three per-category attention calls separately.
inline Tensor masked_mha(const Tensor& tokens, const Tensor& mask, const EncoderLayerParams& p) {
    const int n = tokens.rows();
    if (mask.ndim() != 2 || mask.rows() != n || mask.cols() != n)
        throw ShapeError("masked_mha: mask " + shape_str(mask.shape) + " does not match tokens " +
                         shape_str(tokens.shape));
    return detail::attention_core(tokens, tokens, &mask, p);
}

// Reference path: three independent attention operations, one per category,
// reassembled into the original token order. Same parameters as masked_mha.
inline Tensor separate_mha_oracle(const Tensor& e_z, const Tensor& e_x, const Tensor& hard_division,
                                  const EncoderLayerParams& p) {
    const int n_z = e_z.rows(), n_x = e_x.rows();
    std::vector<int> s_idx, a_idx;
    for (int i = 0; i < n_x; ++i) {
        const double s = hard_division.at2(i, 0), a = hard_division.at2(i, 1);
        if (s == 1.0 && a == 0.0)
            s_idx.push_back(i);
        else if (a == 1.0 && s == 0.0)
            a_idx.push_back(i);
        else
            throw std::invalid_argument("separate_mha_oracle: division row " + std::to_string(i) +
                                        " is not one-hot");
    }
    const int c = e_z.cols();

    auto take = [&](const Tensor& src, const std::vector<int>& rows) {
        auto idx = std::make_shared<std::vector<std::int64_t>>();
        idx->reserve(rows.size() * static_cast<std::size_t>(c));
        for (int r : rows)
            for (int j = 0; j < c; ++j) idx->push_back(static_cast<std::int64_t>(r) * c + j);
        return gather(src, std::move(idx), {static_cast<int>(rows.size()), c});
    };

    const Tensor e_a = a_idx.empty() ? Tensor() : take(e_x, a_idx);
    const Tensor e_s = s_idx.empty() ? Tensor() : take(e_x, s_idx);

    // E_T queries over [E_z; E_A]
    const Tensor kv_t = a_idx.empty() ? e_z : concat_rows(e_z, e_a);
    const Tensor out_t = detail::attention_core(e_z, kv_t, nullptr, p);
    // E_S queries over E_x (= [E_S; E_A] as a set, in original order)
    Tensor out_s;
    if (!s_idx.empty()) out_s = detail::attention_core(e_s, e_x, nullptr, p);
    // E_A queries over [E_z; E_x]
    Tensor out_a;
    if (!a_idx.empty()) out_a = detail::attention_core(e_a, concat_rows(e_z, e_x), nullptr, p);

    // scatter rows back to original order
    Tensor stacked = out_t;
    if (out_s.data) stacked = concat_rows(stacked, out_s);
    if (out_a.data) stacked = concat_rows(stacked, out_a);
    std::vector<int> pos(static_cast<std::size_t>(n_z) + n_x);
    for (int i = 0; i < n_z; ++i) pos[i] = i;
    int cursor = n_z;
    for (std::size_t j = 0; j < s_idx.size(); ++j) pos[static_cast<std::size_t>(n_z) + s_idx[j]] = cursor++;
    for (std::size_t j = 0; j < a_idx.size(); ++j) pos[static_cast<std::size_t>(n_z) + a_idx[j]] = cursor++;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(n_z + n_x) * c);
    for (int i = 0; i < n_z + n_x; ++i)
        for (int j = 0; j < c; ++j) idx->push_back(static_cast<std::int64_t>(pos[i]) * c + j);
    return gather(stacked, std::move(idx), {n_z + n_x, c});
}

inline Tensor feed_forward(const Tensor& x, const EncoderLayerParams& p) {
    return linear(gelu(linear(x, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
}

constexpr double kLayerNormEps = 1e-6;

struct LayerResult {
    LayerState state;
    std::optional<Division> division;
};

// Pre-layernorm block: x' = x + MaskedMHA(LN(x)); out = x' + FFN(LN(x')).
// Forced policies bypass the predictor with the stated constant division; an
// adaptive layer without predictor parameters is a configuration error.
inline LayerResult encoder_layer(const LayerState& in, const EncoderLayerParams& p,
                                 const GumbelConfig& cfg, DivisionPolicy policy, Pooling pooling,
                                 Rng* rng, const DivisionOverride* ov = nullptr) {
    const int n_z = in.e_z.rows(), n_x = in.e_x.rows();
    const int n = n_z + n_x;

    LayerResult result;
    Tensor mask;
    if (policy == DivisionPolicy::adaptive) {
        if (!p.predictor)
            throw ConfigError("encoder_layer: adaptive division requires predictor parameters");
        const Tensor pi = predict_division(in.e_z, in.e_x, *p.predictor, pooling);
        Division div = gumbel_divide(pi, cfg, rng, ov);
        mask = build_mask(div.st, n_z, /*validate=*/false);
        result.division = std::move(div);
    } else {
        const int col = policy == DivisionPolicy::force_all_a ? 1 : 0;
        Tensor d = Tensor::zeros({n_x, 2});
        for (int i = 0; i < n_x; ++i) d.at2(i, col) = 1.0;
        if (policy == DivisionPolicy::force_all_a) {
            mask = Tensor::full({n, n}, 1.0);
        } else {
            mask = build_mask(d, n_z);
        }
        Division div;
        div.pi = d.clone_values();
        div.hard = d;
        div.soft = d.detached();
        div.st = d.detached();
        result.division = std::move(div);
    }

    const Tensor tokens = concat_rows(in.e_z, in.e_x);
    const Tensor att = masked_mha(layernorm(tokens, p.ln1_g, p.ln1_b, kLayerNormEps), mask, p);
    const Tensor x1 = add(tokens, att);
    const Tensor x2 = add(x1, feed_forward(layernorm(x1, p.ln2_g, p.ln2_b, kLayerNormEps), p));
    result.state.e_z = slice_rows(x2, 0, n_z);
    result.state.e_x = slice_rows(x2, n_z, n);
    return result;
}

struct StackResult {
    Tensor e_z;
    Tensor e_x;
    std::vector<std::optional<Division>> divisions;  // one slot per layer
};

// Layers are 1-based to match the usual "division in layers 2..L" phrasing.
// Layers outside division_layers run as force_all_a. Placing the division in
// layer 1 is allowed but warned against once per process.
inline StackResult encoder_stack(const Tensor& e_z0, const Tensor& e_x0,
                                 const std::vector<EncoderLayerParams>& layers,
                                 const GumbelConfig& cfg, const std::set<int>& division_layers,
                                 RelationPolicy policy, Pooling pooling, Rng* rng,
                                 const std::vector<DivisionOverride>* overrides = nullptr) {
    const int depth = static_cast<int>(layers.size());
    if (depth < 1) throw ConfigError("encoder_stack: need at least one layer");
    for (int l : division_layers)
        if (l < 1 || l > depth)
            throw ConfigError("encoder_stack: division layer " + std::to_string(l) + " out of range 1.." +
                              std::to_string(depth));
    if (policy == RelationPolicy::adaptive && division_layers.count(1)) {
        static thread_local bool warned = false;
        if (!warned) {
            std::fprintf(stderr,
                         "warning: token division in the first encoder layer runs on raw embeddings "
                         "and tends to underperform\n");
            warned = true;
        }
    }

    StackResult out;
    LayerState state{e_z0, e_x0};
    out.divisions.resize(static_cast<std::size_t>(depth));
    for (int l = 1; l <= depth; ++l) {
        DivisionPolicy lp = DivisionPolicy::force_all_a;
        switch (policy) {
            case RelationPolicy::adaptive:
                lp = division_layers.count(l) ? DivisionPolicy::adaptive : DivisionPolicy::force_all_a;
                break;
            case RelationPolicy::two_stream:
                lp = l < depth ? DivisionPolicy::force_all_s : DivisionPolicy::force_all_a;
                break;
            case RelationPolicy::one_stream:
                lp = DivisionPolicy::force_all_a;
                break;
        }
        const DivisionOverride* ov = nullptr;
        if (overrides && static_cast<int>(overrides->size()) >= l && (*overrides)[l - 1].noise.data)
            ov = &(*overrides)[l - 1];
        LayerResult res = encoder_layer(state, layers[static_cast<std::size_t>(l - 1)], cfg, lp, pooling, rng, ov);
        state = std::move(res.state);
        if (policy == RelationPolicy::adaptive && !division_layers.count(l)) {
            out.divisions[static_cast<std::size_t>(l - 1)].reset();
        } else {
            out.divisions[static_cast<std::size_t>(l - 1)] = std::move(res.division);
        }
    }
    out.e_z = state.e_z;
    out.e_x = state.e_x;
    return out;
}

}  // namespace grm
