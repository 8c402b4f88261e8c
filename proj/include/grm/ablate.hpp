#pragma once
// The ablation grid: relation policies (#1 two-stream, #2 one-stream,
// #5 adaptive), division-layer placements (#b all layers, #c later half,
// #e all but the first) and pooling choice (#d average). Variants sharing a
// configuration are trained once and reported per label.

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "grm/config.hpp"
#include "grm/io.hpp"

namespace grm {

struct AblateVariant {
    std::string label;
    RelationPolicy policy = RelationPolicy::adaptive;
    std::vector<int> division_layers;
    Pooling pooling = Pooling::max;
};

inline std::vector<int> layer_range(int from, int to) {
    std::vector<int> out;
    for (int l = std::max(1, from); l <= to; ++l) out.push_back(l);
    return out;
}

inline AblateVariant make_variant(const std::string& label, int num_layers) {
    AblateVariant v;
    v.label = label;
    if (label == "#1") {
        v.policy = RelationPolicy::two_stream;
        v.division_layers = layer_range(2, num_layers);
    } else if (label == "#2") {
        v.policy = RelationPolicy::one_stream;
        v.division_layers = layer_range(2, num_layers);
    } else if (label == "#5" || label == "#e") {
        v.division_layers = layer_range(2, num_layers);
    } else if (label == "#b") {
        v.division_layers = layer_range(1, num_layers);
    } else if (label == "#c") {
        v.division_layers = layer_range(num_layers / 2, num_layers);
    } else if (label == "#d") {
        v.division_layers = layer_range(2, num_layers);
        v.pooling = Pooling::avg;
    } else {
        throw ConfigError("ablate: unknown variant label \"" + label + "\"");
    }
    return v;
}

struct AblateRow {
    AblateVariant variant;
    Metrics metrics;
};

inline std::vector<AblateRow> run_ablation(const RunConfig& cfg) {
    const auto held_out = cfg.eval_scenarios();
    std::map<std::string, Metrics> cache;  // by configuration signature
    std::vector<AblateRow> rows;
    for (const std::string& label : cfg.ablate_variants) {
        const AblateVariant v = make_variant(label, cfg.model.num_layers);
        std::ostringstream sig;
        sig << policy_name(v.policy) << "|" << (v.pooling == Pooling::max ? "max" : "avg") << "|";
        for (int l : v.division_layers) sig << l << ",";
        Metrics m;
        const auto hit = cache.find(sig.str());
        if (hit != cache.end()) {
            m = hit->second;
        } else {
            ModelConfig mc = cfg.model;
            mc.division_layers = v.division_layers;
            mc.pooling = v.pooling;
            GrmModel model = build_model(mc, cfg.train.seed);
            TrainConfig tc = cfg.train;
            tc.policy = v.policy;
            train(model, tc);
            m = evaluate(model, held_out, v.policy);
            cache.emplace(sig.str(), m);
        }
        rows.push_back({v, m});
    }
    return rows;
}

inline std::string ablate_csv(const std::vector<AblateRow>& rows) {
    std::ostringstream os;
    os << "variant,policy,division_layers,pooling,mean_iou,sr50,sr75,mean_ea_fraction\n";
    for (const auto& row : rows) {
        os << row.variant.label << "," << policy_name(row.variant.policy) << ",";
        for (std::size_t i = 0; i < row.variant.division_layers.size(); ++i) {
            if (i) os << " ";
            os << row.variant.division_layers[i];
        }
        os << "," << (row.variant.pooling == Pooling::max ? "max" : "avg") << ","
           << row.metrics.mean_iou << "," << row.metrics.sr50 << "," << row.metrics.sr75 << ",";
        double ea = 0.0;
        for (double f : row.metrics.ea_fraction_per_layer) ea += f;
        if (!row.metrics.ea_fraction_per_layer.empty())
            ea /= static_cast<double>(row.metrics.ea_fraction_per_layer.size());
        os << ea << "\n";
    }
    return os.str();
}

}  // namespace grm
