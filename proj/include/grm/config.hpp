#pragma once
// Run configuration: a JSON file with full-key validation (unknown keys are
// rejected with their path) and documented defaults. The same structure
// drives training, evaluation, division dumps and the ablation grid.

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grm/model.hpp"
#include "grm/tracker.hpp"

namespace grm {

struct EvalConfig {
    int scenario_count = 10;
    std::uint64_t seed_base = 900;
    SyntheticScenario scenario;  // defaults to the training scenario
    bool scenario_overridden = false;
};

struct RunConfig {
    ModelConfig model;
    RelationPolicy policy = RelationPolicy::adaptive;
    TrainConfig train;
    EvalConfig eval;
    std::vector<std::string> ablate_variants = {"#1", "#2", "#5", "#b", "#c", "#d", "#e"};

    void validate() const {
        model.validate();
        train.validate();
        if (eval.scenario_count < 1) throw ConfigError("eval.scenario_count: must be positive");
        eval.scenario.validate();
    }

    std::vector<std::vector<Frame>> eval_scenarios() const {
        std::vector<std::vector<Frame>> out;
        for (int s = 0; s < eval.scenario_count; ++s) {
            SyntheticScenario spec = eval.scenario;
            spec.seed = eval.seed_base + static_cast<std::uint64_t>(s);
            out.push_back(generate_scenario(spec));
        }
        return out;
    }
};

namespace detail {

struct KeyDoc {
    const char* key;
    const char* type;
    const char* def;
    const char* doc;
};

inline const std::vector<KeyDoc>& config_keys() {
    static const std::vector<KeyDoc> keys = {
        {"model.patch", "int", "8", "patch side in pixels; must divide both crop sizes"},
        {"model.embed_dim", "int", "64", "token embedding width C"},
        {"model.template_size", "int", "32", "template crop resolution H_z = W_z"},
        {"model.search_size", "int", "64", "search crop resolution H_x = W_x"},
        {"model.num_heads", "int", "4", "attention heads; must divide embed_dim"},
        {"model.num_layers", "int", "4", "encoder depth L"},
        {"model.division_layers", "int[]", "[2..L]", "1-based layers owning a division predictor"},
        {"model.pooling", "\"max\"|\"avg\"", "\"max\"", "template aggregation for the division predictor"},
        {"model.tau", "float", "1.0", "Gumbel-Softmax temperature"},
        {"division_policy", "\"adaptive\"|\"two_stream\"|\"one_stream\"", "\"adaptive\"",
         "relation modeling policy for train/eval/dump runs"},
        {"loss.lambda_center", "float", "1.0", "weight of the center focal term"},
        {"loss.lambda_giou", "float", "2.0", "weight of the GIoU term"},
        {"loss.lambda_l1", "float", "5.0", "weight of the L1 term"},
        {"loss.focal_alpha", "float", "2.0", "focal exponent on the score"},
        {"loss.focal_beta", "float", "4.0", "focal penalty-reduction exponent on the target"},
        {"loss.regression_anchor", "\"gt\"|\"pred\"", "\"gt\"",
         "cell at which GIoU/L1 supervision is anchored"},
        {"train.epochs", "int", "40", "training epochs"},
        {"train.pairs_per_epoch", "int", "64", "optimizer steps per epoch (one pair each)"},
        {"train.lr", "float", "1e-3", "learning rate"},
        {"train.decay_epoch", "int", "0", "epoch at which lr decays; 0 means floor(0.8*epochs)"},
        {"train.decay_factor", "float", "0.1", "lr multiplier at the decay epoch"},
        {"train.weight_decay", "float", "1e-4", "decoupled weight decay"},
        {"train.seed", "int", "0", "master seed; overridden by --seed and GRM_SEED"},
        {"train.scenario_count", "int", "8", "training scenarios (seeds derived from train.seed)"},
        {"train.delta_max", "int", "10", "max frame gap between template and search frames"},
        {"scenario.frames", "int", "24", "frames per scenario"},
        {"scenario.canvas", "int", "96", "canvas side in pixels"},
        {"scenario.target_size", "float", "18.0", "target side in pixels"},
        {"scenario.motion_amplitude", "float", "1.5", "random-walk acceleration, px/frame"},
        {"scenario.distractor_count", "int", "1", "number of look-alike distractors"},
        {"scenario.distractor_similarity", "float", "0.5",
         "0 = unrelated distractor colors, 1 = identical to the target"},
        {"scenario.noise", "float", "0.02", "uniform pixel noise amplitude"},
        {"eval.scenario_count", "int", "10", "held-out scenarios for evaluation"},
        {"eval.seed_base", "int", "900", "seed of the first held-out scenario"},
        {"eval.scenario.*", "object", "scenario.*",
         "optional override of any scenario.* key for the held-out suite"},
        {"ablate.variants", "string[]", "[\"#1\",\"#2\",\"#5\",\"#b\",\"#c\",\"#d\",\"#e\"]",
         "subset of the ablation grid to run"},
    };
    return keys;
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& prefix) {
    if (!j.is_object()) throw ConfigError(prefix.empty() ? "config root must be an object"
                                                         : prefix + ": must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key))
            throw ConfigError("unknown config key: " + (prefix.empty() ? key : prefix + "." + key));
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T def, const std::string& prefix) {
    if (!j.contains(key)) return def;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("bad value for config key: " + prefix + key);
    }
}

inline SyntheticScenario parse_scenario(const nlohmann::json& j, SyntheticScenario base,
                                        const std::string& prefix) {
    reject_unknown(j, {"frames", "canvas", "target_size", "motion_amplitude", "distractor_count",
                       "distractor_similarity", "noise"},
                   prefix.substr(0, prefix.size() - 1));
    base.frames = get_or(j, "frames", base.frames, prefix);
    base.canvas = get_or(j, "canvas", base.canvas, prefix);
    base.target_size = get_or(j, "target_size", base.target_size, prefix);
    base.motion_amplitude = get_or(j, "motion_amplitude", base.motion_amplitude, prefix);
    base.distractor_count = get_or(j, "distractor_count", base.distractor_count, prefix);
    base.distractor_similarity = get_or(j, "distractor_similarity", base.distractor_similarity, prefix);
    base.noise = get_or(j, "noise", base.noise, prefix);
    return base;
}

}  // namespace detail

inline RelationPolicy parse_policy(const std::string& s) {
    if (s == "adaptive") return RelationPolicy::adaptive;
    if (s == "two_stream") return RelationPolicy::two_stream;
    if (s == "one_stream") return RelationPolicy::one_stream;
    throw ConfigError("division_policy: expected adaptive|two_stream|one_stream, got \"" + s + "\"");
}

inline const char* policy_name(RelationPolicy p) {
    switch (p) {
        case RelationPolicy::adaptive: return "adaptive";
        case RelationPolicy::two_stream: return "two_stream";
        case RelationPolicy::one_stream: return "one_stream";
    }
    return "?";
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    detail::reject_unknown(j, {"model", "division_policy", "loss", "train", "scenario", "eval", "ablate"},
                           "");

    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, {"patch", "embed_dim", "template_size", "search_size", "num_heads",
                                   "num_layers", "division_layers", "pooling", "tau"},
                               "model");
        cfg.model.patch.patch = detail::get_or(m, "patch", 8, "model.");
        cfg.model.patch.embed_dim = detail::get_or(m, "embed_dim", 64, "model.");
        cfg.model.patch.template_size = detail::get_or(m, "template_size", 32, "model.");
        cfg.model.patch.search_size = detail::get_or(m, "search_size", 64, "model.");
        cfg.model.num_heads = detail::get_or(m, "num_heads", 4, "model.");
        cfg.model.num_layers = detail::get_or(m, "num_layers", 4, "model.");
        cfg.model.division_layers =
            detail::get_or<std::vector<int>>(m, "division_layers", {}, "model.");
        const std::string pool = detail::get_or<std::string>(m, "pooling", "max", "model.");
        if (pool == "max")
            cfg.model.pooling = Pooling::max;
        else if (pool == "avg")
            cfg.model.pooling = Pooling::avg;
        else
            throw ConfigError("model.pooling: expected max|avg, got \"" + pool + "\"");
        cfg.model.tau = detail::get_or(m, "tau", 1.0, "model.");
    }

    if (j.contains("division_policy"))
        cfg.policy = parse_policy(j.at("division_policy").get<std::string>());

    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        detail::reject_unknown(l, {"lambda_center", "lambda_giou", "lambda_l1", "focal_alpha",
                                   "focal_beta", "regression_anchor"},
                               "loss");
        cfg.train.loss_weights.lambda_center = detail::get_or(l, "lambda_center", 1.0, "loss.");
        cfg.train.loss_weights.lambda_giou = detail::get_or(l, "lambda_giou", 2.0, "loss.");
        cfg.train.loss_weights.lambda_l1 = detail::get_or(l, "lambda_l1", 5.0, "loss.");
        cfg.train.head_loss.focal_alpha = detail::get_or(l, "focal_alpha", 2.0, "loss.");
        cfg.train.head_loss.focal_beta = detail::get_or(l, "focal_beta", 4.0, "loss.");
        const std::string anchor = detail::get_or<std::string>(l, "regression_anchor", "gt", "loss.");
        if (anchor == "gt")
            cfg.train.head_loss.anchor_at_gt = true;
        else if (anchor == "pred")
            cfg.train.head_loss.anchor_at_gt = false;
        else
            throw ConfigError("loss.regression_anchor: expected gt|pred, got \"" + anchor + "\"");
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t, {"epochs", "pairs_per_epoch", "lr", "decay_epoch", "decay_factor",
                                   "weight_decay", "seed", "scenario_count", "delta_max"},
                               "train");
        cfg.train.epochs = detail::get_or(t, "epochs", 40, "train.");
        cfg.train.pairs_per_epoch = detail::get_or(t, "pairs_per_epoch", 64, "train.");
        cfg.train.lr = detail::get_or(t, "lr", 1e-3, "train.");
        cfg.train.decay_epoch = detail::get_or(t, "decay_epoch", 0, "train.");
        cfg.train.decay_factor = detail::get_or(t, "decay_factor", 0.1, "train.");
        cfg.train.weight_decay = detail::get_or(t, "weight_decay", 1e-4, "train.");
        cfg.train.seed = detail::get_or<std::uint64_t>(t, "seed", 0, "train.");
        cfg.train.scenario_count = detail::get_or(t, "scenario_count", 8, "train.");
        cfg.train.delta_max = detail::get_or(t, "delta_max", 10, "train.");
    }

    SyntheticScenario base;
    base.frames = 24;
    base.canvas = 96;
    base.target_size = 18.0;
    base.motion_amplitude = 1.5;
    base.distractor_count = 1;
    base.distractor_similarity = 0.5;
    base.noise = 0.02;
    if (j.contains("scenario")) base = detail::parse_scenario(j.at("scenario"), base, "scenario.");
    cfg.train.scenario = base;
    cfg.eval.scenario = base;

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, {"scenario_count", "seed_base", "scenario"}, "eval");
        cfg.eval.scenario_count = detail::get_or(e, "scenario_count", 10, "eval.");
        cfg.eval.seed_base = detail::get_or<std::uint64_t>(e, "seed_base", 900, "eval.");
        if (e.contains("scenario")) {
            cfg.eval.scenario = detail::parse_scenario(e.at("scenario"), base, "eval.scenario.");
            cfg.eval.scenario_overridden = true;
        }
    }

    if (j.contains("ablate")) {
        const auto& a = j.at("ablate");
        detail::reject_unknown(a, {"variants"}, "ablate");
        cfg.ablate_variants =
            detail::get_or<std::vector<std::string>>(a, "variants", cfg.ablate_variants, "ablate.");
    }

    cfg.train.policy = cfg.policy;
    cfg.train.tau = cfg.model.tau;
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

// Markdown reference of every accepted key with its default.
inline std::string config_reference() {
    std::ostringstream os;
    os << "# Run configuration reference\n\n"
       << "JSON file; every key is optional and defaults as listed. Unknown keys are rejected.\n\n"
       << "| key | type | default | meaning |\n|---|---|---|---|\n";
    for (const auto& k : detail::config_keys())
        os << "| `" << k.key << "` | " << k.type << " | `" << k.def << "` | " << k.doc << " |\n";
    os << "\nThe environment variable `GRM_SEED` overrides `train.seed`.\n";
    return os.str();
}

}  // namespace grm
