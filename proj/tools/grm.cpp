// Command-line surface: train, eval, bench-mask, dump-divisions, grad-check,
// ablate. Exit codes: 0 ok, 1 unexpected error, 2 bad config/usage, 3 training
// aborted on a non-finite loss, 4 checkpoint version/digest mismatch,
// 5 gradient check failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "grm/ablate.hpp"
#include "grm/bench.hpp"
#include "grm/checkpoint.hpp"
#include "grm/config.hpp"
#include "grm/io.hpp"
#include "grm/selfcheck.hpp"
#include "grm/tracker.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNanAbort = 3;
constexpr int kExitCheckpoint = 4;
constexpr int kExitGradCheck = 5;

std::uint64_t resolve_seed(const grm::RunConfig& cfg, const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("GRM_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw grm::ConfigError("GRM_SEED is not an integer");
        }
    }
    return cfg.train.seed;
}

struct TrainArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> policy;
    std::string out_dir = "out";
};

int cmd_train(const TrainArgs& args) {
    grm::RunConfig cfg = grm::load_run_config(args.config_path);
    cfg.train.seed = resolve_seed(cfg, args.seed);
    if (args.policy) {
        cfg.policy = grm::parse_policy(*args.policy);
        cfg.train.policy = cfg.policy;
    }

    std::filesystem::create_directories(args.out_dir);
    grm::GrmModel model = grm::build_model(cfg.model, cfg.train.seed);
    const grm::TrainResult result = grm::train(model, cfg.train);

    const std::string ckpt_path = args.out_dir + "/checkpoint.grmc";
    auto params = grm::named_params(model);
    grm::save_checkpoint(ckpt_path, params, cfg.model.digest());
    grm::write_loss_csv(args.out_dir + "/loss.csv", result.epoch_loss);

    std::printf("trained %d epochs (policy %s, seed %llu)\n", cfg.train.epochs,
                grm::policy_name(cfg.policy), static_cast<unsigned long long>(cfg.train.seed));
    if (!result.epoch_loss.empty())
        std::printf("epoch-mean loss: first %.6f last %.6f\n", result.epoch_loss.front(),
                    result.epoch_loss.back());
    std::printf("checkpoint: %s\nloss log: %s/loss.csv\n", ckpt_path.c_str(), args.out_dir.c_str());
    return kExitOk;
}

struct EvalArgs {
    std::string ckpt_path;
    std::string config_path;
};

int cmd_eval(const EvalArgs& args) {
    grm::RunConfig cfg = grm::load_run_config(args.config_path);
    grm::GrmModel model = grm::build_model(cfg.model, cfg.train.seed);
    auto params = grm::named_params(model);
    grm::load_checkpoint(args.ckpt_path, params, cfg.model.digest());
    const grm::Metrics m = grm::evaluate(model, cfg.eval_scenarios(), cfg.policy);
    std::cout << grm::metrics_json(m).dump() << "\n";
    return kExitOk;
}

struct BenchArgs {
    int n_z = 64, n_x = 256, heads = 12, c = 768, iters = 5;
    std::string division = "random";
    std::uint64_t seed = 0;
    std::optional<std::string> out;
};

int cmd_bench(const BenchArgs& args) {
    grm::BenchConfig cfg;
    cfg.n_z = args.n_z;
    cfg.n_x = args.n_x;
    cfg.heads = args.heads;
    cfg.embed_dim = args.c;
    cfg.iters = args.iters;
    cfg.seed = args.seed;
    if (args.division == "random")
        cfg.division = grm::BenchDivision::random;
    else if (args.division == "all_A")
        cfg.division = grm::BenchDivision::all_a;
    else if (args.division == "all_S")
        cfg.division = grm::BenchDivision::all_s;
    else
        throw grm::ConfigError("--division: expected random|all_A|all_S");
    const grm::BenchResult r = grm::run_mask_benchmark(cfg);
    const std::string csv = grm::bench_csv(r);
    std::cout << csv;
    if (args.out) {
        std::ofstream os(*args.out);
        if (!os) throw std::runtime_error("cannot open " + *args.out);
        os << csv;
    }
    return kExitOk;
}

struct DumpArgs {
    std::string ckpt_path;
    std::string config_path;
    int frame = 1;
    int scenario = 0;
    std::string out_dir = "divisions";
};

int cmd_dump_divisions(const DumpArgs& args) {
    grm::RunConfig cfg = grm::load_run_config(args.config_path);
    grm::GrmModel model = grm::build_model(cfg.model, cfg.train.seed);
    auto params = grm::named_params(model);
    grm::load_checkpoint(args.ckpt_path, params, cfg.model.digest());

    if (args.scenario < 0 || args.scenario >= cfg.eval.scenario_count)
        throw grm::ConfigError("--scenario index outside the eval suite");
    grm::SyntheticScenario spec = cfg.eval.scenario;
    spec.seed = cfg.eval.seed_base + static_cast<std::uint64_t>(args.scenario);
    const auto frames = grm::generate_scenario(spec);
    if (args.frame < 1 || args.frame >= static_cast<int>(frames.size()))
        throw grm::ConfigError("--frame must lie in [1, frames-1]");

    grm::TrackState st = grm::init_track(model, frames[0], frames[0].gt);
    grm::StepResult res;
    for (int f = 1; f <= args.frame; ++f)
        res = grm::track_step(model, st, frames[static_cast<std::size_t>(f)], cfg.policy);

    std::filesystem::create_directories(args.out_dir);
    const int grid = model.cfg.patch.grid_x();
    int written = 0;
    for (int l = 0; l < model.cfg.num_layers; ++l) {
        const auto& div = res.divisions[static_cast<std::size_t>(l)];
        if (!div) continue;
        const std::string base = args.out_dir + "/layer" + std::to_string(l + 1);
        std::ofstream js(base + ".json");
        js << grm::division_json(l + 1, *div).dump(2) << "\n";
        grm::write_division_pgm(base + ".pgm", *div, grid, grid);
        ++written;
    }
    std::printf("wrote %d division layer dumps to %s (frame %d)\n", written, args.out_dir.c_str(),
                args.frame);
    return kExitOk;
}

struct GradCheckArgs {
    std::uint64_t seed = 0;
    std::string scale = "tiny";
    bool inject_fault = false;
};

int cmd_grad_check(const GradCheckArgs& args) {
    if (args.scale != "tiny") throw grm::ConfigError("--scale: only \"tiny\" is supported");
    const grm::GradCheckReport report = grm::run_model_grad_check(args.seed, args.inject_fault);
    std::printf("%-24s %s\n", "parameter group", "max rel err");
    for (const auto& [name, err] : report.per_param) std::printf("%-24s %.3e\n", name.c_str(), err);
    std::printf("worst: %s (%.3e)\n", report.worst_param.c_str(), report.max_rel_err);
    if (!report.pass(1e-4)) {
        std::fprintf(stderr, "gradient check FAILED at %s (%.3e >= 1e-4)\n",
                     report.worst_param.c_str(), report.max_rel_err);
        return kExitGradCheck;
    }
    std::printf("gradient check passed (< 1e-4)\n");
    return kExitOk;
}

struct AblateArgs {
    std::string config_path;
    std::string out_dir = "ablation";
};

int cmd_ablate(const AblateArgs& args) {
    const grm::RunConfig cfg = grm::load_run_config(args.config_path);
    const auto rows = grm::run_ablation(cfg);
    const std::string csv = grm::ablate_csv(rows);
    std::filesystem::create_directories(args.out_dir);
    std::ofstream os(args.out_dir + "/ablate.csv");
    if (!os) throw std::runtime_error("cannot open output CSV");
    os << csv;
    std::cout << csv;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generalized relation modeling tracker"};
    app.require_subcommand(0, 1);

    bool config_ref = false;
    app.add_flag("--config-reference", config_ref, "print the config key reference and exit");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + loss CSV");
    train_cmd->add_option("config", train_args.config_path, "run config JSON")->required();
    train_cmd->add_option("--seed", train_args.seed, "override train.seed");
    train_cmd->add_option("--policy", train_args.policy, "override division_policy");
    train_cmd->add_option("--out", train_args.out_dir, "output directory (default out)");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint; metrics JSON on stdout");
    eval_cmd->add_option("checkpoint", eval_args.ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("config", eval_args.config_path, "run config JSON")->required();

    BenchArgs bench_args;
    auto* bench_cmd = app.add_subcommand("bench-mask", "time masked vs separate attention");
    bench_cmd->add_option("--n_z", bench_args.n_z, "template tokens");
    bench_cmd->add_option("--n_x", bench_args.n_x, "search tokens");
    bench_cmd->add_option("--heads", bench_args.heads, "attention heads");
    bench_cmd->add_option("--c", bench_args.c, "embedding width");
    bench_cmd->add_option("--iters", bench_args.iters, "timed iterations");
    bench_cmd->add_option("--division", bench_args.division, "random|all_A|all_S");
    bench_cmd->add_option("--seed", bench_args.seed, "rng seed");
    bench_cmd->add_option("--out", bench_args.out, "also write the CSV here");

    DumpArgs dump_args;
    auto* dump_cmd = app.add_subcommand("dump-divisions", "write per-layer division JSON + PGM");
    dump_cmd->add_option("checkpoint", dump_args.ckpt_path, "checkpoint file")->required();
    dump_cmd->add_option("config", dump_args.config_path, "run config JSON")->required();
    dump_cmd->add_option("--frame", dump_args.frame, "frame index to dump (default 1)");
    dump_cmd->add_option("--scenario", dump_args.scenario, "eval scenario index (default 0)");
    dump_cmd->add_option("--out", dump_args.out_dir, "output directory (default divisions)");

    GradCheckArgs grad_args;
    auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference check of the tiny model");
    grad_cmd->add_option("--seed", grad_args.seed, "rng seed");
    grad_cmd->add_option("--scale", grad_args.scale, "model scale (tiny)");
    grad_cmd->add_flag("--inject-fault", grad_args.inject_fault,
                       "test fixture: corrupt one backward rule");

    AblateArgs ablate_args;
    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate the variant grid");
    ablate_cmd->add_option("config", ablate_args.config_path, "run config JSON")->required();
    ablate_cmd->add_option("--out", ablate_args.out_dir, "output directory (default ablation)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (config_ref) {
            std::cout << grm::config_reference();
            return kExitOk;
        }
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (bench_cmd->parsed()) return cmd_bench(bench_args);
        if (dump_cmd->parsed()) return cmd_dump_divisions(dump_args);
        if (grad_cmd->parsed()) return cmd_grad_check(grad_args);
        if (ablate_cmd->parsed()) return cmd_ablate(ablate_args);
        std::cout << app.help();
        return kExitOk;
    } catch (const grm::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const grm::TrainAbortError& e) {
        std::fprintf(stderr, "training aborted: %s\n", e.what());
        return kExitNanAbort;
    } catch (const grm::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitError;
    }
}
