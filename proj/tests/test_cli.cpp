#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
    const char* env = std::getenv("GRM_CLI_BIN");
    REQUIRE_MESSAGE(env != nullptr, "GRM_CLI_BIN must point at the grm binary");
    return env;
}

int run(const std::string& args, const std::string& stdout_file = "/dev/null") {
    const std::string cmd = cli_bin() + " " + args + " > " + stdout_file + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

const char* kTinyConfig = R"({
  "model": {"embed_dim": 16, "template_size": 16, "search_size": 32,
             "num_heads": 2, "num_layers": 2, "division_layers": [2]},
  "train": {"epochs": 3, "pairs_per_epoch": 8, "scenario_count": 2, "seed": 0},
  "scenario": {"frames": 8, "canvas": 64, "target_size": 12.0},
  "eval": {"scenario_count": 2, "seed_base": 500}
})";

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::path("/tmp") / ("grm_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name, const std::string& contents) {
        const fs::path p = path / name;
        std::ofstream os(p);
        os << contents;
        return p.string();
    }
    std::string sub(const std::string& name) { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text) n += c == '\n' ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("train writes a checkpoint and a loss CSV with one row per epoch") {
    TempDir tmp;
    const std::string cfg = tmp.file("cfg.json", kTinyConfig);
    const std::string out = tmp.sub("run");
    CHECK(run("train " + cfg + " --out " + out) == 0);
    CHECK(fs::exists(out + "/checkpoint.grmc"));
    const std::string csv = slurp(out + "/loss.csv");
    CHECK(count_lines(csv) == 4);  // header + 3 epochs
    CHECK(csv.rfind("epoch,mean_loss", 0) == 0);

    // eval on the held-out suite prints the metrics JSON schema
    const std::string metrics_file = tmp.sub("metrics.json");
    CHECK(run("eval " + out + "/checkpoint.grmc " + cfg, metrics_file) == 0);
    const nlohmann::json m = nlohmann::json::parse(slurp(metrics_file));
    CHECK(m.contains("mean_iou"));
    CHECK(m.contains("sr50"));
    CHECK(m.contains("sr75"));
    CHECK(m["ea_fraction_per_layer"].size() == 2);

    // dump-divisions: layer 2 owns the only predictor
    const std::string divdir = tmp.sub("div");
    CHECK(run("dump-divisions " + out + "/checkpoint.grmc " + cfg + " --frame 2 --out " + divdir) == 0);
    CHECK(fs::exists(divdir + "/layer2.json"));
    CHECK(fs::exists(divdir + "/layer2.pgm"));
    CHECK_FALSE(fs::exists(divdir + "/layer1.json"));
    const nlohmann::json dj = nlohmann::json::parse(slurp(divdir + "/layer2.json"));
    CHECK(dj["layer"] == 2);
    CHECK(dj["D"].size() == 16);
    CHECK(dj["pi"].size() == 16);
    std::ifstream pgm(divdir + "/layer2.pgm");
    std::string magic;
    int w, h;
    pgm >> magic >> w >> h;
    CHECK(magic == "P2");
    CHECK(w == 4);  // search grid side = 32 / 8
    CHECK(h == 4);

    // digest guard: a different model shape must be refused with exit 4
    std::string changed = kTinyConfig;
    const auto pos = changed.find("\"num_layers\": 2");
    changed.replace(pos, 15, "\"num_layers\": 3");
    changed.replace(changed.find("\"division_layers\": [2]"), 22, "\"division_layers\": [3]");
    const std::string cfg2 = tmp.file("cfg3.json", changed);
    CHECK(run("eval " + out + "/checkpoint.grmc " + cfg2) == 4);
}

TEST_CASE("forced one-stream dumps are all-255, two-stream all-0") {
    TempDir tmp;
    const std::string cfg = tmp.file("cfg.json", kTinyConfig);
    const std::string out = tmp.sub("run");
    REQUIRE(run("train " + cfg + " --out " + out) == 0);

    auto pgm_values = [&](const std::string& path) {
        std::ifstream is(path);
        std::string magic;
        int w, h, maxv;
        is >> magic >> w >> h >> maxv;
        std::vector<int> vals;
        int v;
        while (is >> v) vals.push_back(v);
        return vals;
    };

    std::string one = kTinyConfig;
    one.insert(one.rfind('}'), R"(, "division_policy": "one_stream")");
    const std::string cfg_one = tmp.file("one.json", one);
    const std::string d1 = tmp.sub("d1");
    REQUIRE(run("dump-divisions " + out + "/checkpoint.grmc " + cfg_one + " --out " + d1) == 0);
    for (int v : pgm_values(d1 + "/layer2.pgm")) CHECK(v == 255);

    std::string two = kTinyConfig;
    two.insert(two.rfind('}'), R"(, "division_policy": "two_stream")");
    const std::string cfg_two = tmp.file("two.json", two);
    const std::string d2 = tmp.sub("d2");
    REQUIRE(run("dump-divisions " + out + "/checkpoint.grmc " + cfg_two + " --out " + d2) == 0);
    // layer 1 is forced all-S under the two-stream policy
    for (int v : pgm_values(d2 + "/layer1.pgm")) CHECK(v == 0);
}

TEST_CASE("missing and malformed configs exit with code 2") {
    TempDir tmp;
    CHECK(run("train /nonexistent/cfg.json") == 2);
    const std::string bad = tmp.file("bad.json", R"({"train": {"epochz": 3}})");
    CHECK(run("train " + bad) == 2);
    const std::string garbled = tmp.file("garbled.json", "{not json");
    CHECK(run("train " + garbled) == 2);
    CHECK(run("eval") == 2);  // missing required arguments
}

TEST_CASE("policy override produces a distinct checkpoint for the same seed") {
    TempDir tmp;
    const std::string cfg = tmp.file("cfg.json", kTinyConfig);
    const std::string a = tmp.sub("a"), b = tmp.sub("b");
    CHECK(run("train " + cfg + " --out " + a) == 0);
    CHECK(run("train " + cfg + " --policy one_stream --out " + b) == 0);
    CHECK(slurp(a + "/checkpoint.grmc") != slurp(b + "/checkpoint.grmc"));
}

TEST_CASE("GRM_SEED overrides the config seed") {
    TempDir tmp;
    const std::string cfg = tmp.file("cfg.json", kTinyConfig);
    const std::string a = tmp.sub("a"), b = tmp.sub("b"), c = tmp.sub("c");
    CHECK(run("train " + cfg + " --out " + a) == 0);
    const std::string env_cmd = "GRM_SEED=7 " + cli_bin() + " train " + cfg + " --out " + b +
                                " > /dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(env_cmd.c_str())) == 0);
    CHECK(slurp(a + "/checkpoint.grmc") != slurp(b + "/checkpoint.grmc"));
    // --seed beats the environment
    const std::string env_cmd2 = "GRM_SEED=7 " + cli_bin() + " train " + cfg + " --seed 0 --out " +
                                 c + " > /dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(env_cmd2.c_str())) == 0);
    CHECK(slurp(a + "/checkpoint.grmc") == slurp(c + "/checkpoint.grmc"));
}

TEST_CASE("reruns with the same config and seed are byte-identical") {
    TempDir tmp;
    const std::string cfg = tmp.file("cfg.json", kTinyConfig);
    const std::string a = tmp.sub("a"), b = tmp.sub("b");
    const std::string ma = tmp.sub("ma.json"), mb = tmp.sub("mb.json");
    CHECK(run("train " + cfg + " --out " + a) == 0);
    CHECK(run("train " + cfg + " --out " + b) == 0);
    CHECK(slurp(a + "/checkpoint.grmc") == slurp(b + "/checkpoint.grmc"));
    CHECK(slurp(a + "/loss.csv") == slurp(b + "/loss.csv"));
    CHECK(run("eval " + a + "/checkpoint.grmc " + cfg, ma) == 0);
    CHECK(run("eval " + b + "/checkpoint.grmc " + cfg, mb) == 0);
    CHECK(slurp(ma) == slurp(mb));
}

TEST_CASE("divergent training aborts with exit 3") {
    TempDir tmp;
    std::string cfg_text = kTinyConfig;
    cfg_text.replace(cfg_text.find("\"seed\": 0"), 9, "\"seed\": 0, \"lr\": 1e300");
    const std::string cfg = tmp.file("cfg.json", cfg_text);
    CHECK(run("train " + cfg + " --out " + tmp.sub("x")) == 3);
}

TEST_CASE("bench-mask emits a two-row CSV at iters=1") {
    TempDir tmp;
    const std::string out = tmp.sub("bench.csv");
    CHECK(run("bench-mask --iters 1 --n_z 4 --n_x 8 --heads 2 --c 16 --out " + out) == 0);
    const std::string csv = slurp(out);
    CHECK(count_lines(csv) == 3);  // header + masked + separate
    CHECK(csv.find("masked,1,") != std::string::npos);
    CHECK(csv.find("separate,1,") != std::string::npos);
    // all_A divisions are accepted and still produce the table
    CHECK(run("bench-mask --iters 1 --n_z 4 --n_x 8 --heads 2 --c 16 --division all_A") == 0);
    CHECK(run("bench-mask --iters 1 --division sideways") == 2);
}

TEST_CASE("grad-check passes clean and fails the fault fixture with exit 5") {
    TempDir tmp;
    const std::string report = tmp.sub("report.txt");
    CHECK(run("grad-check --seed 0", report) == 0);
    const std::string text = slurp(report);
    CHECK(text.find("embed.proj_w") != std::string::npos);
    CHECK(text.find("layer2.div.w3") != std::string::npos);
    CHECK(text.find("passed") != std::string::npos);

    // every parameter group appears exactly once
    const std::string needle = "layer1.attn.h0.wq";
    std::size_t first = text.find(needle);
    CHECK(first != std::string::npos);
    CHECK(text.find(needle, first + 1) == std::string::npos);

    CHECK(run("grad-check --inject-fault") == 5);
    CHECK(run("grad-check --scale huge") == 2);
}

TEST_CASE("config reference prints every key group") {
    TempDir tmp;
    const std::string ref_file = tmp.sub("ref.md");
    CHECK(run("--config-reference", ref_file) == 0);
    const std::string ref = slurp(ref_file);
    for (const char* key : {"model.patch", "train.epochs", "scenario.noise", "eval.seed_base"})
        CHECK(ref.find(key) != std::string::npos);
}

TEST_CASE("ablate default grid emits all seven labeled rows") {
    TempDir tmp;
    std::string cfg_text = kTinyConfig;
    // shrink training so seven variants stay fast
    cfg_text.replace(cfg_text.find("\"epochs\": 3"), 11, "\"epochs\": 1");
    cfg_text.replace(cfg_text.find("\"pairs_per_epoch\": 8"), 20, "\"pairs_per_epoch\": 4");
    const std::string cfg = tmp.file("cfg.json", cfg_text);
    const std::string out = tmp.sub("abl");
    CHECK(run("ablate " + cfg + " --out " + out) == 0);
    const std::string csv = slurp(out + "/ablate.csv");
    CHECK(count_lines(csv) == 8);  // header + 7 variants
    for (const char* label : {"#1,", "#2,", "#5,", "#b,", "#c,", "#d,", "#e,"})
        CHECK(csv.find(label) != std::string::npos);
    // #5 and #e share a configuration at this depth: identical rows after the label
    auto row_tail = [&](const std::string& label) {
        const auto pos = csv.find(label);
        REQUIRE(pos != std::string::npos);
        const auto end = csv.find('\n', pos);
        return csv.substr(pos + label.size(), end - pos - label.size());
    };
    CHECK(row_tail("#5,") == row_tail("#e,"));
}

TEST_CASE("ablate with a single variant emits a single-row CSV") {
    TempDir tmp;
    std::string cfg_text = kTinyConfig;
    cfg_text.insert(cfg_text.rfind('}'), R"(, "ablate": {"variants": ["#2"]})");
    const std::string cfg = tmp.file("cfg.json", cfg_text);
    const std::string out = tmp.sub("abl");
    CHECK(run("ablate " + cfg + " --out " + out) == 0);
    const std::string csv = slurp(out + "/ablate.csv");
    CHECK(count_lines(csv) == 2);  // header + one row
    CHECK(csv.find("#2,one_stream") != std::string::npos);
}
