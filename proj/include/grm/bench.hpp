#pragma once
// Timing comparison between the unified masked attention and the separate
// three-call attention path. Parameter initialization and a warm-up pass are
// excluded from the timings.

#include <chrono>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "grm/relation.hpp"

namespace grm {

enum class BenchDivision { random, all_a, all_s };

struct BenchConfig {
    int n_z = 64;
    int n_x = 256;
    int heads = 12;
    int embed_dim = 768;
    int iters = 5;
    BenchDivision division = BenchDivision::random;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_z < 1 || n_x < 1 || heads < 1 || embed_dim < 1 || iters < 1)
            throw ConfigError("bench: sizes and iteration count must be positive");
        if (embed_dim % heads != 0) throw ConfigError("bench: heads must divide embed_dim");
    }
};

struct BenchSide {
    double mean_ms = 0.0;
    double stddev_ms = 0.0;
    double per_second = 0.0;
};

struct BenchResult {
    BenchSide masked;
    BenchSide separate;
    double speedup = 0.0;  // separate mean / masked mean
    int iters = 0;
};

namespace detail {

inline BenchSide summarize(const std::vector<double>& ms) {
    BenchSide s;
    for (double v : ms) s.mean_ms += v;
    s.mean_ms /= static_cast<double>(ms.size());
    double var = 0.0;
    for (double v : ms) var += (v - s.mean_ms) * (v - s.mean_ms);
    s.stddev_ms = std::sqrt(var / static_cast<double>(ms.size()));
    s.per_second = s.mean_ms > 0.0 ? 1000.0 / s.mean_ms : 0.0;
    return s;
}

}  // namespace detail

inline BenchResult run_mask_benchmark(const BenchConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, 0x62656e6368ULL));
    const int c = cfg.embed_dim, d = c / cfg.heads;

    EncoderLayerParams p;
    p.num_heads = cfg.heads;
    auto rnd = [&](Shape s) {
        Tensor t = Tensor::zeros(std::move(s));
        for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = rng.normal(0.0, 0.05);
        return t;
    };
    for (int h = 0; h < cfg.heads; ++h) {
        p.wq.push_back(rnd({c, d}));
        p.bq.push_back(rnd({d}));
        p.wk.push_back(rnd({c, d}));
        p.bk.push_back(rnd({d}));
        p.wv.push_back(rnd({c, d}));
        p.bv.push_back(rnd({d}));
        p.wo.push_back(rnd({d, c}));
    }
    p.bo = rnd({c});

    const Tensor e_z = rnd({cfg.n_z, c});
    const Tensor e_x = rnd({cfg.n_x, c});
    const Tensor tokens = concat_rows(e_z, e_x);
    Tensor division = Tensor::zeros({cfg.n_x, 2});
    for (int i = 0; i < cfg.n_x; ++i) {
        int col = 1;
        if (cfg.division == BenchDivision::all_s)
            col = 0;
        else if (cfg.division == BenchDivision::random)
            col = rng.uniform() < 0.5 ? 0 : 1;
        division.at2(i, col) = 1.0;
    }

    using Clock = std::chrono::steady_clock;
    auto time_ms = [](auto&& fn) {
        const auto t0 = Clock::now();
        fn();
        return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    };

    // warm-up passes are not recorded
    (void)masked_mha(tokens, build_mask(division, cfg.n_z), p);
    (void)separate_mha_oracle(e_z, e_x, division, p);

    std::vector<double> masked_ms, separate_ms;
    for (int i = 0; i < cfg.iters; ++i) {
        masked_ms.push_back(time_ms([&] { (void)masked_mha(tokens, build_mask(division, cfg.n_z), p); }));
        separate_ms.push_back(time_ms([&] { (void)separate_mha_oracle(e_z, e_x, division, p); }));
    }

    BenchResult r;
    r.masked = detail::summarize(masked_ms);
    r.separate = detail::summarize(separate_ms);
    r.speedup = r.masked.mean_ms > 0.0 ? r.separate.mean_ms / r.masked.mean_ms : 0.0;
    r.iters = cfg.iters;
    return r;
}

inline std::string bench_csv(const BenchResult& r) {
    std::ostringstream os;
    os << "variant,iters,mean_ms,stddev_ms,passes_per_s,speedup_vs_separate\n";
    os << "masked," << r.iters << "," << r.masked.mean_ms << "," << r.masked.stddev_ms << ","
       << r.masked.per_second << "," << r.speedup << "\n";
    os << "separate," << r.iters << "," << r.separate.mean_ms << "," << r.separate.stddev_ms << ","
       << r.separate.per_second << ",1\n";
    return os.str();
}

}  // namespace grm
