#include "mixrec/bench.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace mixrec {

namespace {

double percentile(std::vector<double> sorted, double p) {
    if (sorted.empty()) return 0;
    const double idx = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(idx);
    const auto hi = std::min(sorted.size() - 1, lo + 1);
    const double frac = idx - static_cast<double>(lo);
    return sorted[lo] * (1 - frac) + sorted[hi] * frac;
}

}  // namespace

std::vector<BenchPoint> run_forward_bench(char axis, const std::vector<std::size_t>& values,
                                          const ModelConfig& base, std::size_t reps,
                                          std::uint64_t seed) {
    if (axis != 's' && axis != 'C' && axis != 'K') {
        throw ConfigError("bench: axis must be one of s, C, K");
    }
    if (reps < 3) throw ConfigError("bench: need at least 3 reps");

    std::vector<BenchPoint> points;
    for (std::size_t v : values) {
        ModelConfig cfg = base;
        if (axis == 's') cfg.max_len = v;
        if (axis == 'C') cfg.channels = v;
        if (axis == 'K') cfg.feature_count = v;
        cfg.variant = Variant::full;
        cfg.validate();

        // K-1 explicit token features with a small shared vocabulary
        FeatureSchema schema = FeatureSchema::id_only();
        std::vector<FeatureColumn> columns;
        const std::int64_t item_vocab = 50, feat_vocab = 20;
        for (std::size_t f = 1; f < cfg.feature_count; ++f) {
            schema.features.push_back({"f" + std::to_string(f), FeatureKind::token});
            FeatureColumn col;
            col.kind = FeatureKind::token;
            col.token.resize(static_cast<std::size_t>(item_vocab) + 1, 0);
            for (std::int64_t i = 1; i <= item_vocab; ++i)
                col.token[static_cast<std::size_t>(i)] = (i + static_cast<std::int64_t>(f)) % feat_vocab + 1;
            columns.push_back(std::move(col));
        }
        VocabSizes vocab;
        vocab.items = item_vocab;
        vocab.features.assign(cfg.feature_count - 1, feat_vocab);

        std::mt19937_64 rng(seed);
        Model model = Model::init(cfg, schema, vocab, rng);
        std::vector<std::int64_t> items(cfg.max_len);
        std::uniform_int_distribution<std::int64_t> pick(1, item_vocab);
        for (auto& it : items) it = pick(rng);

        auto run_once = [&] {
            GradTape tape;
            tape.set_recording(false);
            std::mt19937_64 drop_rng(0);
            auto h = model.forward(tape, items, columns, false, drop_rng);
            return h->data[0];  // keep the result alive
        };
        volatile Real sink = 0;
        for (int w = 0; w < 3; ++w) sink = sink + run_once();

        std::vector<double> times;
        times.reserve(reps);
        for (std::size_t r = 0; r < reps; ++r) {
            const auto start = std::chrono::steady_clock::now();
            sink = sink + run_once();
            const auto end = std::chrono::steady_clock::now();
            times.push_back(
                std::chrono::duration<double, std::nano>(end - start).count());
        }
        std::sort(times.begin(), times.end());
        BenchPoint p;
        p.value = v;
        p.median_ns = percentile(times, 0.5);
        p.p10_ns = percentile(times, 0.10);
        p.p90_ns = percentile(times, 0.90);
        points.push_back(p);
    }
    return points;
}

std::string bench_csv(char axis, const std::vector<BenchPoint>& points) {
    std::ostringstream os;
    os << "axis,value,median_ns,p10,p90\n";
    for (const auto& p : points) {
        os << axis << "," << p.value << "," << static_cast<long long>(p.median_ns) << ","
           << static_cast<long long>(p.p10_ns) << "," << static_cast<long long>(p.p90_ns) << "\n";
    }
    return os.str();
}

}  // namespace mixrec
