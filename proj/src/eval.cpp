#include "mixrec/eval.hpp"

#include <cmath>
#include <numeric>
#include <thread>

#include "mixrec/dataset.hpp"

namespace mixrec {

std::string split_name(Split s) { return s == Split::validation ? "validation" : "test"; }

Split split_from_name(const std::string& name) {
    if (name == "validation" || name == "valid") return Split::validation;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "'");
}

nlohmann::json MetricsReport::to_json() const {
    return {{"mrr", mrr},
            {"ndcg", ndcg},
            {"hr", hr},
            {"users_evaluated", users_evaluated},
            {"users_skipped", users_skipped},
            {"top_k", top_k},
            {"negatives", negatives},
            {"candidate_seed", candidate_seed},
            {"split", split}};
}

std::vector<Real> score_candidates(std::span<const Real> hidden, const Tensor& item_table,
                                   std::span<const std::int64_t> candidates) {
    const std::size_t c = item_table.cols();
    if (hidden.size() != c) {
        throw ShapeError("score_candidates: hidden width " + std::to_string(hidden.size()) +
                         " does not match embedding width " + std::to_string(c));
    }
    std::vector<Real> scores(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Real* row = item_table.data.data() + static_cast<std::size_t>(candidates[i]) * c;
        Real acc = 0;
        for (std::size_t j = 0; j < c; ++j) acc += hidden[j] * row[j];
        scores[i] = acc;
    }
    return scores;
}

std::size_t rank_of_target(std::span<const Real> scores) {
    if (scores.empty()) throw ShapeError("rank_of_target: empty scores");
    const Real target = scores[0];
    std::size_t rank = 1;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] >= target) ++rank;  // pessimistic: equals count against the target
    }
    return rank;
}

double hr_at_k(std::size_t rank, std::size_t k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(std::size_t rank, std::size_t k) {
    if (rank > k) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

double mrr_at_k(std::size_t rank, std::size_t k) {
    if (rank > k) return 0.0;
    return 1.0 / static_cast<double>(rank);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t user) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (user + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct UserResult {
    bool evaluated = false;
    double hr = 0, ndcg = 0, mrr = 0;
};

}  // namespace

std::mt19937_64 candidate_rng(std::uint64_t candidate_seed, std::size_t user) {
    return std::mt19937_64(mix_seed(candidate_seed, user));
}

MetricsReport evaluate(const Model& model, const SequenceDataset& ds, const EvalProtocol& protocol,
                       std::size_t workers) {
    if (protocol.top_k < 1) throw ConfigError("evaluate: top_k must be >= 1");
    const bool include_valid = protocol.split == Split::test;
    const std::size_t n_users = ds.user_count();
    std::vector<UserResult> results(n_users);

    auto eval_range = [&](std::size_t begin, std::size_t end) {
        GradTape tape;
        tape.set_recording(false);
        std::mt19937_64 dropout_rng(0);  // dropout is identity when not training
        for (std::size_t u = begin; u < end; ++u) {
            const std::int64_t target =
                protocol.split == Split::test ? ds.test_target[u] : ds.valid_target[u];
            if (target <= 0) continue;  // skipped, counted below

            auto cand_rng = candidate_rng(protocol.candidate_seed, u);
            auto candidates =
                sample_eval_negatives(ds.history[u], target, ds.item_count, protocol.negatives,
                                      cand_rng);
            std::vector<std::int64_t> ids;
            ids.reserve(1 + candidates.negatives.size());
            ids.push_back(target);
            ids.insert(ids.end(), candidates.negatives.begin(), candidates.negatives.end());

            std::vector<Real> scores;
            if (model.config.variant == Variant::pop_rec) {
                scores.resize(ids.size());
                for (std::size_t i = 0; i < ids.size(); ++i)
                    scores[i] = model.item_freq[static_cast<std::size_t>(ids[i])];
            } else {
                const auto context = ds.context_items(u, include_valid);
                auto hidden = model.forward(tape, context, ds.columns, /*training=*/false,
                                            dropout_rng);
                // h_t at the last valid position: real items sit rightmost
                const std::size_t c = model.config.channels;
                const std::span<const Real> h(hidden->data.data() + (ds.max_len - 1) * c, c);
                scores = score_candidates(h, *model.item_table, ids);
            }
            const std::size_t rank = rank_of_target(scores);
            results[u].evaluated = true;
            results[u].hr = hr_at_k(rank, protocol.top_k);
            results[u].ndcg = ndcg_at_k(rank, protocol.top_k);
            results[u].mrr = mrr_at_k(rank, protocol.top_k);
        }
    };

    workers = std::max<std::size_t>(1, workers);
    if (workers == 1 || n_users < 2 * workers) {
        eval_range(0, n_users);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n_users + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n_users, begin + chunk);
            if (begin < end) pool.emplace_back(eval_range, begin, end);
        }
        for (auto& t : pool) t.join();
    }

    MetricsReport report;
    report.top_k = protocol.top_k;
    report.negatives = protocol.negatives;
    report.candidate_seed = protocol.candidate_seed;
    report.split = split_name(protocol.split);
    for (const auto& r : results) {
        if (!r.evaluated) {
            ++report.users_skipped;
            continue;
        }
        ++report.users_evaluated;
        report.hr += r.hr;
        report.ndcg += r.ndcg;
        report.mrr += r.mrr;
    }
    if (report.users_evaluated > 0) {
        const auto n = static_cast<double>(report.users_evaluated);
        report.hr /= n;
        report.ndcg /= n;
        report.mrr /= n;
    }
    return report;
}

double training_hr_at_1(const Model& model, const SequenceDataset& ds, std::size_t workers) {
    const std::size_t n_users = ds.user_count();
    std::vector<Real> hits(n_users, -1);

    auto eval_range = [&](std::size_t begin, std::size_t end) {
        GradTape tape;
        tape.set_recording(false);
        std::mt19937_64 rng(0);
        std::vector<std::int64_t> all_items(static_cast<std::size_t>(ds.item_count));
        std::iota(all_items.begin(), all_items.end(), std::int64_t{1});
        for (std::size_t u = begin; u < end; ++u) {
            // last supervised position: t where t and t+1 are both real
            std::size_t last_t = 0;
            bool found = false;
            for (std::size_t t = 0; t + 1 < ds.max_len; ++t) {
                if (ds.mask[u][t] && ds.mask[u][t + 1]) {
                    last_t = t;
                    found = true;
                }
            }
            if (!found) continue;
            const std::int64_t target = ds.items[u][last_t + 1];
            auto hidden = model.forward(tape, ds.items[u], ds.columns, false, rng);
            const std::size_t c = model.config.channels;
            const std::span<const Real> h(hidden->data.data() + last_t * c, c);
            auto scores = score_candidates(h, *model.item_table, all_items);
            // argmax with pessimistic ties against the target
            const Real target_score = scores[static_cast<std::size_t>(target - 1)];
            bool top = true;
            for (std::size_t i = 0; i < scores.size(); ++i) {
                if (static_cast<std::int64_t>(i + 1) == target) continue;
                if (scores[i] >= target_score) {
                    top = false;
                    break;
                }
            }
            hits[u] = top ? 1.0 : 0.0;
        }
    };

    workers = std::max<std::size_t>(1, workers);
    if (workers == 1 || n_users < 2 * workers) {
        eval_range(0, n_users);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n_users + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n_users, begin + chunk);
            if (begin < end) pool.emplace_back(eval_range, begin, end);
        }
        for (auto& t : pool) t.join();
    }

    double total = 0;
    std::size_t counted = 0;
    for (Real h : hits) {
        if (h >= 0) {
            total += h;
            ++counted;
        }
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
}

}  // namespace mixrec
