#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixrec/model.hpp"

namespace mixrec {

enum class Split { validation, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct EvalProtocol {
    std::size_t top_k = 10;
    std::size_t negatives = 100;
    std::uint64_t candidate_seed = 1;
    Split split = Split::test;
};

struct MetricsReport {
    double hr = 0, ndcg = 0, mrr = 0;  // means over evaluated users
    std::size_t users_evaluated = 0;
    std::size_t users_skipped = 0;
    std::size_t top_k = 10;
    std::size_t negatives = 100;
    std::uint64_t candidate_seed = 1;
    std::string split;

    nlohmann::json to_json() const;
};

/// Per-user candidate sampler seed stream; independent of worker sharding.
std::mt19937_64 candidate_rng(std::uint64_t candidate_seed, std::size_t user);

/// Dot-product scores of Eq. (5): r_m = h . E_m for each candidate row.
std::vector<Real> score_candidates(std::span<const Real> hidden, const Tensor& item_table,
                                   std::span<const std::int64_t> candidates);

/// Pessimistic 1-based rank of scores[0] (the target): ties place the
/// target after every equal-scoring candidate.
std::size_t rank_of_target(std::span<const Real> scores);

double hr_at_k(std::size_t rank, std::size_t k);
double ndcg_at_k(std::size_t rank, std::size_t k);  // single-relevant-item form
double mrr_at_k(std::size_t rank, std::size_t k);   // cutoff reciprocal rank

/// Ranks the ground truth against `negatives` sampled candidates per user
/// and averages HR/NDCG/MRR. Weights are read-only; users shard across
/// workers with a deterministic reduction.
MetricsReport evaluate(const Model& model, const SequenceDataset& ds, const EvalProtocol& protocol,
                       std::size_t workers = 1);

/// HR@1 over the training split's final supervised position per user,
/// scored against the full catalog (synthetic-learnability probe).
double training_hr_at_1(const Model& model, const SequenceDataset& ds, std::size_t workers = 1);

}  // namespace mixrec
