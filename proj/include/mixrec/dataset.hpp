#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mixrec/container.hpp"
#include "mixrec/errors.hpp"

namespace mixrec {

struct InteractionRecord {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;
};

enum class FeatureKind { id, token, token_sequence, float_value };

std::string feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string& name);

struct FeatureSpec {
    std::string name;
    FeatureKind kind;
};

/// Feature 0 is always the item id; names must be unique.
struct FeatureSchema {
    std::vector<FeatureSpec> features;

    static FeatureSchema id_only();
    /// "name:kind,name:kind" with kind in {token, token_sequence, float};
    /// the id feature is implicit and prepended
    static FeatureSchema parse(const std::string& text);

    std::size_t feature_count() const { return features.size(); }  // K
    void validate() const;
};

/// Bijection external value <-> internal index >= 1; 0 is padding/unknown.
class Vocabulary {
public:
    std::int64_t encode(const std::string& value) const;  // 0 if unseen
    std::int64_t encode_or_add(const std::string& value);
    const std::string& decode(std::int64_t index) const;
    std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }  // excludes 0

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

private:
    std::map<std::string, std::int64_t> index_;
    std::vector<std::string> values_;
};

/// Per-item encoded values for one explicit feature, indexed by internal
/// item index (entry 0 is the padding item).
struct FeatureColumn {
    FeatureKind kind;
    std::vector<std::int64_t> token;                // kind == token
    std::vector<std::vector<std::int64_t>> tokens;  // kind == token_sequence
    std::vector<double> value;                      // kind == float (z-scored)
    Vocabulary vocab;                               // token / token_sequence
    double train_mean = 0, train_std = 1;           // float standardization
};

struct DatasetStats {
    std::size_t raw_interactions = 0;
    std::size_t raw_users = 0;
    std::size_t raw_items = 0;
    std::size_t filtered_interactions = 0;
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t dropped_short_users = 0;
    double mean_raw_length = 0;
};

/// Padded, chronologically ordered per-user training sequences with encoded
/// item features and leave-one-out split targets. Real items sit rightmost
/// (left padding with index 0); immutable once built.
struct SequenceDataset {
    std::size_t max_len = 0;  // s
    std::int64_t item_count = 0;  // internal item indices run 1..item_count

    std::vector<std::vector<std::int64_t>> items;  // per user, length s, 0 = pad
    std::vector<std::vector<std::uint8_t>> mask;   // 1 where items[u][t] != 0
    std::vector<std::int64_t> valid_target;        // second-to-last interaction
    std::vector<std::int64_t> test_target;         // last interaction
    std::vector<std::vector<std::int64_t>> history;  // full interaction list (train+valid+test)

    FeatureSchema schema;
    Vocabulary item_vocab;
    std::vector<FeatureColumn> columns;  // explicit features, aligned with schema.features[1..]
    DatasetStats stats;

    std::size_t user_count() const { return items.size(); }

    /// Context item sequence for evaluation: validation uses the training
    /// items as-is; test appends the validation item and re-pads.
    std::vector<std::int64_t> context_items(std::size_t user, bool include_valid) const;

    void save(const std::filesystem::path& path, const nlohmann::json& config_echo) const;
    static SequenceDataset load(const std::filesystem::path& path);
};

struct RawFeatureMap {
    // external item id -> feature name -> raw cell text
    std::map<std::string, std::map<std::string, std::string>> cells;
};

struct IngestResult {
    std::vector<InteractionRecord> records;
    RawFeatureMap features;
};

/// TSV ingestion. Interactions: header "user_id\titem_id\ttimestamp".
/// Features: header "item_id\t<feature>..."; token-sequence cells are
/// '|'-separated; empty cell means missing.
IngestResult ingest(const std::filesystem::path& interactions_path,
                    const std::filesystem::path& features_path, const FeatureSchema& schema);
IngestResult ingest_interactions_only(const std::filesystem::path& interactions_path);

/// Iteratively removes users and items with fewer than k interactions until
/// a fixed point. Throws DataError when nothing survives.
std::vector<InteractionRecord> k_core_filter(std::vector<InteractionRecord> records, std::size_t k);

/// Per-user item-id lists, ascending by timestamp; ties keep input order.
std::map<std::string, std::vector<std::string>> build_sequences(
    std::span<const InteractionRecord> records);

struct PaddedSequence {
    std::vector<std::int64_t> items;
    std::vector<std::uint8_t> mask;
};

/// Keeps the most recent s items; shorter sequences are left-padded with 0.
PaddedSequence pad_truncate(std::span<const std::int64_t> sequence, std::size_t s);

struct BuildOptions {
    std::size_t max_len = 50;
    std::size_t k_core = 5;
    std::size_t min_len = 3;  // leave-one-out needs train/valid/test
};

/// Full pipeline: k-core filter, chronological ordering, vocabulary + feature
/// encoding, leave-one-out split, padding.
SequenceDataset build_dataset(const IngestResult& ingested, const FeatureSchema& schema,
                              const BuildOptions& options);

struct EvalCandidates {
    std::int64_t target = 0;
    std::vector<std::int64_t> negatives;  // distinct, outside the user history
};

/// n distinct uniform samples from items outside the user's history.
EvalCandidates sample_eval_negatives(std::span<const std::int64_t> history,
                                     std::int64_t target, std::int64_t item_count, std::size_t n,
                                     std::mt19937_64& rng);

struct SynthConfig {
    std::int64_t item_count = 200;
    std::size_t user_count = 2000;
    std::size_t max_len = 50;
    std::size_t min_raw_len = 8;
    std::size_t max_raw_len = 40;
    std::size_t markov_order = 1;
    /// number of per-user transition permutations; > 1 makes the history,
    /// not just the last item, carry the predictive signal
    std::size_t modes = 1;
    double peak_prob = 0.9;      // probability of following the mode permutation
    double feature_noise = 0.0;  // probability of corrupting an item's category
    std::uint64_t seed = 1;
};

/// Seeded Markov-chain dataset with a deterministic categorical feature
/// (item id mod 10, optionally noised). Byte-identical across runs per seed.
SequenceDataset synth_generate(const SynthConfig& config);

/// The mode permutations used by synth_generate, for test oracles.
std::vector<std::vector<std::int64_t>> synth_mode_successors(const SynthConfig& config);

}  // namespace mixrec
