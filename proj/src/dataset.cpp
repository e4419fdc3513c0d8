#include "mixrec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mixrec {

std::string feature_kind_name(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::id: return "id";
        case FeatureKind::token: return "token";
        case FeatureKind::token_sequence: return "token_sequence";
        case FeatureKind::float_value: return "float";
    }
    return "?";
}

FeatureKind feature_kind_from_name(const std::string& name) {
    if (name == "id") return FeatureKind::id;
    if (name == "token") return FeatureKind::token;
    if (name == "token_sequence") return FeatureKind::token_sequence;
    if (name == "float") return FeatureKind::float_value;
    throw ConfigError("unknown feature kind '" + name + "'");
}

FeatureSchema FeatureSchema::id_only() {
    FeatureSchema s;
    s.features.push_back({"item_id", FeatureKind::id});
    return s;
}

FeatureSchema FeatureSchema::parse(const std::string& text) {
    FeatureSchema s = id_only();
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        const auto colon = part.find(':');
        if (colon == std::string::npos) {
            throw ConfigError("schema entry '" + part + "' must be name:kind");
        }
        const std::string name = part.substr(0, colon);
        const FeatureKind kind = feature_kind_from_name(part.substr(colon + 1));
        if (kind == FeatureKind::id) throw ConfigError("schema may not declare a second id feature");
        s.features.push_back({name, kind});
    }
    s.validate();
    return s;
}

void FeatureSchema::validate() const {
    if (features.empty() || features[0].kind != FeatureKind::id) {
        throw ConfigError("schema: feature 0 must be the item id");
    }
    std::unordered_set<std::string> seen;
    for (const auto& f : features) {
        if (f.kind == FeatureKind::id && f.name != features[0].name) {
            throw ConfigError("schema: exactly one id feature allowed");
        }
        if (!seen.insert(f.name).second) {
            throw ConfigError("schema: duplicate feature name '" + f.name + "'");
        }
    }
}

std::int64_t Vocabulary::encode(const std::string& value) const {
    auto it = index_.find(value);
    return it == index_.end() ? 0 : it->second;
}

std::int64_t Vocabulary::encode_or_add(const std::string& value) {
    auto it = index_.find(value);
    if (it != index_.end()) return it->second;
    values_.push_back(value);
    const auto idx = static_cast<std::int64_t>(values_.size());
    index_.emplace(value, idx);
    return idx;
}

const std::string& Vocabulary::decode(std::int64_t index) const {
    if (index < 1 || index > size()) {
        throw IndexError("vocabulary: index " + std::to_string(index) + " not decodable");
    }
    return values_[static_cast<std::size_t>(index - 1)];
}

nlohmann::json Vocabulary::to_json() const { return values_; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    Vocabulary v;
    for (const auto& s : j) v.encode_or_add(s.get<std::string>());
    return v;
}

// ---------------------------------------------------------------------------
// ingestion
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tsv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
    return out;
}

std::vector<InteractionRecord> read_interactions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("interactions file not found: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError("interactions file is empty: " + path.string());
    ++line_no;
    const auto header = split_tsv(line);
    if (header.size() < 3 || header[0] != "user_id" || header[1] != "item_id" ||
        header[2] != "timestamp") {
        throw DataError(path.string() + ":1: expected header user_id\titem_id\ttimestamp");
    }
    std::vector<InteractionRecord> records;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_tsv(line);
        if (cells.size() < 3 || cells[0].empty() || cells[1].empty()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed line");
        }
        InteractionRecord r;
        r.user_id = cells[0];
        r.item_id = cells[1];
        try {
            r.timestamp = std::stoll(cells[2]);
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": bad timestamp '" + cells[2] + "'");
        }
        records.push_back(std::move(r));
    }
    return records;
}

RawFeatureMap read_features(const std::filesystem::path& path, const FeatureSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("features file not found: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError("features file is empty: " + path.string());
    ++line_no;
    const auto header = split_tsv(line);
    if (header.empty() || header[0] != "item_id") {
        throw DataError(path.string() + ":1: expected header starting with item_id");
    }
    // every explicit schema feature must have a column
    std::map<std::string, std::size_t> column_of;
    for (std::size_t i = 1; i < header.size(); ++i) column_of[header[i]] = i;
    for (std::size_t f = 1; f < schema.features.size(); ++f) {
        if (column_of.find(schema.features[f].name) == column_of.end()) {
            throw ConfigError("features file lacks schema column '" + schema.features[f].name + "'");
        }
    }
    RawFeatureMap map;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_tsv(line);
        if (cells.empty() || cells[0].empty()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed line");
        }
        auto& row = map.cells[cells[0]];
        for (std::size_t f = 1; f < schema.features.size(); ++f) {
            const std::size_t col = column_of[schema.features[f].name];
            if (col < cells.size() && !cells[col].empty()) {
                row[schema.features[f].name] = cells[col];
            }
        }
    }
    return map;
}

}  // namespace

IngestResult ingest(const std::filesystem::path& interactions_path,
                    const std::filesystem::path& features_path, const FeatureSchema& schema) {
    schema.validate();
    IngestResult result;
    result.records = read_interactions(interactions_path);
    if (schema.features.size() > 1) {
        result.features = read_features(features_path, schema);
    }
    return result;
}

IngestResult ingest_interactions_only(const std::filesystem::path& interactions_path) {
    IngestResult result;
    result.records = read_interactions(interactions_path);
    return result;
}

// ---------------------------------------------------------------------------
// filtering / ordering / splitting
// ---------------------------------------------------------------------------

std::vector<InteractionRecord> k_core_filter(std::vector<InteractionRecord> records,
                                             std::size_t k) {
    if (k < 1) throw ConfigError("k_core_filter: k must be >= 1");
    while (true) {
        std::map<std::string, std::size_t> user_count, item_count;
        for (const auto& r : records) {
            ++user_count[r.user_id];
            ++item_count[r.item_id];
        }
        std::vector<InteractionRecord> kept;
        kept.reserve(records.size());
        for (auto& r : records) {
            if (user_count[r.user_id] >= k && item_count[r.item_id] >= k) {
                kept.push_back(std::move(r));
            }
        }
        const bool fixed_point = kept.size() == records.size();
        records = std::move(kept);
        if (fixed_point) break;
    }
    if (records.empty()) throw DataError("k_core_filter: no interactions survive the " +
                                         std::to_string(k) + "-core filter");
    return records;
}

std::map<std::string, std::vector<std::string>> build_sequences(
    std::span<const InteractionRecord> records) {
    std::map<std::string, std::vector<std::pair<std::int64_t, std::string>>> grouped;
    for (const auto& r : records) grouped[r.user_id].emplace_back(r.timestamp, r.item_id);
    std::map<std::string, std::vector<std::string>> sequences;
    for (auto& [user, stamped] : grouped) {
        std::stable_sort(stamped.begin(), stamped.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& seq = sequences[user];
        seq.reserve(stamped.size());
        for (auto& [_, item] : stamped) seq.push_back(std::move(item));
    }
    return sequences;
}

PaddedSequence pad_truncate(std::span<const std::int64_t> sequence, std::size_t s) {
    if (s < 1) throw ConfigError("pad_truncate: s must be >= 1");
    if (sequence.empty()) throw DataError("pad_truncate: empty sequence");
    PaddedSequence out;
    out.items.assign(s, 0);
    out.mask.assign(s, 0);
    const std::size_t take = std::min(sequence.size(), s);
    const std::size_t offset = s - take;  // real items occupy the rightmost positions
    for (std::size_t i = 0; i < take; ++i) {
        out.items[offset + i] = sequence[sequence.size() - take + i];
        out.mask[offset + i] = 1;
    }
    return out;
}

namespace {

struct EncodedColumns {
    std::vector<FeatureColumn> columns;
};

// Builds vocabularies and float statistics from the items that appear in
// training positions, then encodes every item. Unseen values encode to 0.
EncodedColumns encode_features(const FeatureSchema& schema, const RawFeatureMap& raw,
                               const Vocabulary& item_vocab,
                               const std::vector<std::string>& item_of_index,
                               const std::unordered_set<std::int64_t>& training_items) {
    EncodedColumns out;
    const auto item_count = static_cast<std::size_t>(item_vocab.size());
    for (std::size_t f = 1; f < schema.features.size(); ++f) {
        const auto& spec = schema.features[f];
        FeatureColumn col;
        col.kind = spec.kind;
        auto cell_of = [&](std::size_t item_idx) -> const std::string* {
            const auto& ext = item_of_index[item_idx];
            auto it = raw.cells.find(ext);
            if (it == raw.cells.end()) return nullptr;
            auto jt = it->second.find(spec.name);
            return jt == it->second.end() ? nullptr : &jt->second;
        };
        switch (spec.kind) {
            case FeatureKind::token: {
                for (std::size_t i = 1; i <= item_count; ++i) {
                    if (!training_items.count(static_cast<std::int64_t>(i))) continue;
                    if (const auto* cell = cell_of(i)) col.vocab.encode_or_add(*cell);
                }
                col.token.assign(item_count + 1, 0);
                for (std::size_t i = 1; i <= item_count; ++i) {
                    if (const auto* cell = cell_of(i)) col.token[i] = col.vocab.encode(*cell);
                }
                break;
            }
            case FeatureKind::token_sequence: {
                auto split_tokens = [](const std::string& cell) {
                    std::vector<std::string> toks;
                    std::stringstream ss(cell);
                    std::string t;
                    while (std::getline(ss, t, '|'))
                        if (!t.empty()) toks.push_back(t);
                    return toks;
                };
                for (std::size_t i = 1; i <= item_count; ++i) {
                    if (!training_items.count(static_cast<std::int64_t>(i))) continue;
                    if (const auto* cell = cell_of(i))
                        for (const auto& t : split_tokens(*cell)) col.vocab.encode_or_add(t);
                }
                col.tokens.assign(item_count + 1, {});
                for (std::size_t i = 1; i <= item_count; ++i) {
                    if (const auto* cell = cell_of(i)) {
                        for (const auto& t : split_tokens(*cell)) {
                            const auto idx = col.vocab.encode(t);
                            if (idx != 0) col.tokens[i].push_back(idx);  // drop unseen tokens
                        }
                    }
                }
                break;
            }
            case FeatureKind::float_value: {
                double sum = 0, sum_sq = 0;
                std::size_t n = 0;
                auto parse = [&](const std::string& cell) -> std::optional<double> {
                    try {
                        return std::stod(cell);
                    } catch (const std::exception&) {
                        return std::nullopt;
                    }
                };
                for (std::size_t i = 1; i <= item_count; ++i) {
                    if (!training_items.count(static_cast<std::int64_t>(i))) continue;
                    const auto* cell = cell_of(i);
                    if (!cell) continue;
                    if (auto v = parse(*cell)) {
                        sum += *v;
                        sum_sq += *v * *v;
                        ++n;
                    }
                }
                col.train_mean = n ? sum / static_cast<double>(n) : 0.0;
                const double var =
                    n ? std::max(0.0, sum_sq / static_cast<double>(n) - col.train_mean * col.train_mean)
                      : 0.0;
                col.train_std = var > 0 ? std::sqrt(var) : 1.0;
                col.value.assign(item_count + 1, 0.0);
                for (std::size_t i = 1; i <= item_count; ++i) {
                    if (const auto* cell = cell_of(i)) {
                        if (auto v = parse(*cell)) {
                            col.value[i] = (*v - col.train_mean) / col.train_std;
                        }
                    }
                }
                break;
            }
            case FeatureKind::id:
                break;
        }
        out.columns.push_back(std::move(col));
    }
    return out;
}

}  // namespace

SequenceDataset build_dataset(const IngestResult& ingested, const FeatureSchema& schema,
                              const BuildOptions& options) {
    schema.validate();
    DatasetStats stats;
    {
        std::unordered_set<std::string> users, items;
        for (const auto& r : ingested.records) {
            users.insert(r.user_id);
            items.insert(r.item_id);
        }
        stats.raw_interactions = ingested.records.size();
        stats.raw_users = users.size();
        stats.raw_items = items.size();
        stats.mean_raw_length =
            users.empty() ? 0.0
                          : static_cast<double>(stats.raw_interactions) / static_cast<double>(users.size());
    }

    auto filtered = k_core_filter(ingested.records, options.k_core);
    stats.filtered_interactions = filtered.size();

    SequenceDataset ds;
    ds.max_len = options.max_len;
    ds.schema = schema;

    // internal item indices in first-appearance order of the filtered stream
    std::vector<std::string> item_of_index{""};  // index 0 = padding
    for (const auto& r : filtered) {
        if (ds.item_vocab.encode(r.item_id) == 0) {
            ds.item_vocab.encode_or_add(r.item_id);
            item_of_index.push_back(r.item_id);
        }
    }
    ds.item_count = ds.item_vocab.size();
    stats.items = static_cast<std::size_t>(ds.item_count);

    auto sequences = build_sequences(filtered);
    std::unordered_set<std::int64_t> training_items;
    std::vector<std::string> user_ids;
    for (auto& [user, seq] : sequences) {
        if (seq.size() < options.min_len) {
            ++stats.dropped_short_users;
            continue;
        }
        std::vector<std::int64_t> encoded;
        encoded.reserve(seq.size());
        for (const auto& item : seq) encoded.push_back(ds.item_vocab.encode(item));

        ds.test_target.push_back(encoded.back());
        ds.valid_target.push_back(encoded[encoded.size() - 2]);
        std::vector<std::int64_t> train(encoded.begin(), encoded.end() - 2);
        for (std::int64_t idx : train) training_items.insert(idx);
        auto padded = pad_truncate(train, options.max_len);
        ds.items.push_back(std::move(padded.items));
        ds.mask.push_back(std::move(padded.mask));
        ds.history.push_back(std::move(encoded));
        user_ids.push_back(user);
    }
    if (ds.items.empty()) throw DataError("build_dataset: no user has enough interactions to split");
    stats.users = ds.items.size();

    ds.columns = encode_features(schema, ingested.features, ds.item_vocab, item_of_index,
                                 training_items)
                     .columns;
    ds.stats = stats;
    return ds;
}

std::vector<std::int64_t> SequenceDataset::context_items(std::size_t user,
                                                         bool include_valid) const {
    std::vector<std::int64_t> ctx;
    for (std::size_t t = 0; t < max_len; ++t) {
        if (mask[user][t]) ctx.push_back(items[user][t]);
    }
    if (include_valid) ctx.push_back(valid_target[user]);
    auto padded = pad_truncate(ctx, max_len);
    return padded.items;
}

// ---------------------------------------------------------------------------
// evaluation negatives
// ---------------------------------------------------------------------------

EvalCandidates sample_eval_negatives(std::span<const std::int64_t> history, std::int64_t target,
                                     std::int64_t item_count, std::size_t n,
                                     std::mt19937_64& rng) {
    std::unordered_set<std::int64_t> excluded(history.begin(), history.end());
    excluded.insert(target);
    // item indices run 1..item_count; padding index 0 is never a candidate
    std::size_t excluded_real = 0;
    for (std::int64_t e : excluded)
        if (e >= 1 && e <= item_count) ++excluded_real;
    const std::size_t available = static_cast<std::size_t>(item_count) - excluded_real;
    if (available < n) {
        throw DataError("sample_eval_negatives: only " + std::to_string(available) +
                        " items outside the history, need " + std::to_string(n));
    }
    EvalCandidates out;
    out.target = target;
    out.negatives.reserve(n);
    if (available <= 2 * n) {
        // tight case: enumerate and draw without replacement
        std::vector<std::int64_t> pool;
        pool.reserve(available);
        for (std::int64_t i = 1; i <= item_count; ++i)
            if (!excluded.count(i)) pool.push_back(i);
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
            out.negatives.push_back(pool[i]);
        }
    } else {
        std::unordered_set<std::int64_t> chosen;
        std::uniform_int_distribution<std::int64_t> pick(1, item_count);
        while (out.negatives.size() < n) {
            const std::int64_t candidate = pick(rng);
            if (excluded.count(candidate) || !chosen.insert(candidate).second) continue;
            out.negatives.push_back(candidate);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

std::vector<std::vector<std::int64_t>> synth_mode_successors(const SynthConfig& config) {
    const std::int64_t m = config.item_count;
    std::vector<std::vector<std::int64_t>> succ;
    if (config.modes <= 1) {
        // degenerate chain: next = current + 1 (cyclic over 1..M)
        std::vector<std::int64_t> s(static_cast<std::size_t>(m) + 1, 0);
        for (std::int64_t i = 1; i <= m; ++i) s[static_cast<std::size_t>(i)] = i % m + 1;
        succ.push_back(std::move(s));
        return succ;
    }
    for (std::size_t mode = 0; mode < config.modes; ++mode) {
        std::mt19937_64 rng(config.seed * 2654435761ULL + 0x9e3779b97f4a7c15ULL * (mode + 1));
        std::vector<std::int64_t> perm(static_cast<std::size_t>(m));
        std::iota(perm.begin(), perm.end(), std::int64_t{1});
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::int64_t> s(static_cast<std::size_t>(m) + 1, 0);
        for (std::int64_t i = 1; i <= m; ++i)
            s[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i - 1)];
        succ.push_back(std::move(s));
    }
    return succ;
}

SequenceDataset synth_generate(const SynthConfig& config) {
    if (config.item_count < 2 || config.user_count < 1 || config.max_len < 3 ||
        config.min_raw_len < 3 || config.max_raw_len < config.min_raw_len) {
        throw ConfigError("synth_generate: invalid sizes");
    }
    if (config.markov_order < 1 || config.markov_order > 2) {
        throw ConfigError("synth_generate: markov order must be 1 or 2");
    }
    const auto successors = synth_mode_successors(config);
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::int64_t> uniform_item(1, config.item_count);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> uniform_mode(0, successors.size() - 1);
    std::uniform_int_distribution<std::size_t> uniform_len(config.min_raw_len, config.max_raw_len);

    SequenceDataset ds;
    ds.max_len = config.max_len;
    ds.item_count = config.item_count;
    ds.schema = FeatureSchema::parse("category:token");
    for (std::int64_t i = 1; i <= config.item_count; ++i) {
        ds.item_vocab.encode_or_add("i" + std::to_string(i));
    }

    for (std::size_t u = 0; u < config.user_count; ++u) {
        const std::size_t mode = uniform_mode(rng);
        const std::size_t len = uniform_len(rng);
        std::vector<std::int64_t> seq;
        seq.reserve(len);
        seq.push_back(uniform_item(rng));
        if (config.markov_order == 2) seq.push_back(uniform_item(rng));
        while (seq.size() < len) {
            const std::int64_t prev = config.markov_order == 2 ? seq[seq.size() - 2] : seq.back();
            if (unit(rng) < config.peak_prob) {
                seq.push_back(successors[mode][static_cast<std::size_t>(prev)]);
            } else {
                seq.push_back(uniform_item(rng));
            }
        }
        ds.test_target.push_back(seq.back());
        ds.valid_target.push_back(seq[seq.size() - 2]);
        std::vector<std::int64_t> train(seq.begin(), seq.end() - 2);
        auto padded = pad_truncate(train, config.max_len);
        ds.items.push_back(std::move(padded.items));
        ds.mask.push_back(std::move(padded.mask));
        ds.history.push_back(std::move(seq));
    }

    // deterministic categorical feature: item id mod 10, optionally noised
    FeatureColumn cat;
    cat.kind = FeatureKind::token;
    for (int v = 0; v < 10; ++v) cat.vocab.encode_or_add("c" + std::to_string(v));
    cat.token.assign(static_cast<std::size_t>(config.item_count) + 1, 0);
    std::mt19937_64 feature_rng(config.seed ^ 0xfeedfacecafebeefULL);
    std::uniform_int_distribution<std::int64_t> uniform_cat(1, 10);
    for (std::int64_t i = 1; i <= config.item_count; ++i) {
        std::int64_t c = i % 10 + 1;
        if (config.feature_noise > 0 && unit(feature_rng) < config.feature_noise) {
            c = uniform_cat(feature_rng);
        }
        cat.token[static_cast<std::size_t>(i)] = c;
    }
    ds.columns.push_back(std::move(cat));

    ds.stats.raw_interactions = 0;
    for (const auto& h : ds.history) ds.stats.raw_interactions += h.size();
    ds.stats.raw_users = config.user_count;
    ds.stats.raw_items = static_cast<std::size_t>(config.item_count);
    ds.stats.filtered_interactions = ds.stats.raw_interactions;
    ds.stats.users = config.user_count;
    ds.stats.items = static_cast<std::size_t>(config.item_count);
    ds.stats.mean_raw_length =
        static_cast<double>(ds.stats.raw_interactions) / static_cast<double>(config.user_count);
    return ds;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

void SequenceDataset::save(const std::filesystem::path& path,
                           const nlohmann::json& config_echo) const {
    Container c;
    const std::size_t n = user_count();
    std::vector<std::int64_t> flat_items, flat_mask;
    flat_items.reserve(n * max_len);
    for (std::size_t u = 0; u < n; ++u) {
        flat_items.insert(flat_items.end(), items[u].begin(), items[u].end());
        for (std::uint8_t m : mask[u]) flat_mask.push_back(m);
    }
    c.put_i64("items", {n, max_len}, std::move(flat_items));
    c.put_i64("mask", {n, max_len}, std::move(flat_mask));
    c.put_i64("valid_target", {n}, valid_target);
    c.put_i64("test_target", {n}, test_target);

    std::vector<std::int64_t> hist_offsets{0}, hist_values;
    for (const auto& h : history) {
        hist_values.insert(hist_values.end(), h.begin(), h.end());
        hist_offsets.push_back(static_cast<std::int64_t>(hist_values.size()));
    }
    const std::size_t ho_size = hist_offsets.size(), hv_size = hist_values.size();
    c.put_i64("history_offsets", {ho_size}, std::move(hist_offsets));
    c.put_i64("history_values", {hv_size}, std::move(hist_values));

    nlohmann::json schema_json = nlohmann::json::array();
    for (const auto& f : schema.features) {
        schema_json.push_back({{"name", f.name}, {"kind", feature_kind_name(f.kind)}});
    }
    nlohmann::json feature_meta = nlohmann::json::array();
    for (std::size_t f = 0; f < columns.size(); ++f) {
        const auto& col = columns[f];
        const std::string prefix = "feat" + std::to_string(f) + "/";
        nlohmann::json meta{{"kind", feature_kind_name(col.kind)}};
        switch (col.kind) {
            case FeatureKind::token:
                c.put_i64(prefix + "token", {col.token.size()}, col.token);
                meta["vocab"] = col.vocab.to_json();
                break;
            case FeatureKind::token_sequence: {
                std::vector<std::int64_t> offsets{0}, values;
                for (const auto& toks : col.tokens) {
                    values.insert(values.end(), toks.begin(), toks.end());
                    offsets.push_back(static_cast<std::int64_t>(values.size()));
                }
                const std::size_t o_size = offsets.size(), v_size = values.size();
                c.put_i64(prefix + "tokens_offsets", {o_size}, std::move(offsets));
                c.put_i64(prefix + "tokens_values", {v_size}, std::move(values));
                meta["vocab"] = col.vocab.to_json();
                break;
            }
            case FeatureKind::float_value:
                c.put_f64(prefix + "value", {col.value.size()}, col.value);
                meta["train_mean"] = col.train_mean;
                meta["train_std"] = col.train_std;
                break;
            case FeatureKind::id:
                break;
        }
        feature_meta.push_back(std::move(meta));
    }

    c.meta["kind"] = "dataset";
    c.meta["max_len"] = max_len;
    c.meta["item_count"] = item_count;
    c.meta["schema"] = schema_json;
    c.meta["item_vocab"] = item_vocab.to_json();
    c.meta["features"] = feature_meta;
    c.meta["stats"] = {{"raw_interactions", stats.raw_interactions},
                       {"raw_users", stats.raw_users},
                       {"raw_items", stats.raw_items},
                       {"filtered_interactions", stats.filtered_interactions},
                       {"users", stats.users},
                       {"items", stats.items},
                       {"dropped_short_users", stats.dropped_short_users},
                       {"mean_raw_length", stats.mean_raw_length}};
    c.meta["config"] = config_echo;
    c.save(path);
}

SequenceDataset SequenceDataset::load(const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "dataset") {
        throw DataError("not a prepared dataset: " + path.string());
    }
    SequenceDataset ds;
    ds.max_len = c.meta.at("max_len").get<std::size_t>();
    ds.item_count = c.meta.at("item_count").get<std::int64_t>();
    ds.item_vocab = Vocabulary::from_json(c.meta.at("item_vocab"));
    for (const auto& f : c.meta.at("schema")) {
        ds.schema.features.push_back(
            {f.at("name").get<std::string>(), feature_kind_from_name(f.at("kind").get<std::string>())});
    }
    ds.schema.validate();

    const auto& flat_items = c.get_i64("items");
    const auto& flat_mask = c.get_i64("mask");
    const std::size_t n = c.shape("items")[0];
    ds.items.resize(n);
    ds.mask.resize(n);
    for (std::size_t u = 0; u < n; ++u) {
        ds.items[u].assign(flat_items.begin() + static_cast<std::ptrdiff_t>(u * ds.max_len),
                           flat_items.begin() + static_cast<std::ptrdiff_t>((u + 1) * ds.max_len));
        ds.mask[u].resize(ds.max_len);
        for (std::size_t t = 0; t < ds.max_len; ++t)
            ds.mask[u][t] = static_cast<std::uint8_t>(flat_mask[u * ds.max_len + t]);
    }
    ds.valid_target = c.get_i64("valid_target");
    ds.test_target = c.get_i64("test_target");
    const auto& ho = c.get_i64("history_offsets");
    const auto& hv = c.get_i64("history_values");
    ds.history.resize(n);
    for (std::size_t u = 0; u < n; ++u) {
        ds.history[u].assign(hv.begin() + ho[u], hv.begin() + ho[u + 1]);
    }

    const auto& feature_meta = c.meta.at("features");
    for (std::size_t f = 0; f < feature_meta.size(); ++f) {
        const std::string prefix = "feat" + std::to_string(f) + "/";
        FeatureColumn col;
        col.kind = feature_kind_from_name(feature_meta[f].at("kind").get<std::string>());
        switch (col.kind) {
            case FeatureKind::token:
                col.token = c.get_i64(prefix + "token");
                col.vocab = Vocabulary::from_json(feature_meta[f].at("vocab"));
                break;
            case FeatureKind::token_sequence: {
                const auto& offsets = c.get_i64(prefix + "tokens_offsets");
                const auto& values = c.get_i64(prefix + "tokens_values");
                col.tokens.resize(offsets.size() - 1);
                for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
                    col.tokens[i].assign(values.begin() + offsets[i], values.begin() + offsets[i + 1]);
                }
                col.vocab = Vocabulary::from_json(feature_meta[f].at("vocab"));
                break;
            }
            case FeatureKind::float_value:
                col.value = c.get_f64(prefix + "value");
                col.train_mean = feature_meta[f].at("train_mean").get<double>();
                col.train_std = feature_meta[f].at("train_std").get<double>();
                break;
            case FeatureKind::id:
                break;
        }
        ds.columns.push_back(std::move(col));
    }

    const auto& st = c.meta.at("stats");
    ds.stats.raw_interactions = st.at("raw_interactions").get<std::size_t>();
    ds.stats.raw_users = st.at("raw_users").get<std::size_t>();
    ds.stats.raw_items = st.at("raw_items").get<std::size_t>();
    ds.stats.filtered_interactions = st.at("filtered_interactions").get<std::size_t>();
    ds.stats.users = st.at("users").get<std::size_t>();
    ds.stats.items = st.at("items").get<std::size_t>();
    ds.stats.dropped_short_users = st.at("dropped_short_users").get<std::size_t>();
    ds.stats.mean_raw_length = st.at("mean_raw_length").get<double>();
    return ds;
}

}  // namespace mixrec
