#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mixrec/dataset.hpp"

using namespace mixrec;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path;
}

InteractionRecord rec(const std::string& u, const std::string& i, std::int64_t t) {
    return {u, i, t};
}

// brute-force k-core oracle: one removal per pass until stable
std::vector<InteractionRecord> k_core_oracle(std::vector<InteractionRecord> records,
                                             std::size_t k) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::map<std::string, std::size_t> uc, ic;
        for (const auto& r : records) {
            ++uc[r.user_id];
            ++ic[r.item_id];
        }
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (uc[records[i].user_id] < k || ic[records[i].item_id] < k) {
                records.erase(records.begin() + static_cast<std::ptrdiff_t>(i));
                changed = true;
                break;
            }
        }
    }
    return records;
}

bool same_records(const std::vector<InteractionRecord>& a,
                  const std::vector<InteractionRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].user_id != b[i].user_id || a[i].item_id != b[i].item_id ||
            a[i].timestamp != b[i].timestamp)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("ingest parses TSV and applies missing-value rules") {
    const auto interactions = write_temp("mixrec_inter.tsv",
                                         "user_id\titem_id\ttimestamp\n"
                                         "u1\ta\t1\n"
                                         "u1\tb\t2\n"
                                         "u1\tc\t3\n");
    const auto features = write_temp("mixrec_feat.tsv",
                                     "item_id\tbrand\tgenres\tprice\n"
                                     "a\tacme\tx|y\t10.0\n"
                                     "b\t\tz\t\n"
                                     "c\tacme\t\t30.0\n");
    auto schema = FeatureSchema::parse("brand:token,genres:token_sequence,price:float");
    auto result = ingest(interactions, features, schema);
    CHECK(result.records.size() == 3);
    CHECK(result.features.cells.at("a").at("brand") == "acme");
    CHECK(result.features.cells.at("b").count("brand") == 0);  // empty cell = missing

    SUBCASE("missing brand encodes to index 0") {
        BuildOptions opts;
        opts.k_core = 1;
        opts.max_len = 4;
        auto ds = build_dataset(result, schema, opts);
        const auto b = ds.item_vocab.encode("b");
        CHECK(ds.columns[0].token[static_cast<std::size_t>(b)] == 0);
        const auto a = ds.item_vocab.encode("a");
        CHECK(ds.columns[0].token[static_cast<std::size_t>(a)] != 0);
    }

    std::filesystem::remove(interactions);
    std::filesystem::remove(features);
}

TEST_CASE("ingest reports malformed lines with line numbers") {
    const auto path = write_temp("mixrec_bad.tsv",
                                 "user_id\titem_id\ttimestamp\n"
                                 "u1\ta\t3\n"
                                 "u2\tb\tnot_a_number\n");
    CHECK_THROWS_WITH_AS(ingest_interactions_only(path), doctest::Contains(":3:"), DataError);
    std::filesystem::remove(path);

    const auto missing = std::filesystem::temp_directory_path() / "mixrec_nope.tsv";
    CHECK_THROWS_AS(ingest_interactions_only(missing), DataError);
}

TEST_CASE("ingest rejects schema columns absent from the features file") {
    const auto interactions = write_temp("mixrec_i2.tsv", "user_id\titem_id\ttimestamp\nu\ta\t1\n");
    const auto features = write_temp("mixrec_f2.tsv", "item_id\tbrand\na\tacme\n");
    auto schema = FeatureSchema::parse("color:token");
    CHECK_THROWS_WITH_AS(ingest(interactions, features, schema), doctest::Contains("color"),
                         ConfigError);
    std::filesystem::remove(interactions);
    std::filesystem::remove(features);
}

TEST_CASE("k_core_filter reaches the brute-force fixed point") {
    SUBCASE("everything above threshold is unchanged") {
        std::vector<InteractionRecord> records;
        for (int u = 0; u < 3; ++u)
            for (int i = 0; i < 5; ++i)
                records.push_back(rec("u" + std::to_string(u), "i" + std::to_string(i), i));
        auto filtered = k_core_filter(records, 3);
        CHECK(same_records(filtered, records));
    }

    SUBCASE("chain deletion matches the oracle") {
        // u_weak has 4 interactions; removing them drops i_frail below
        // threshold, which in turn drops u_dep
        std::vector<InteractionRecord> records;
        for (int i = 0; i < 4; ++i) records.push_back(rec("u_weak", "i" + std::to_string(i), i));
        for (int u = 0; u < 5; ++u)
            for (int i = 0; i < 5; ++i)
                records.push_back(rec("core" + std::to_string(u), "i" + std::to_string(i), i));
        records.push_back(rec("u_dep", "i0", 1));
        records.push_back(rec("u_dep", "i1", 2));
        records.push_back(rec("u_dep", "i2", 3));
        records.push_back(rec("u_dep", "i3", 4));
        records.push_back(rec("u_dep", "i_frail", 5));
        for (int j = 0; j < 4; ++j)
            records.push_back(rec("u_weak", "i_frail", 10 + j));

        auto filtered = k_core_filter(records, 5);
        auto oracle = k_core_oracle(records, 5);
        CHECK(same_records(filtered, oracle));
        // recount invariant
        std::map<std::string, std::size_t> uc, ic;
        for (const auto& r : filtered) {
            ++uc[r.user_id];
            ++ic[r.item_id];
        }
        for (const auto& [_, n] : uc) CHECK(n >= 5);
        for (const auto& [_, n] : ic) CHECK(n >= 5);
    }

    SUBCASE("random logs match the oracle") {
        std::mt19937_64 rng(42);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<InteractionRecord> records;
            std::uniform_int_distribution<int> user(0, 7), item(0, 9);
            for (int i = 0; i < 60; ++i)
                records.push_back(
                    rec("u" + std::to_string(user(rng)), "i" + std::to_string(item(rng)), i));
            std::vector<InteractionRecord> filtered;
            bool empty = false;
            try {
                filtered = k_core_filter(records, 4);
            } catch (const DataError&) {
                empty = true;
            }
            auto oracle = k_core_oracle(records, 4);
            if (empty) {
                CHECK(oracle.empty());
            } else {
                CHECK(same_records(filtered, oracle));
            }
        }
    }

    SUBCASE("empty fixed point is an explicit error") {
        std::vector<InteractionRecord> records{rec("u", "i", 1)};
        CHECK_THROWS_AS(k_core_filter(records, 5), DataError);
    }
}

TEST_CASE("build_sequences sorts by timestamp with stable ties") {
    std::vector<InteractionRecord> records{rec("u", "t3", 3), rec("u", "t1", 1), rec("u", "t2", 2)};
    auto seqs = build_sequences(records);
    CHECK(seqs.at("u") == std::vector<std::string>{"t1", "t2", "t3"});

    // equal timestamps preserve input-file order
    std::vector<InteractionRecord> tied{rec("u", "a", 5), rec("u", "b", 5), rec("u", "c", 1)};
    CHECK(build_sequences(tied).at("u") == std::vector<std::string>{"c", "a", "b"});

    // randomized oracle comparison
    std::mt19937_64 rng(3);
    std::vector<InteractionRecord> log;
    std::uniform_int_distribution<int> user(0, 9), stamp(0, 20);
    for (int i = 0; i < 200; ++i)
        log.push_back(rec("u" + std::to_string(user(rng)), "i" + std::to_string(i), stamp(rng)));
    auto got = build_sequences(log);
    std::map<std::string, std::vector<std::pair<std::int64_t, std::string>>> oracle;
    for (std::size_t i = 0; i < log.size(); ++i) oracle[log[i].user_id].push_back({log[i].timestamp, log[i].item_id});
    for (auto& [u, v] : oracle) {
        std::stable_sort(v.begin(), v.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<std::string> expect;
        for (auto& [_, item] : v) expect.push_back(item);
        CHECK(got.at(u) == expect);
    }
}

TEST_CASE("pad_truncate rules") {
    std::vector<std::int64_t> full(50);
    std::iota(full.begin(), full.end(), 1);
    auto same = pad_truncate(full, 50);
    CHECK(same.items == full);
    CHECK(std::all_of(same.mask.begin(), same.mask.end(), [](auto m) { return m == 1; }));

    const std::vector<std::int64_t> ab{7, 9};
    auto padded = pad_truncate(ab, 4);
    CHECK(padded.items == std::vector<std::int64_t>{0, 0, 7, 9});
    CHECK(padded.mask == std::vector<std::uint8_t>{0, 0, 1, 1});

    std::vector<std::int64_t> sixty(60);
    std::iota(sixty.begin(), sixty.end(), 1);
    auto cut = pad_truncate(sixty, 50);
    CHECK(cut.items.front() == 11);  // most recent 50 survive
    CHECK(cut.items.back() == 60);

    CHECK_THROWS_AS(pad_truncate(std::vector<std::int64_t>{}, 5), DataError);
}

TEST_CASE("leave-one-out split roles and no leakage") {
    // [a,b,c,d]: train=[a,b], valid=c, test=d
    const auto interactions = write_temp("mixrec_split.tsv",
                                         "user_id\titem_id\ttimestamp\n"
                                         "u\ta\t1\nu\tb\t2\nu\tc\t3\nu\td\t4\n"
                                         "v\ta\t1\nv\tb\t2\nv\tc\t3\n");
    BuildOptions opts;
    opts.k_core = 1;
    opts.max_len = 5;
    auto ds = build_dataset(ingest_interactions_only(interactions), FeatureSchema::id_only(), opts);
    REQUIRE(ds.user_count() == 2);
    const auto a = ds.item_vocab.encode("a"), b = ds.item_vocab.encode("b"),
               c = ds.item_vocab.encode("c"), d = ds.item_vocab.encode("d");
    // users are row-ordered by external id: u then v
    CHECK(ds.items[0] == std::vector<std::int64_t>{0, 0, 0, a, b});
    CHECK(ds.valid_target[0] == c);
    CHECK(ds.test_target[0] == d);
    // minimum case [a,b,c]
    CHECK(ds.items[1] == std::vector<std::int64_t>{0, 0, 0, 0, a});
    CHECK(ds.valid_target[1] == b);
    CHECK(ds.test_target[1] == c);
    std::filesystem::remove(interactions);
}

TEST_CASE("users shorter than three are dropped and counted") {
    const auto interactions = write_temp("mixrec_short.tsv",
                                         "user_id\titem_id\ttimestamp\n"
                                         "u\ta\t1\nu\tb\t2\nu\tc\t3\n"
                                         "w\ta\t1\nw\tb\t2\n");
    BuildOptions opts;
    opts.k_core = 1;
    opts.max_len = 5;
    auto ds = build_dataset(ingest_interactions_only(interactions), FeatureSchema::id_only(), opts);
    CHECK(ds.user_count() == 1);
    CHECK(ds.stats.dropped_short_users == 1);
    std::filesystem::remove(interactions);
}

TEST_CASE("split never leaks test items into training targets") {
    auto ds = synth_generate(SynthConfig{.item_count = 30,
                                         .user_count = 100,
                                         .max_len = 20,
                                         .min_raw_len = 5,
                                         .max_raw_len = 18,
                                         .modes = 4,
                                         .peak_prob = 0.8,
                                         .seed = 9});
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
        // training targets are items at positions 1.. of the stored sequence
        const auto& h = ds.history[u];
        const std::vector<std::int64_t> train(h.begin(), h.end() - 2);
        // the test item may recur inside training *inputs* (real logs revisit
        // items), but the final train/valid/test roles must be distinct slots
        CHECK(ds.test_target[u] == h.back());
        CHECK(ds.valid_target[u] == h[h.size() - 2]);
        // stored padded row equals the train portion
        std::vector<std::int64_t> unpadded;
        for (std::size_t t = 0; t < ds.max_len; ++t)
            if (ds.mask[u][t]) unpadded.push_back(ds.items[u][t]);
        const std::size_t take = std::min(train.size(), ds.max_len);
        const std::vector<std::int64_t> expect(train.end() - static_cast<std::ptrdiff_t>(take),
                                               train.end());
        CHECK(unpadded == expect);
    }
}

TEST_CASE("vocabulary round trips and reserves zero") {
    Vocabulary v;
    CHECK(v.encode("unseen") == 0);
    const auto idx = v.encode_or_add("alpha");
    CHECK(idx == 1);
    CHECK(v.encode_or_add("beta") == 2);
    CHECK(v.decode(v.encode("alpha")) == "alpha");
    CHECK(v.decode(v.encode("beta")) == "beta");
    CHECK_THROWS_AS(v.decode(0), IndexError);
    CHECK_THROWS_AS(v.decode(3), IndexError);

    auto round = Vocabulary::from_json(v.to_json());
    CHECK(round.encode("alpha") == 1);
    CHECK(round.encode("beta") == 2);
}

TEST_CASE("float features are z-scored on training statistics") {
    const auto interactions = write_temp("mixrec_zf.tsv",
                                         "user_id\titem_id\ttimestamp\n"
                                         "u\ta\t1\nu\tb\t2\nu\tc\t3\nu\td\t4\n");
    const auto features = write_temp("mixrec_zf_feat.tsv",
                                     "item_id\tprice\n"
                                     "a\t8.0\nb\t12.0\nc\t99.0\nd\t50.0\n");
    BuildOptions opts;
    opts.k_core = 1;
    opts.max_len = 5;
    auto schema = FeatureSchema::parse("price:float");
    auto ds = build_dataset(ingest(interactions, features, schema), schema, opts);
    // training items are a and b (c=valid, d=test): mean 10, std 2
    const auto& col = ds.columns[0];
    CHECK(col.train_mean == doctest::Approx(10.0));
    CHECK(col.train_std == doctest::Approx(2.0));
    CHECK(col.value[static_cast<std::size_t>(ds.item_vocab.encode("a"))] == doctest::Approx(-1.0));
    CHECK(col.value[static_cast<std::size_t>(ds.item_vocab.encode("b"))] == doctest::Approx(1.0));
    // price 10.0 with train mean 10.0 and std 2.0 would encode to 0.0
    CHECK((8.0 - col.train_mean) / col.train_std == doctest::Approx(-1.0));
    std::filesystem::remove(interactions);
    std::filesystem::remove(features);
}

TEST_CASE("categorical features encode via vocab with unseen -> 0") {
    const auto interactions = write_temp("mixrec_cat.tsv",
                                         "user_id\titem_id\ttimestamp\n"
                                         "u\ta\t1\nu\tb\t2\nu\tc\t3\nu\td\t4\nu\te\t5\n");
    const auto features = write_temp("mixrec_cat_feat.tsv",
                                     "item_id\tgenres\n"
                                     "a\tAction|Comedy\nb\tComedy\nc\tDrama\nd\tHorror\ne\tSciFi\n");
    BuildOptions opts;
    opts.k_core = 1;
    opts.max_len = 6;
    auto schema = FeatureSchema::parse("genres:token_sequence");
    auto ds = build_dataset(ingest(interactions, features, schema), schema, opts);
    const auto& col = ds.columns[0];
    const auto a = static_cast<std::size_t>(ds.item_vocab.encode("a"));
    REQUIRE(col.tokens[a].size() == 2);
    CHECK(col.vocab.decode(col.tokens[a][0]) == "Action");
    CHECK(col.vocab.decode(col.tokens[a][1]) == "Comedy");
    // item e appears only as the test target: its token "SciFi" is unseen in
    // training, so it is dropped rather than encoded
    const auto e = static_cast<std::size_t>(ds.item_vocab.encode("e"));
    CHECK(col.tokens[e].empty());
    CHECK(col.vocab.encode("SciFi") == 0);
    std::filesystem::remove(interactions);
    std::filesystem::remove(features);
}

TEST_CASE("eval negatives exclude history, dedupe, and stay uniform") {
    std::vector<std::int64_t> history{1, 2, 3, 4, 5, 2, 1};

    SUBCASE("forced set") {
        // 107 items, history covers 5 plus target 6 -> 101 available; ask 100
        std::mt19937_64 rng(1);
        auto c = sample_eval_negatives(history, 6, 107, 100, rng);
        std::set<std::int64_t> negs(c.negatives.begin(), c.negatives.end());
        CHECK(negs.size() == 100);
        for (std::int64_t n : negs) {
            CHECK(n >= 7);
            CHECK(n <= 107);
        }
    }

    SUBCASE("determinism per seed") {
        std::mt19937_64 a(77), b(77);
        auto c1 = sample_eval_negatives(history, 6, 1000, 100, a);
        auto c2 = sample_eval_negatives(history, 6, 1000, 100, b);
        CHECK(c1.negatives == c2.negatives);
    }

    SUBCASE("insufficient items is a protocol error") {
        std::mt19937_64 rng(1);
        CHECK_THROWS_AS(sample_eval_negatives(history, 6, 50, 100, rng), DataError);
    }

    SUBCASE("selection frequencies are uniform within 3 sigma") {
        std::mt19937_64 rng(123);
        const std::int64_t m = 300;
        const std::size_t n = 10, draws = 10000;
        std::vector<std::int64_t> hist{1, 2, 3};
        std::vector<std::size_t> count(static_cast<std::size_t>(m) + 1, 0);
        for (std::size_t d = 0; d < draws; ++d) {
            auto c = sample_eval_negatives(hist, 4, m, n, rng);
            for (std::int64_t neg : c.negatives) ++count[static_cast<std::size_t>(neg)];
        }
        const double p = static_cast<double>(n) / static_cast<double>(m - 4);
        const double mean = static_cast<double>(draws) * p;
        const double sigma = std::sqrt(static_cast<double>(draws) * p * (1 - p));
        std::size_t outliers = 0;
        for (std::int64_t i = 5; i <= m; ++i) {
            if (std::abs(static_cast<double>(count[static_cast<std::size_t>(i)]) - mean) > 3 * sigma)
                ++outliers;
        }
        // ~0.3% expected beyond 3 sigma; allow a small count
        CHECK(outliers <= 5);
        for (std::int64_t i = 1; i <= 4; ++i) CHECK(count[static_cast<std::size_t>(i)] == 0);
    }
}

TEST_CASE("synthetic generation") {
    SUBCASE("byte-identical across runs for a fixed seed") {
        SynthConfig cfg{.item_count = 20, .user_count = 50, .max_len = 10, .min_raw_len = 5,
                        .max_raw_len = 9, .seed = 5};
        auto a = synth_generate(cfg);
        auto b = synth_generate(cfg);
        CHECK(a.items == b.items);
        CHECK(a.history == b.history);
        CHECK(a.columns[0].token == b.columns[0].token);
        const auto pa = std::filesystem::temp_directory_path() / "mixrec_synth_a.mxrd";
        const auto pb = std::filesystem::temp_directory_path() / "mixrec_synth_b.mxrd";
        a.save(pa, {});
        b.save(pb, {});
        std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
        std::stringstream sa, sb;
        sa << fa.rdbuf();
        sb << fb.rdbuf();
        CHECK(sa.str() == sb.str());
        std::filesystem::remove(pa);
        std::filesystem::remove(pb);
    }

    SUBCASE("degenerate chain: every next item is prev+1") {
        SynthConfig cfg{.item_count = 7, .user_count = 30, .max_len = 12, .min_raw_len = 6,
                        .max_raw_len = 10, .modes = 1, .peak_prob = 1.0, .seed = 2};
        auto ds = synth_generate(cfg);
        for (const auto& h : ds.history) {
            for (std::size_t t = 1; t < h.size(); ++t) CHECK(h[t] == h[t - 1] % 7 + 1);
        }
    }

    SUBCASE("transition frequencies converge to the generator") {
        SynthConfig cfg{.item_count = 10, .user_count = 3000, .max_len = 40, .min_raw_len = 35,
                        .max_raw_len = 40, .modes = 1, .peak_prob = 0.7, .seed = 3};
        auto ds = synth_generate(cfg);
        auto succ = synth_mode_successors(cfg);
        // empirical P(next = succ(cur)) should approach peak + (1-peak)/M
        std::size_t hits = 0, total = 0;
        for (const auto& h : ds.history) {
            for (std::size_t t = 1; t < h.size(); ++t) {
                ++total;
                if (h[t] == succ[0][static_cast<std::size_t>(h[t - 1])]) ++hits;
            }
        }
        const double expect = 0.7 + 0.3 / 10.0;
        CHECK(total > 100000);
        CHECK(static_cast<double>(hits) / static_cast<double>(total) ==
              doctest::Approx(expect).epsilon(0.05));
    }

    SUBCASE("generated datasets satisfy the pipeline invariants") {
        SynthConfig cfg{.item_count = 25, .user_count = 80, .max_len = 15, .min_raw_len = 5,
                        .max_raw_len = 20, .modes = 3, .peak_prob = 0.9, .seed = 11};
        auto ds = synth_generate(cfg);
        for (std::size_t u = 0; u < ds.user_count(); ++u) {
            CHECK(ds.items[u].size() == ds.max_len);
            for (std::size_t t = 0; t < ds.max_len; ++t) {
                CHECK((ds.mask[u][t] == 1) == (ds.items[u][t] != 0));
            }
            CHECK(ds.history[u].size() >= 5);
            CHECK(ds.valid_target[u] >= 1);
            CHECK(ds.test_target[u] >= 1);
        }
    }
}

TEST_CASE("dataset container round trip") {
    SynthConfig cfg{.item_count = 15, .user_count = 20, .max_len = 8, .min_raw_len = 5,
                    .max_raw_len = 7, .modes = 2, .peak_prob = 0.8, .seed = 21};
    auto ds = synth_generate(cfg);
    const auto path = std::filesystem::temp_directory_path() / "mixrec_ds_roundtrip.mxrd";
    ds.save(path, {{"note", "test"}});
    auto loaded = SequenceDataset::load(path);
    CHECK(loaded.max_len == ds.max_len);
    CHECK(loaded.item_count == ds.item_count);
    CHECK(loaded.items == ds.items);
    CHECK(loaded.mask == ds.mask);
    CHECK(loaded.valid_target == ds.valid_target);
    CHECK(loaded.test_target == ds.test_target);
    CHECK(loaded.history == ds.history);
    CHECK(loaded.columns[0].token == ds.columns[0].token);
    CHECK(loaded.schema.features.size() == 2);
    CHECK(loaded.item_vocab.decode(3) == ds.item_vocab.decode(3));
    std::filesystem::remove(path);
}

TEST_CASE("context items for validation and test splits") {
    const auto interactions = write_temp("mixrec_ctx.tsv",
                                         "user_id\titem_id\ttimestamp\n"
                                         "u\ta\t1\nu\tb\t2\nu\tc\t3\nu\td\t4\nu\te\t5\n");
    BuildOptions opts;
    opts.k_core = 1;
    opts.max_len = 3;
    auto ds = build_dataset(ingest_interactions_only(interactions), FeatureSchema::id_only(), opts);
    const auto a = ds.item_vocab.encode("a"), b = ds.item_vocab.encode("b"),
               c = ds.item_vocab.encode("c"), d = ds.item_vocab.encode("d");
    // train = [a,b,c] (d=valid, e=test), s=3
    CHECK(ds.context_items(0, false) == std::vector<std::int64_t>{a, b, c});
    // test context appends the validation item and re-pads to the most recent 3
    CHECK(ds.context_items(0, true) == std::vector<std::int64_t>{b, c, d});
    std::filesystem::remove(interactions);
}
