// mixrec: tri-axis MLP mixer for sequential recommendation.
// Subcommands: prepare, synth, train, eval, ablate, count-params, bench.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mixrec/bench.hpp"
#include "mixrec/config.hpp"
#include "mixrec/dataset.hpp"
#include "mixrec/eval.hpp"
#include "mixrec/model.hpp"
#include "mixrec/train.hpp"

namespace fs = std::filesystem;
using namespace mixrec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// MIXREC_DATA_DIR is the default dataset root for relative paths
fs::path resolve_data_path(const fs::path& p) {
    if (p.is_absolute() || fs::exists(p)) return p;
    if (const char* root = std::getenv("MIXREC_DATA_DIR")) {
        const fs::path joined = fs::path(root) / p;
        if (fs::exists(joined)) return joined;
    }
    return p;
}

nlohmann::json artifact_config(const RunConfig& run) {
    return {{"format_version", 1}, {"config", run.to_json()}};
}

void print_dataset_stats(const SequenceDataset& ds) {
    const auto& st = ds.stats;
    std::cout << "dataset statistics\n"
              << "  interactions (raw):      " << st.raw_interactions << "\n"
              << "  users (raw):             " << st.raw_users << "\n"
              << "  items (raw):             " << st.raw_items << "\n"
              << "  avg. length (raw):       " << std::fixed << std::setprecision(1)
              << st.mean_raw_length << "\n"
              << "  interactions (filtered): " << st.filtered_interactions << "\n"
              << "  users (retained):        " << st.users << "\n"
              << "  items (retained):        " << st.items << "\n"
              << "  users dropped (<3):      " << st.dropped_short_users << "\n";
    std::cout.unsetf(std::ios_base::floatfield);
}

std::string metrics_row(const std::string& label, double mrr, double ndcg, double hr) {
    std::ostringstream os;
    os << std::left << std::setw(22) << label << std::right << std::fixed << std::setprecision(4)
       << std::setw(9) << mrr << std::setw(9) << ndcg << std::setw(9) << hr;
    return os.str();
}

std::string metrics_header(const std::string& label_col) {
    std::ostringstream os;
    os << std::left << std::setw(22) << label_col << std::right << std::setw(9) << "MRR@10"
       << std::setw(9) << "NDCG@10" << std::setw(9) << "HR@10";
    return os.str();
}

Model train_one(const RunConfig& run_in, const SequenceDataset& ds, std::uint64_t seed,
                const fs::path& checkpoint, std::vector<nlohmann::json>* log_out) {
    RunConfig run = run_in;
    run.max_len = ds.max_len;  // the prepared dataset fixes s
    const auto model_cfg = run.model_config(ds.schema.feature_count(), ds.max_len);
    std::mt19937_64 init_rng(seed);
    Model model = Model::init(model_cfg, ds.schema, VocabSizes::of(ds), init_rng);

    TrainLoopOptions options;
    options.valid_top_k = run.top_k;
    options.valid_negatives = run.eval_negatives;
    options.candidate_seed = seed;
    options.checkpoint_path = checkpoint;
    options.config_echo = artifact_config(run);
    options.workers = run.deterministic ? 1 : run.workers;
    const auto result = train_loop(model, ds, run.train_config(seed), options);
    if (log_out) *log_out = result.log;
    return model;
}

MetricsReport eval_one(const RunConfig& run, const Model& model, const SequenceDataset& ds,
                       std::uint64_t candidate_seed, Split split) {
    EvalProtocol protocol;
    protocol.top_k = run.top_k;
    protocol.negatives = run.eval_negatives;
    protocol.candidate_seed = candidate_seed;
    protocol.split = split;
    return evaluate(model, ds, protocol, run.deterministic ? 1 : run.workers);
}

// ---------------------------------------------------------------------------

int cmd_prepare(const RunConfig& run, const std::string& interactions,
                const std::string& features, const std::string& schema_text,
                const std::string& out, std::size_t k_core) {
    const FeatureSchema schema =
        schema_text.empty() ? FeatureSchema::id_only() : FeatureSchema::parse(schema_text);
    IngestResult ingested;
    if (schema.feature_count() > 1) {
        ingested = ingest(resolve_data_path(interactions), resolve_data_path(features), schema);
    } else {
        ingested = ingest_interactions_only(resolve_data_path(interactions));
    }
    BuildOptions options;
    options.max_len = run.max_len;
    options.k_core = k_core;
    auto ds = build_dataset(ingested, schema, options);
    ds.save(out, artifact_config(run));
    print_dataset_stats(ds);
    std::cout << "wrote " << out << "\n";
    return kExitOk;
}

int cmd_synth(const RunConfig& run, const SynthConfig& synth, const std::string& out) {
    auto ds = synth_generate(synth);
    ds.save(out, artifact_config(run));
    print_dataset_stats(ds);
    std::cout << "generated items=" << synth.item_count << " users=" << synth.user_count
              << " s=" << synth.max_len << " modes=" << synth.modes << " peak=" << synth.peak_prob
              << " markov_order=" << synth.markov_order << " seed=" << synth.seed << "\n";
    std::cout << "wrote " << out << "\n";
    return kExitOk;
}

int cmd_train(const RunConfig& run, const std::string& data, const std::string& out_dir) {
    auto ds = SequenceDataset::load(resolve_data_path(data));
    fs::create_directories(out_dir);
    const fs::path checkpoint = fs::path(out_dir) / "checkpoint.mxrd";
    const fs::path log_path = fs::path(out_dir) / "log.jsonl";

    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw DataError("cannot open training log: " + log_path.string());
    log << artifact_config(run).dump() << "\n";

    std::vector<nlohmann::json> lines;
    Model model = train_one(run, ds, run.seed, checkpoint, &lines);
    for (const auto& line : lines) {
        log << line.dump() << "\n";
    }
    const auto report = eval_one(run, model, ds, run.seed, Split::test);
    log << nlohmann::json{{"final_test", report.to_json()}}.dump() << "\n";
    std::cout << metrics_header("split=test") << "\n"
              << metrics_row("seed " + std::to_string(run.seed), report.mrr, report.ndcg,
                             report.hr)
              << "\n";
    std::cout << "checkpoint: " << checkpoint.string() << "\nlog: " << log_path.string() << "\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& run, const std::string& checkpoint, const std::string& data,
             const std::string& split_text, const std::string& out_dir) {
    auto model = Model::load_checkpoint(resolve_data_path(checkpoint));
    auto ds = SequenceDataset::load(resolve_data_path(data));
    const Split split = split_from_name(split_text);

    nlohmann::json per_seed = nlohmann::json::array();
    double mrr = 0, ndcg = 0, hr = 0;
    std::cout << metrics_header("split=" + split_text) << "\n";
    const auto seeds = run.seed_list();
    for (std::uint64_t seed : seeds) {
        const auto report = eval_one(run, model, ds, seed, split);
        per_seed.push_back(report.to_json());
        mrr += report.mrr;
        ndcg += report.ndcg;
        hr += report.hr;
        std::cout << metrics_row("seed " + std::to_string(seed), report.mrr, report.ndcg,
                                 report.hr)
                  << "\n";
    }
    const auto n = static_cast<double>(seeds.size());
    std::cout << metrics_row("mean (" + std::to_string(seeds.size()) + " seeds)", mrr / n,
                             ndcg / n, hr / n)
              << "\n";

    nlohmann::json report = artifact_config(run);
    report["split"] = split_text;
    report["per_seed"] = per_seed;
    report["mean"] = {{"mrr", mrr / n}, {"ndcg", ndcg / n}, {"hr", hr / n}};
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream json_out(fs::path(out_dir) / "report.json");
        json_out << report.dump(2) << "\n";
        std::cout << "report: " << (fs::path(out_dir) / "report.json").string() << "\n";
    }
    return kExitOk;
}

int cmd_ablate(const RunConfig& run, const std::string& data, const std::string& out_dir,
               const std::string& variants_text) {
    auto ds = SequenceDataset::load(resolve_data_path(data));
    std::vector<std::string> variants;
    {
        std::stringstream ss(variants_text);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) variants.push_back(part);
    }
    fs::create_directories(out_dir.empty() ? "." : out_dir);
    const auto seeds = run.seed_list();

    nlohmann::json table = nlohmann::json::array();
    std::cout << metrics_header("variant") << "\n";
    for (const auto& tag : variants) {
        RunConfig vrun = run;
        vrun.variant = tag;
        double mrr = 0, ndcg = 0, hr = 0;
        nlohmann::json per_seed = nlohmann::json::array();
        for (std::uint64_t seed : seeds) {
            const fs::path ckpt =
                fs::path(out_dir.empty() ? "." : out_dir) /
                ("ablate-" + tag + "-seed" + std::to_string(seed) + ".mxrd");
            Model model = train_one(vrun, ds, seed, ckpt, nullptr);
            // shared dataset and shared candidate seeds across variants
            const auto report = eval_one(vrun, model, ds, seed, Split::test);
            per_seed.push_back(report.to_json());
            mrr += report.mrr;
            ndcg += report.ndcg;
            hr += report.hr;
        }
        const auto n = static_cast<double>(seeds.size());
        std::cout << metrics_row(tag, mrr / n, ndcg / n, hr / n) << "\n";
        table.push_back({{"variant", tag},
                         {"per_seed", per_seed},
                         {"mean", {{"mrr", mrr / n}, {"ndcg", ndcg / n}, {"hr", hr / n}}}});
    }
    if (!out_dir.empty()) {
        nlohmann::json report = artifact_config(run);
        report["ablation"] = table;
        std::ofstream out(fs::path(out_dir) / "ablation.json");
        out << report.dump(2) << "\n";
        std::cout << "report: " << (fs::path(out_dir) / "ablation.json").string() << "\n";
    }
    return kExitOk;
}

int cmd_count_params(const RunConfig& run, const std::string& data, std::int64_t items,
                     const std::string& sizes_text) {
    FeatureSchema schema = FeatureSchema::id_only();
    VocabSizes vocab;
    if (!data.empty()) {
        auto ds = SequenceDataset::load(resolve_data_path(data));
        schema = ds.schema;
        vocab = VocabSizes::of(ds);
    } else {
        vocab.items = items;
        // "name:kind:V,..." for explicit features
        std::stringstream ss(sizes_text);
        std::string part;
        while (std::getline(ss, part, ',')) {
            if (part.empty()) continue;
            const auto c1 = part.find(':');
            const auto c2 = part.find(':', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos) {
                throw ConfigError("count-params: feature spec must be name:kind:V");
            }
            schema.features.push_back(
                {part.substr(0, c1), feature_kind_from_name(part.substr(c1 + 1, c2 - c1 - 1))});
            vocab.features.push_back(std::stoll(part.substr(c2 + 1)));
        }
    }
    const auto cfg = run.model_config(schema.feature_count());
    const auto report = count_params(cfg, schema, vocab);
    std::cout << "parameter count (variant " << variant_name(cfg.variant) << ", K="
              << cfg.feature_count << ", s=" << cfg.max_len << ", C=" << cfg.channels
              << ", L=" << cfg.layers << ")\n";
    for (const auto& [name, n] : report.itemized) {
        std::cout << "  " << std::left << std::setw(32) << name << std::right << std::setw(12) << n
                  << "\n";
    }
    std::cout << "  " << std::left << std::setw(32) << "group: mixers" << std::right
              << std::setw(12) << report.mixers << "\n";
    std::cout << "  " << std::left << std::setw(32) << "group: layernorm" << std::right
              << std::setw(12) << report.layernorm << "\n";
    std::cout << "  " << std::left << std::setw(32) << "group: embeddings" << std::right
              << std::setw(12) << report.embeddings << "\n";
    std::cout << "  " << std::left << std::setw(32) << "total" << std::right << std::setw(12)
              << report.total() << "\n";
    std::cout << space_complexity_note(cfg) << "\n";
    return kExitOk;
}

int cmd_bench(const RunConfig& run, const std::string& axis_text, const std::string& values_text,
              std::size_t reps, const std::string& out) {
    if (axis_text.size() != 1) throw ConfigError("bench: axis must be one of s, C, K");
    std::vector<std::size_t> values;
    {
        std::stringstream ss(values_text);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) values.push_back(std::stoull(part));
    }
    if (values.empty()) throw ConfigError("bench: no sweep values given");

    // hidden sizes are pinned at the base config's values for every point
    ModelConfig base;
    base.max_len = run.max_len;
    base.channels = run.channels;
    base.feature_count = 2;
    base.layers = run.layers;
    base.dropout = 0.0;
    base.apply_hidden_ratio(run.hidden_ratio);
    if (run.seq_hidden > 0) base.seq_hidden = run.seq_hidden;
    if (run.chan_hidden > 0) base.chan_hidden = run.chan_hidden;
    if (run.feat_hidden > 0) base.feat_hidden = run.feat_hidden;

    const auto points = run_forward_bench(axis_text[0], values, base, reps, run.seed);
    std::ostringstream csv;
    csv << "# " << artifact_config(run).dump() << "\n" << bench_csv(axis_text[0], points);
    if (out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream f(out, std::ios::trunc);
        f << csv.str();
        std::cout << "wrote " << out << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixrec: tri-axis MLP mixer for sequential recommendation"};
    app.require_subcommand(1);
    app.fallthrough(true);

    RunConfig run;
    std::string config_path;

    // the config file loads before flag binding so flags override it
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i] ? argv[i] : "";
        if (arg == "--config" && i + 1 < argc) config_path = argv[i + 1];
        if (arg.rfind("--config=", 0) == 0) config_path = arg.substr(9);
    }
    try {
        if (!config_path.empty()) run.apply(parse_kv_file(config_path));
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    std::string seeds_text;
    app.add_option("--config", config_path, "key = value config file with [sections]");
    app.add_option("--seed", run.seed, "rng seed");
    app.add_option("--seeds", seeds_text, "comma-separated seed list (multi-seed protocols)");
    app.add_option("--workers", run.workers, "evaluation worker threads");
    app.add_flag("--deterministic", run.deterministic, "force single-worker determinism");
    app.add_option("--max-len", run.max_len, "maximum sequence length s");
    app.add_option("--channels", run.channels, "embedding size C");
    app.add_option("--layers", run.layers, "mixer layers L (weights shared)");
    app.add_option("--hidden-ratio", run.hidden_ratio, "mixer hidden size ratio");
    app.add_option("--seq-hidden", run.seq_hidden, "explicit r_s (overrides ratio)");
    app.add_option("--chan-hidden", run.chan_hidden, "explicit r_C (overrides ratio)");
    app.add_option("--feat-hidden", run.feat_hidden, "explicit r_K (overrides ratio)");
    app.add_option("--dropout", run.dropout, "dropout probability");
    app.add_option("--variant", run.variant,
                   "full | linear_feature_mixer | simple_final_mix | no_sequence_mixer | "
                   "no_channel_mixer | no_feature_mixer | mlp_mixer_plus | pop_rec");
    app.add_option("--lr", run.learning_rate, "Adam learning rate");
    app.add_option("--batch-size", run.batch_size, "training batch size");
    app.add_option("--max-epochs", run.max_epochs, "maximum training epochs");
    app.add_option("--patience", run.patience, "early-stop patience");
    app.add_option("--weight-decay", run.weight_decay, "decoupled weight decay");
    app.add_option("--grad-clip", run.grad_clip, "global-norm gradient clip (0 = off)");
    app.add_option("--train-negatives", run.negatives_per_position,
                   "negatives per supervised position");
    app.add_option("--top-k", run.top_k, "metrics cutoff K");
    app.add_option("--eval-negatives", run.eval_negatives, "candidates sampled per user");

    // prepare
    auto* prepare = app.add_subcommand("prepare", "ingest TSV logs into a prepared dataset");
    std::string interactions, features, schema_text, out_path;
    std::size_t k_core = 5;
    prepare->add_option("--interactions", interactions, "interactions TSV")->required();
    prepare->add_option("--features", features, "item features TSV");
    prepare->add_option("--schema", schema_text, "explicit features, name:kind[,name:kind...]");
    prepare->add_option("--out", out_path, "output dataset file")->required();
    prepare->add_option("--k-core", k_core, "k-core filter threshold");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
    SynthConfig synth_cfg;
    std::string synth_out;
    synth->add_option("--items", synth_cfg.item_count, "catalog size");
    synth->add_option("--users", synth_cfg.user_count, "user count");
    synth->add_option("--min-len", synth_cfg.min_raw_len, "minimum raw sequence length");
    synth->add_option("--max-raw-len", synth_cfg.max_raw_len, "maximum raw sequence length");
    synth->add_option("--modes", synth_cfg.modes, "per-user transition permutations");
    synth->add_option("--peak", synth_cfg.peak_prob, "probability of following the permutation");
    synth->add_option("--markov-order", synth_cfg.markov_order, "chain order (1 or 2)");
    synth->add_option("--feature-noise", synth_cfg.feature_noise, "category corruption rate");
    synth->add_option("--out", synth_out, "output dataset file")->required();

    // train
    auto* train = app.add_subcommand("train", "train a model on a prepared dataset");
    std::string data_path, out_dir = "run";
    train->add_option("--data", data_path, "prepared dataset")->required();
    train->add_option("--out", out_dir, "output directory (checkpoint + log)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string checkpoint_path, split_text = "test", eval_out;
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_path, "prepared dataset")->required();
    eval_cmd->add_option("--split", split_text, "validation | test");
    eval_cmd->add_option("--out", eval_out, "directory for report.json");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "train and compare the ablation variants");
    std::string variants_text =
        "full,linear_feature_mixer,simple_final_mix,no_sequence_mixer,no_channel_mixer,"
        "no_feature_mixer,mlp_mixer_plus,pop_rec";
    std::string ablate_out = "ablation";
    ablate->add_option("--data", data_path, "prepared dataset")->required();
    ablate->add_option("--variants", variants_text, "comma-separated variant tags");
    ablate->add_option("--out", ablate_out, "output directory");

    // count-params
    auto* count = app.add_subcommand("count-params", "itemized trainable-parameter count");
    std::string count_data, count_sizes;
    std::int64_t count_items = 0;
    count->add_option("--data", count_data, "prepared dataset (provides K and vocab sizes)");
    count->add_option("--items", count_items, "item vocabulary size (without --data)");
    count->add_option("--features", count_sizes, "explicit features, name:kind:V[,...]");

    // bench
    auto* bench = app.add_subcommand("bench", "forward wall-time sweep with fixed hidden sizes");
    std::string axis = "s", values_text = "32,64,128,256", bench_out;
    std::size_t reps = 20;
    bench->add_option("--axis", axis, "sweep axis: s | C | K");
    bench->add_option("--values", values_text, "comma-separated sweep values");
    bench->add_option("--reps", reps, "timed repetitions per point");
    bench->add_option("--out", bench_out, "CSV output path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!seeds_text.empty()) {
            run.seeds.clear();
            std::stringstream ss(seeds_text);
            std::string part;
            while (std::getline(ss, part, ','))
                if (!part.empty()) run.seeds.push_back(std::stoull(part));
        }
        run.validate();
        if (prepare->parsed()) {
            return cmd_prepare(run, interactions, features, schema_text, out_path, k_core);
        }
        if (synth->parsed()) {
            synth_cfg.max_len = run.max_len;
            synth_cfg.seed = run.seed;
            return cmd_synth(run, synth_cfg, synth_out);
        }
        if (train->parsed()) return cmd_train(run, data_path, out_dir);
        if (eval_cmd->parsed()) {
            return cmd_eval(run, checkpoint_path, data_path, split_text, eval_out);
        }
        if (ablate->parsed()) return cmd_ablate(run, data_path, ablate_out, variants_text);
        if (count->parsed()) return cmd_count_params(run, count_data, count_items, count_sizes);
        if (bench->parsed()) return cmd_bench(run, axis, values_text, reps, bench_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
