#include "mixrec/model.hpp"

#include <cmath>
#include <sstream>

namespace mixrec {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::linear_feature_mixer: return "linear_feature_mixer";
        case Variant::simple_final_mix: return "simple_final_mix";
        case Variant::no_sequence_mixer: return "no_sequence_mixer";
        case Variant::no_channel_mixer: return "no_channel_mixer";
        case Variant::no_feature_mixer: return "no_feature_mixer";
        case Variant::mlp_mixer_plus: return "mlp_mixer_plus";
        case Variant::pop_rec: return "pop_rec";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::full, Variant::linear_feature_mixer, Variant::simple_final_mix,
                      Variant::no_sequence_mixer, Variant::no_channel_mixer,
                      Variant::no_feature_mixer, Variant::mlp_mixer_plus, Variant::pop_rec}) {
        if (variant_name(v) == name) return v;
    }
    throw ConfigError("unknown variant '" + name + "'");
}

void ModelConfig::apply_hidden_ratio(double ratio) {
    if (ratio <= 0) throw ConfigError("hidden ratio must be positive");
    seq_hidden = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(max_len))));
    chan_hidden = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(channels))));
    feat_hidden = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(feature_count))));
}

void ModelConfig::validate() const {
    if (max_len < 1 || channels < 1 || feature_count < 1 || layers < 1 || seq_hidden < 1 ||
        chan_hidden < 1 || feat_hidden < 1) {
        throw ConfigError("model config: all sizes must be >= 1");
    }
    if (dropout < 0 || dropout >= 1) throw ConfigError("model config: dropout must be in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"max_len", max_len},
            {"channels", channels},
            {"feature_count", feature_count},
            {"layers", layers},
            {"seq_hidden", seq_hidden},
            {"chan_hidden", chan_hidden},
            {"feat_hidden", feat_hidden},
            {"dropout", dropout},
            {"variant", variant_name(variant)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.max_len = j.at("max_len").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.feature_count = j.at("feature_count").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.seq_hidden = j.at("seq_hidden").get<std::size_t>();
    c.chan_hidden = j.at("chan_hidden").get<std::size_t>();
    c.feat_hidden = j.at("feat_hidden").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    return c;
}

VocabSizes VocabSizes::of(const SequenceDataset& ds) {
    VocabSizes v;
    v.items = ds.item_count;
    for (const auto& col : ds.columns) {
        v.features.push_back(col.kind == FeatureKind::float_value ? 0 : col.vocab.size());
    }
    return v;
}

// ---------------------------------------------------------------------------
// parameter accounting (closed form; the tests enumerate live tensors)
// ---------------------------------------------------------------------------

namespace {

std::int64_t mixer_block_size(std::size_t input, std::size_t hidden) {
    // w1 (hidden x input) + b1 + w2 (input x hidden) + b2
    return static_cast<std::int64_t>(2 * input * hidden + hidden + input);
}

}  // namespace

ParamCountReport count_params(const ModelConfig& config, const FeatureSchema& schema,
                              const VocabSizes& vocab) {
    config.validate();
    if (schema.feature_count() != config.feature_count) {
        throw ConfigError("count_params: schema K does not match config K");
    }
    ParamCountReport r;
    if (config.variant == Variant::pop_rec) return r;

    const auto s = config.max_len, c = config.channels, k = config.feature_count;
    const auto rs = config.seq_hidden, rc = config.chan_hidden, rk = config.feat_hidden;
    const auto add = [&r](const std::string& name, std::int64_t n) {
        r.itemized.emplace_back(name, n);
    };

    const bool has_seq = config.variant != Variant::no_sequence_mixer;
    const bool has_chan = config.variant != Variant::no_channel_mixer;
    const bool has_feat = config.variant == Variant::full ||
                          config.variant == Variant::simple_final_mix ||
                          config.variant == Variant::no_sequence_mixer ||
                          config.variant == Variant::no_channel_mixer;

    if (config.variant == Variant::mlp_mixer_plus) {
        const std::size_t width = k * c;         // channel axis after concatenation
        const std::size_t wide_hidden = k * rc;  // keeps the hidden ratio on the wide axis
        r.mixers += mixer_block_size(s, rs);
        add("seq_mixer", mixer_block_size(s, rs));
        r.mixers += mixer_block_size(width, wide_hidden);
        add("chan_mixer", mixer_block_size(width, wide_hidden));
        r.layernorm += static_cast<std::int64_t>(4 * width);
        add("layernorm(2 x 2*" + std::to_string(width) + ")", static_cast<std::int64_t>(4 * width));
    } else {
        if (has_seq) {
            const auto n = static_cast<std::int64_t>(k) * mixer_block_size(s, rs);
            r.mixers += n;
            add("seq_mixers(K=" + std::to_string(k) + ")", n);
        }
        if (has_chan) {
            const auto n = static_cast<std::int64_t>(k) * mixer_block_size(c, rc);
            r.mixers += n;
            add("chan_mixers(K=" + std::to_string(k) + ")", n);
        }
        if (has_feat) {
            r.mixers += mixer_block_size(k, rk);
            add("feature_mixer", mixer_block_size(k, rk));
        }
        if (config.variant == Variant::linear_feature_mixer) {
            const auto n = static_cast<std::int64_t>(k * k + k);
            r.mixers += n;
            add("feature_linear", n);
        }
        // one LayerNorm per mixer block instance, 2C affine terms each
        std::int64_t ln_instances = 0;
        if (has_seq) ln_instances += static_cast<std::int64_t>(k);
        if (has_chan) ln_instances += static_cast<std::int64_t>(k);
        if (has_feat) ln_instances += 1;
        r.layernorm += ln_instances * static_cast<std::int64_t>(2 * c);
        add("layernorm(" + std::to_string(ln_instances) + " x 2C)",
            ln_instances * static_cast<std::int64_t>(2 * c));
    }

    const auto item_n = (vocab.items + 1) * static_cast<std::int64_t>(c);
    r.embeddings += item_n;
    add("embedding/item", item_n);
    for (std::size_t f = 1; f < schema.features.size(); ++f) {
        const auto& spec = schema.features[f];
        std::int64_t n = 0;
        if (spec.kind == FeatureKind::float_value) {
            n = static_cast<std::int64_t>(2 * c);  // 1 x C weight + C bias
        } else {
            n = (vocab.features.at(f - 1) + 1) * static_cast<std::int64_t>(c);
        }
        r.embeddings += n;
        add("embedding/" + spec.name, n);
    }
    return r;
}

std::string space_complexity_note(const ModelConfig& config) {
    std::ostringstream os;
    os << "mixer space complexity O(K(s + C + 1)) = O(" << config.feature_count << " * ("
       << config.max_len << " + " << config.channels << " + 1)); independent of L ("
       << config.layers << " layers share one parameter set)";
    return os.str();
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace {

// zero-mean normal, std 0.02, truncated at +/- 2 sigma
Real trunc_normal(std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    return static_cast<Real>(0.02 * z);
}

TensorPtr weight(std::vector<std::size_t> shape, std::mt19937_64& rng) {
    auto t = make_tensor(std::move(shape), true);
    for (auto& v : t->data) v = trunc_normal(rng);
    return t;
}

TensorPtr zeros_param(std::vector<std::size_t> shape) {
    return make_tensor(std::move(shape), true);
}

TensorPtr ones_param(std::size_t n) {
    auto t = make_tensor({n}, true);
    t->fill(1);
    return t;
}

MixerBlock make_block(std::size_t input, std::size_t hidden, std::size_t ln_width,
                      std::mt19937_64& rng) {
    MixerBlock b;
    b.w1 = weight({hidden, input}, rng);
    b.b1 = zeros_param({hidden});
    b.w2 = weight({input, hidden}, rng);
    b.b2 = zeros_param({input});
    b.ln_gain = ones_param(ln_width);
    b.ln_bias = zeros_param({ln_width});
    return b;
}

}  // namespace

Model Model::init(const ModelConfig& config, const FeatureSchema& schema, const VocabSizes& vocab,
                  std::mt19937_64& rng) {
    config.validate();
    schema.validate();
    if (schema.feature_count() != config.feature_count) {
        throw ConfigError("model: schema declares K=" + std::to_string(schema.feature_count()) +
                          " but config has K=" + std::to_string(config.feature_count));
    }
    if (vocab.features.size() + 1 != config.feature_count) {
        throw ConfigError("model: vocab sizes do not cover the explicit features");
    }

    Model m;
    m.config = config;
    m.schema = schema;
    m.vocab = vocab;

    if (config.variant == Variant::pop_rec) {
        m.item_freq.assign(static_cast<std::size_t>(vocab.items) + 1, 0);
        m.register_params();
        return m;
    }

    const auto s = config.max_len, c = config.channels, k = config.feature_count;

    m.item_table = weight({static_cast<std::size_t>(vocab.items) + 1, c}, rng);
    std::fill_n(m.item_table->data.begin(), c, 0);  // padding row
    for (std::size_t f = 1; f < schema.features.size(); ++f) {
        FeatureEmbedding fe;
        fe.kind = schema.features[f].kind;
        if (fe.kind == FeatureKind::float_value) {
            fe.float_weight = weight({1, c}, rng);
            fe.float_bias = zeros_param({c});
        } else {
            fe.table = weight({static_cast<std::size_t>(vocab.features[f - 1]) + 1, c}, rng);
            std::fill_n(fe.table->data.begin(), c, 0);
        }
        m.feature_emb.push_back(std::move(fe));
    }

    if (config.variant == Variant::mlp_mixer_plus) {
        const std::size_t width = k * c;
        m.seq_mixers.push_back(make_block(s, config.seq_hidden, width, rng));
        m.chan_mixers.push_back(make_block(width, k * config.chan_hidden, width, rng));
    } else {
        const bool has_seq = config.variant != Variant::no_sequence_mixer;
        const bool has_chan = config.variant != Variant::no_channel_mixer;
        const bool has_feat = config.variant == Variant::full ||
                              config.variant == Variant::simple_final_mix ||
                              config.variant == Variant::no_sequence_mixer ||
                              config.variant == Variant::no_channel_mixer;
        if (has_seq) {
            for (std::size_t f = 0; f < k; ++f)
                m.seq_mixers.push_back(make_block(s, config.seq_hidden, c, rng));
        }
        if (has_chan) {
            for (std::size_t f = 0; f < k; ++f)
                m.chan_mixers.push_back(make_block(c, config.chan_hidden, c, rng));
        }
        if (has_feat) {
            m.feat_mixer = make_block(k, config.feat_hidden, c, rng);
        }
        if (config.variant == Variant::linear_feature_mixer) {
            // identity plus noise so the non-residual replacement preserves
            // signal flow at initialization
            m.linear_fw = weight({k, k}, rng);
            for (std::size_t i = 0; i < k; ++i) m.linear_fw->data[i * k + i] += 1;
            m.linear_fb = zeros_param({k});
        }
    }

    m.register_params();
    return m;
}

void Model::register_params() {
    params_.clear();
    auto reg = [this](const std::string& name, const TensorPtr& t, ParamGroup g) {
        if (t) params_.push_back({name, t, g});
    };
    reg("embedding/item", item_table, ParamGroup::embedding);
    for (std::size_t f = 0; f < feature_emb.size(); ++f) {
        const std::string base = "embedding/" + schema.features[f + 1].name;
        reg(base + "/table", feature_emb[f].table, ParamGroup::embedding);
        reg(base + "/float_weight", feature_emb[f].float_weight, ParamGroup::embedding);
        reg(base + "/float_bias", feature_emb[f].float_bias, ParamGroup::embedding);
    }
    auto reg_block = [&](const std::string& base, const MixerBlock& b) {
        reg(base + "/w1", b.w1, ParamGroup::mixer);
        reg(base + "/b1", b.b1, ParamGroup::bias);
        reg(base + "/w2", b.w2, ParamGroup::mixer);
        reg(base + "/b2", b.b2, ParamGroup::bias);
        reg(base + "/ln_gain", b.ln_gain, ParamGroup::layer_norm);
        reg(base + "/ln_bias", b.ln_bias, ParamGroup::layer_norm);
    };
    for (std::size_t i = 0; i < seq_mixers.size(); ++i)
        reg_block("seq_mixer/" + std::to_string(i), seq_mixers[i]);
    for (std::size_t i = 0; i < chan_mixers.size(); ++i)
        reg_block("chan_mixer/" + std::to_string(i), chan_mixers[i]);
    if (feat_mixer.w1) reg_block("feature_mixer", feat_mixer);
    reg("feature_linear/w", linear_fw, ParamGroup::mixer);
    reg("feature_linear/b", linear_fb, ParamGroup::bias);
}

void Model::zero_grad() const {
    for (const auto& p : params_) p.tensor->zero_grad();
}

std::int64_t Model::parameter_total() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += static_cast<std::int64_t>(p.tensor->numel());
    return n;
}

void Model::fit_pop_rec(const SequenceDataset& ds) {
    item_freq.assign(static_cast<std::size_t>(vocab.items) + 1, 0);
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
        for (std::size_t t = 0; t < ds.max_len; ++t) {
            if (ds.mask[u][t]) ++item_freq[static_cast<std::size_t>(ds.items[u][t])];
        }
    }
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

std::vector<TensorPtr> Model::embed_sequence(GradTape& tape, std::span<const std::int64_t> items,
                                             const std::vector<FeatureColumn>& columns) const {
    if (items.size() != config.max_len) {
        throw ShapeError("embed_sequence: expected " + std::to_string(config.max_len) +
                         " positions, got " + std::to_string(items.size()));
    }
    if (columns.size() != config.feature_count - 1) {
        throw ShapeError("embed_sequence: feature columns do not match K");
    }
    std::vector<TensorPtr> slices;
    slices.reserve(config.feature_count);
    slices.push_back(tape.embedding_lookup(item_table, items));

    const std::size_t s = config.max_len;
    for (std::size_t f = 0; f < columns.size(); ++f) {
        const auto& col = columns[f];
        const auto& emb = feature_emb[f];
        if (col.kind != emb.kind) throw ConfigError("embed_sequence: feature kind mismatch");
        switch (col.kind) {
            case FeatureKind::token: {
                std::vector<std::int64_t> idx(s);
                for (std::size_t t = 0; t < s; ++t)
                    idx[t] = col.token[static_cast<std::size_t>(items[t])];
                slices.push_back(tape.embedding_lookup(emb.table, idx));
                break;
            }
            case FeatureKind::token_sequence: {
                // per position: embed the item's tokens and average-pool them
                std::vector<TensorPtr> pooled(s);
                for (std::size_t t = 0; t < s; ++t) {
                    const auto& toks = col.tokens[static_cast<std::size_t>(items[t])];
                    auto rows = tape.embedding_lookup(emb.table, toks);
                    pooled[t] = tape.mean_pool(rows, toks.size());
                }
                slices.push_back(tape.stack_rows(pooled));
                break;
            }
            case FeatureKind::float_value: {
                // v * weight + bias, via the s x 1 value column
                auto values = make_tensor({s, 1});
                for (std::size_t t = 0; t < s; ++t)
                    values->data[t] =
                        static_cast<Real>(col.value[static_cast<std::size_t>(items[t])]);
                auto projected = tape.matmul(values, emb.float_weight);
                slices.push_back(tape.add_row_broadcast(projected, emb.float_bias));
                break;
            }
            case FeatureKind::id:
                throw ConfigError("embed_sequence: explicit feature of kind id");
        }
    }
    return slices;
}

TensorPtr Model::sequence_mix(GradTape& tape, const TensorPtr& x, std::size_t k, bool training,
                              std::mt19937_64& rng) const {
    const auto& b = seq_mixers.at(k);
    auto ln = tape.layer_norm(x, b.ln_gain, b.ln_bias);
    // mix along the time axis: each channel's s-vector is a column of ln
    auto h = tape.add_col_broadcast(tape.matmul(b.w1, ln), b.b1);
    h = tape.dropout(tape.gelu(h), static_cast<Real>(config.dropout), training, rng);
    h = tape.add_col_broadcast(tape.matmul(b.w2, h), b.b2);
    h = tape.dropout(h, static_cast<Real>(config.dropout), training, rng);
    return tape.add(x, h);
}

TensorPtr Model::channel_mix(GradTape& tape, const TensorPtr& x, std::size_t k, bool training,
                             std::mt19937_64& rng) const {
    const auto& b = chan_mixers.at(k);
    auto ln = tape.layer_norm(x, b.ln_gain, b.ln_bias);
    // mix within each position's embedding row
    auto h = tape.add_row_broadcast(tape.matmul(ln, tape.transpose(b.w1)), b.b1);
    h = tape.dropout(tape.gelu(h), static_cast<Real>(config.dropout), training, rng);
    h = tape.add_row_broadcast(tape.matmul(h, tape.transpose(b.w2)), b.b2);
    h = tape.dropout(h, static_cast<Real>(config.dropout), training, rng);
    return tape.add(x, h);
}

std::vector<TensorPtr> Model::feature_mix(GradTape& tape, const std::vector<TensorPtr>& slices,
                                          bool training, std::mt19937_64& rng) const {
    const auto& b = feat_mixer;
    std::vector<TensorPtr> normed(slices.size());
    for (std::size_t k = 0; k < slices.size(); ++k) {
        normed[k] = tape.layer_norm(slices[k], b.ln_gain, b.ln_bias);
    }
    // K x (s*C): each row is one feature's flattened table; mixing acts on
    // the K-vector shared by every (t, c) cell
    auto stacked = tape.stack_rows(normed);
    auto h = tape.add_col_broadcast(tape.matmul(b.w1, stacked), b.b1);
    h = tape.dropout(tape.gelu(h), static_cast<Real>(config.dropout), training, rng);
    h = tape.add_col_broadcast(tape.matmul(b.w2, h), b.b2);
    h = tape.dropout(h, static_cast<Real>(config.dropout), training, rng);
    std::vector<TensorPtr> out(slices.size());
    for (std::size_t k = 0; k < slices.size(); ++k) {
        out[k] = tape.add(slices[k], tape.slice_row(h, k, {config.max_len, config.channels}));
    }
    return out;
}

std::vector<TensorPtr> Model::linear_feature_step(GradTape& tape,
                                                  const std::vector<TensorPtr>& slices) const {
    // plain linear map over the K axis; no LN, activation, or residual
    auto stacked = tape.stack_rows(slices);
    auto h = tape.add_col_broadcast(tape.matmul(linear_fw, stacked), linear_fb);
    std::vector<TensorPtr> out(slices.size());
    for (std::size_t k = 0; k < slices.size(); ++k) {
        out[k] = tape.slice_row(h, k, {config.max_len, config.channels});
    }
    return out;
}

TensorPtr Model::forward_mixer_plus(GradTape& tape, std::span<const std::int64_t> items,
                                    const std::vector<FeatureColumn>& columns, bool training,
                                    std::mt19937_64& rng) const {
    auto slices = embed_sequence(tape, items, columns);
    auto x = tape.concat_cols(slices);  // s x (K*C)
    for (std::size_t l = 0; l < config.layers; ++l) {
        x = sequence_mix(tape, x, 0, training, rng);
        x = channel_mix(tape, x, 0, training, rng);
    }
    return tape.slice_cols(x, 0, config.channels);  // the id-embedding channels
}

TensorPtr Model::forward(GradTape& tape, std::span<const std::int64_t> items,
                         const std::vector<FeatureColumn>& columns, bool training,
                         std::mt19937_64& rng) const {
    if (config.variant == Variant::pop_rec) {
        throw ConfigError("pop_rec has no network forward; score from item frequencies");
    }
    if (config.variant == Variant::mlp_mixer_plus) {
        return forward_mixer_plus(tape, items, columns, training, rng);
    }
    auto slices = embed_sequence(tape, items, columns);
    const bool has_seq = config.variant != Variant::no_sequence_mixer;
    const bool has_chan = config.variant != Variant::no_channel_mixer;
    const bool in_layer_feat = config.variant == Variant::full ||
                               config.variant == Variant::no_sequence_mixer ||
                               config.variant == Variant::no_channel_mixer;
    for (std::size_t l = 0; l < config.layers; ++l) {
        if (has_seq) {
            for (std::size_t k = 0; k < slices.size(); ++k)
                slices[k] = sequence_mix(tape, slices[k], k, training, rng);
        }
        if (has_chan) {
            for (std::size_t k = 0; k < slices.size(); ++k)
                slices[k] = channel_mix(tape, slices[k], k, training, rng);
        }
        if (in_layer_feat) {
            slices = feature_mix(tape, slices, training, rng);
        } else if (config.variant == Variant::linear_feature_mixer) {
            slices = linear_feature_step(tape, slices);
        }
    }
    if (config.variant == Variant::simple_final_mix) {
        slices = feature_mix(tape, slices, training, rng);
    }
    return slices[0];
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void Model::save_checkpoint(const std::filesystem::path& path,
                            const nlohmann::json& config_echo) const {
    Container c;
    for (const auto& p : params_) {
        std::vector<double> values(p.tensor->data.begin(), p.tensor->data.end());
        c.put_f64(p.name, p.tensor->shape, std::move(values));
    }
    if (config.variant == Variant::pop_rec) {
        c.put_f64("pop_rec/item_freq", {item_freq.size()},
                  std::vector<double>(item_freq.begin(), item_freq.end()));
    }
    nlohmann::json schema_json = nlohmann::json::array();
    for (const auto& f : schema.features) {
        schema_json.push_back({{"name", f.name}, {"kind", feature_kind_name(f.kind)}});
    }
    c.meta["kind"] = "checkpoint";
    c.meta["model_config"] = config.to_json();
    c.meta["schema"] = schema_json;
    c.meta["vocab"] = {{"items", vocab.items}, {"features", vocab.features}};
    c.meta["config"] = config_echo;
    c.save(path);
}

Model Model::load_checkpoint(const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "checkpoint") {
        throw DataError("not a checkpoint: " + path.string());
    }
    ModelConfig config = ModelConfig::from_json(c.meta.at("model_config"));
    FeatureSchema schema;
    for (const auto& f : c.meta.at("schema")) {
        schema.features.push_back({f.at("name").get<std::string>(),
                                   feature_kind_from_name(f.at("kind").get<std::string>())});
    }
    VocabSizes vocab;
    vocab.items = c.meta.at("vocab").at("items").get<std::int64_t>();
    vocab.features = c.meta.at("vocab").at("features").get<std::vector<std::int64_t>>();

    std::mt19937_64 rng(0);
    Model m = Model::init(config, schema, vocab, rng);
    for (const auto& p : m.params_) {
        if (!c.has(p.name)) throw DataError("checkpoint missing parameter '" + p.name + "'");
        if (c.shape(p.name) != p.tensor->shape) {
            throw DataError("checkpoint parameter '" + p.name + "' has shape " +
                            Tensor::shape_str(c.shape(p.name)) + ", expected " +
                            Tensor::shape_str(p.tensor->shape));
        }
        const auto& values = c.get_f64(p.name);
        std::copy(values.begin(), values.end(), p.tensor->data.begin());
    }
    if (config.variant == Variant::pop_rec) {
        const auto& freq = c.get_f64("pop_rec/item_freq");
        m.item_freq.assign(freq.begin(), freq.end());
    }
    return m;
}

}  // namespace mixrec
