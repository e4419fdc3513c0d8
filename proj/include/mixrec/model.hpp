#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mixrec/dataset.hpp"
#include "mixrec/tensor.hpp"

namespace mixrec {

enum class Variant {
    full,
    linear_feature_mixer,  // feature step is a plain linear map over K
    simple_final_mix,      // feature mixing only after the last layer
    no_sequence_mixer,
    no_channel_mixer,
    no_feature_mixer,      // equals a vanilla MLP-Mixer stack
    mlp_mixer_plus,        // embeddings concatenated to s x (K*C), bi-directional mixing
    pop_rec,               // scores are global item training frequencies
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
    std::size_t max_len = 50;       // s
    std::size_t channels = 128;     // C
    std::size_t feature_count = 1;  // K, id feature included
    std::size_t layers = 4;         // L; all layers share one weight set
    std::size_t seq_hidden = 200;   // r_s
    std::size_t chan_hidden = 512;  // r_C
    std::size_t feat_hidden = 4;    // r_K
    double dropout = 0.4;
    Variant variant = Variant::full;

    /// Hidden sizes as a ratio of their input width:
    /// r_s = ratio*s, r_C = ratio*C, r_K = max(1, ratio*K).
    void apply_hidden_ratio(double ratio);
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

enum class ParamGroup { mixer, bias, layer_norm, embedding };

struct NamedParam {
    std::string name;
    TensorPtr tensor;
    ParamGroup group;
};

/// Two-layer MLP block with pre-LayerNorm: applied along one axis of the
/// hidden table, with a residual connection added by the caller.
struct MixerBlock {
    TensorPtr w1, b1, w2, b2;
    TensorPtr ln_gain, ln_bias;
};

struct ParamCountReport {
    std::int64_t mixers = 0;
    std::int64_t layernorm = 0;
    std::int64_t embeddings = 0;
    std::vector<std::pair<std::string, std::int64_t>> itemized;
    std::int64_t total() const { return mixers + layernorm + embeddings; }
};

struct VocabSizes {
    std::int64_t items = 0;
    std::vector<std::int64_t> features;  // explicit features; 0 for float kinds
    static VocabSizes of(const SequenceDataset& ds);
};

/// Closed-form parameter count; independent of L by weight sharing.
ParamCountReport count_params(const ModelConfig& config, const FeatureSchema& schema,
                              const VocabSizes& vocab);

/// The O(K(s+C+1)) space expression with the config's numbers substituted.
std::string space_complexity_note(const ModelConfig& config);

class Model {
public:
    ModelConfig config;
    FeatureSchema schema;
    VocabSizes vocab;

    TensorPtr item_table;  // (V_item+1) x C; row 0 is the padding row
    struct FeatureEmbedding {
        FeatureKind kind = FeatureKind::token;
        TensorPtr table;         // token / token_sequence
        TensorPtr float_weight;  // 1 x C
        TensorPtr float_bias;    // C
    };
    std::vector<FeatureEmbedding> feature_emb;  // explicit features

    std::vector<MixerBlock> seq_mixers;   // per feature; single block for mlp_mixer_plus
    std::vector<MixerBlock> chan_mixers;  // per feature; single wide block for mlp_mixer_plus
    MixerBlock feat_mixer;                // one shared set regardless of L
    TensorPtr linear_fw, linear_fb;       // linear_feature_mixer variant
    std::vector<Real> item_freq;          // pop_rec

    static Model init(const ModelConfig& config, const FeatureSchema& schema,
                      const VocabSizes& vocab, std::mt19937_64& rng);

    /// K slices of shape s x C (the 3-d hidden table), one per feature.
    std::vector<TensorPtr> embed_sequence(GradTape& tape, std::span<const std::int64_t> items,
                                          const std::vector<FeatureColumn>& columns) const;

    TensorPtr sequence_mix(GradTape& tape, const TensorPtr& x, std::size_t k, bool training,
                           std::mt19937_64& rng) const;
    TensorPtr channel_mix(GradTape& tape, const TensorPtr& x, std::size_t k, bool training,
                          std::mt19937_64& rng) const;
    std::vector<TensorPtr> feature_mix(GradTape& tape, const std::vector<TensorPtr>& slices,
                                       bool training, std::mt19937_64& rng) const;

    /// Hidden states H (s x C): the id-feature slice after L shared-weight
    /// layers of sequence -> channel -> feature mixing.
    TensorPtr forward(GradTape& tape, std::span<const std::int64_t> items,
                      const std::vector<FeatureColumn>& columns, bool training,
                      std::mt19937_64& rng) const;

    const std::vector<NamedParam>& parameters() const { return params_; }
    void zero_grad() const;
    std::int64_t parameter_total() const;  // enumeration over live tensors

    void fit_pop_rec(const SequenceDataset& ds);

    void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config_echo) const;
    static Model load_checkpoint(const std::filesystem::path& path);

private:
    std::vector<NamedParam> params_;
    void register_params();
    std::vector<TensorPtr> linear_feature_step(GradTape& tape,
                                               const std::vector<TensorPtr>& slices) const;
    TensorPtr forward_mixer_plus(GradTape& tape, std::span<const std::int64_t> items,
                                 const std::vector<FeatureColumn>& columns, bool training,
                                 std::mt19937_64& rng) const;
};

}  // namespace mixrec
