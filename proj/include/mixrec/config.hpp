#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixrec/errors.hpp"
#include "mixrec/model.hpp"
#include "mixrec/train.hpp"

namespace mixrec {

/// Flat "key = value" file with [section] headers and '#' comments.
/// Keys are returned as "section.key".
std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path);

/// Merged view of model, training, and evaluation settings. Precedence is
/// defaults < config file < command-line flags; the resolved config is
/// echoed into every output artifact.
struct RunConfig {
    // [model]
    std::size_t max_len = 50;
    std::size_t channels = 128;
    std::size_t layers = 4;
    double hidden_ratio = 4.0;
    std::size_t seq_hidden = 0;   // 0 = derive from ratio
    std::size_t chan_hidden = 0;
    std::size_t feat_hidden = 0;
    double dropout = 0.4;
    std::string variant = "full";

    // [train]
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    double weight_decay = 0.0;
    double grad_clip = 0.0;
    std::size_t negatives_per_position = 1;

    // [eval]
    std::size_t top_k = 10;
    std::size_t eval_negatives = 100;

    // global
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds;  // empty = {seed}
    std::size_t workers = 1;
    bool deterministic = false;

    void apply(const std::map<std::string, std::string>& kv);
    void validate() const;

    /// dataset_max_len, when nonzero, overrides max_len (a prepared dataset
    /// fixes s; ratio-derived hidden sizes follow it)
    ModelConfig model_config(std::size_t feature_count, std::size_t dataset_max_len = 0) const;
    TrainConfig train_config(std::uint64_t run_seed) const;
    std::vector<std::uint64_t> seed_list() const;

    nlohmann::json to_json() const;
};

}  // namespace mixrec
