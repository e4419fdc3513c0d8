#include "mixrec/config.hpp"

#include <fstream>
#include <sstream>

namespace mixrec {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    T out{};
    if (!(is >> out) || !(is >> std::ws).eof()) {
        throw ConfigError("config: bad value '" + value + "' for key '" + key + "'");
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& value) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (!part.empty()) out.push_back(parse_number<std::uint64_t>(key, part));
    }
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                                  ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
        }
        kv[section.empty() ? key : section + "." + key] = value;
    }
    return kv;
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "model.max_len") max_len = parse_number<std::size_t>(key, value);
        else if (key == "model.channels" || key == "model.embedding_size")
            channels = parse_number<std::size_t>(key, value);
        else if (key == "model.layers") layers = parse_number<std::size_t>(key, value);
        else if (key == "model.hidden_ratio") hidden_ratio = parse_number<double>(key, value);
        else if (key == "model.seq_hidden") seq_hidden = parse_number<std::size_t>(key, value);
        else if (key == "model.chan_hidden") chan_hidden = parse_number<std::size_t>(key, value);
        else if (key == "model.feat_hidden") feat_hidden = parse_number<std::size_t>(key, value);
        else if (key == "model.dropout") dropout = parse_number<double>(key, value);
        else if (key == "model.variant") variant = value;
        else if (key == "train.learning_rate") learning_rate = parse_number<double>(key, value);
        else if (key == "train.beta1") beta1 = parse_number<double>(key, value);
        else if (key == "train.beta2") beta2 = parse_number<double>(key, value);
        else if (key == "train.adam_eps") adam_eps = parse_number<double>(key, value);
        else if (key == "train.batch_size") batch_size = parse_number<std::size_t>(key, value);
        else if (key == "train.max_epochs") max_epochs = parse_number<std::size_t>(key, value);
        else if (key == "train.patience") patience = parse_number<std::size_t>(key, value);
        else if (key == "train.weight_decay") weight_decay = parse_number<double>(key, value);
        else if (key == "train.grad_clip") grad_clip = parse_number<double>(key, value);
        else if (key == "train.negatives_per_position")
            negatives_per_position = parse_number<std::size_t>(key, value);
        else if (key == "eval.top_k") top_k = parse_number<std::size_t>(key, value);
        else if (key == "eval.negatives") eval_negatives = parse_number<std::size_t>(key, value);
        else if (key == "run.seed") seed = parse_number<std::uint64_t>(key, value);
        else if (key == "run.seeds") seeds = parse_seed_list(key, value);
        else if (key == "run.workers") workers = parse_number<std::size_t>(key, value);
        else if (key == "run.deterministic")
            deterministic = value == "true" || value == "1" || value == "yes";
        else throw ConfigError("config: unknown key '" + key + "'");
    }
}

void RunConfig::validate() const {
    if (hidden_ratio <= 0) throw ConfigError("config: hidden_ratio must be positive");
    if (top_k < 1) throw ConfigError("config: top_k must be >= 1");
    if (eval_negatives < top_k) {
        // advisable, not fatal: ranking against fewer candidates than K
        // makes every metric trivially 1 at chance
    }
    variant_from_name(variant);
}

ModelConfig RunConfig::model_config(std::size_t feature_count, std::size_t dataset_max_len) const {
    ModelConfig m;
    m.max_len = dataset_max_len > 0 ? dataset_max_len : max_len;
    m.channels = channels;
    m.feature_count = feature_count;
    m.layers = layers;
    m.dropout = dropout;
    m.variant = variant_from_name(variant);
    m.apply_hidden_ratio(hidden_ratio);
    if (seq_hidden > 0) m.seq_hidden = seq_hidden;
    if (chan_hidden > 0) m.chan_hidden = chan_hidden;
    if (feat_hidden > 0) m.feat_hidden = feat_hidden;
    m.validate();
    return m;
}

TrainConfig RunConfig::train_config(std::uint64_t run_seed) const {
    TrainConfig t;
    t.learning_rate = learning_rate;
    t.beta1 = beta1;
    t.beta2 = beta2;
    t.adam_eps = adam_eps;
    t.batch_size = batch_size;
    t.max_epochs = max_epochs;
    t.patience = patience;
    t.weight_decay = weight_decay;
    t.grad_clip = grad_clip;
    t.negatives_per_position = negatives_per_position;
    t.seed = run_seed;
    t.validate();
    return t;
}

std::vector<std::uint64_t> RunConfig::seed_list() const {
    return seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds;
}

nlohmann::json RunConfig::to_json() const {
    return {{"model",
             {{"max_len", max_len},
              {"channels", channels},
              {"layers", layers},
              {"hidden_ratio", hidden_ratio},
              {"seq_hidden", seq_hidden},
              {"chan_hidden", chan_hidden},
              {"feat_hidden", feat_hidden},
              {"dropout", dropout},
              {"variant", variant}}},
            {"train",
             {{"learning_rate", learning_rate},
              {"beta1", beta1},
              {"beta2", beta2},
              {"adam_eps", adam_eps},
              {"batch_size", batch_size},
              {"max_epochs", max_epochs},
              {"patience", patience},
              {"weight_decay", weight_decay},
              {"grad_clip", grad_clip},
              {"negatives_per_position", negatives_per_position}}},
            {"eval", {{"top_k", top_k}, {"negatives", eval_negatives}}},
            {"run",
             {{"seed", seed},
              {"seeds", seed_list()},
              {"workers", workers},
              {"deterministic", deterministic}}}};
}

}  // namespace mixrec
