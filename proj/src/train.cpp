#include "mixrec/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <unordered_set>

#include "mixrec/eval.hpp"

namespace mixrec {

void TrainConfig::validate() const {
    // lr == 0 is allowed: it turns train_epoch into an exact no-op pass
    if (learning_rate < 0) throw ConfigError("train config: learning rate must be >= 0");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1) {
        throw ConfigError("train config: betas must lie in (0, 1)");
    }
    if (adam_eps <= 0) throw ConfigError("train config: adam eps must be positive");
    if (batch_size < 1 || patience < 1 || negatives_per_position < 1) {
        throw ConfigError("train config: batch size, patience, negatives must be >= 1");
    }
    if (weight_decay < 0 || grad_clip < 0) {
        throw ConfigError("train config: weight decay and grad clip must be >= 0");
    }
}

std::vector<TrainingBatch> build_batches(const SequenceDataset& ds, std::size_t batch_size,
                                         std::size_t negatives_per_position, std::mt19937_64& rng) {
    const std::size_t s = ds.max_len;
    std::vector<std::size_t> order(ds.user_count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::uniform_int_distribution<std::int64_t> uniform_item(1, ds.item_count);
    std::vector<TrainingBatch> batches;
    TrainingBatch current;
    for (std::size_t u : order) {
        // shift rule: position t is supervised iff t and t+1 are both real
        std::vector<std::int64_t> targets(s, 0);
        std::vector<std::uint8_t> mask(s, 0);
        std::size_t supervised = 0;
        for (std::size_t t = 0; t + 1 < s; ++t) {
            if (ds.mask[u][t] && ds.mask[u][t + 1]) {
                targets[t] = ds.items[u][t + 1];
                mask[t] = 1;
                ++supervised;
            }
        }
        if (supervised == 0) continue;  // single-item training sequence

        const std::unordered_set<std::int64_t> history(ds.history[u].begin(), ds.history[u].end());
        if (history.size() >= static_cast<std::size_t>(ds.item_count)) {
            throw DataError("build_batches: user history covers the whole catalog");
        }
        std::vector<std::int64_t> negatives(negatives_per_position * s, 0);
        for (std::size_t j = 0; j < negatives_per_position; ++j) {
            for (std::size_t t = 0; t < s; ++t) {
                if (!mask[t]) continue;
                std::int64_t neg = uniform_item(rng);
                while (history.count(neg)) neg = uniform_item(rng);
                negatives[j * s + t] = neg;
            }
        }

        current.users.push_back(u);
        current.inputs.push_back(ds.items[u]);
        current.targets.push_back(std::move(targets));
        current.negatives.push_back(std::move(negatives));
        current.loss_mask.push_back(std::move(mask));
        if (current.users.size() == batch_size) {
            batches.push_back(std::move(current));
            current = TrainingBatch{};
        }
    }
    if (!current.users.empty()) batches.push_back(std::move(current));
    return batches;
}

BceLoss bce_loss(GradTape& tape, const TensorPtr& pos_scores,
                 std::span<const TensorPtr> neg_scores, const TensorPtr& mask) {
    if (mask->shape != pos_scores->shape) {
        throw ShapeError("bce_loss: mask shape does not match scores");
    }
    // -log sigmoid(p) = softplus(-p); -log(1 - sigmoid(n)) = softplus(n)
    auto per_position = tape.softplus(tape.scale(pos_scores, -1));
    for (const auto& neg : neg_scores) {
        if (neg->shape != pos_scores->shape) {
            throw ShapeError("bce_loss: negative scores shape mismatch");
        }
        per_position = tape.add(per_position, tape.softplus(neg));
    }
    BceLoss out;
    out.total = tape.sum(tape.mul(per_position, mask));
    out.positions = 0;
    for (Real m : mask->data) {
        if (m != 0) ++out.positions;
    }
    return out;
}

AdamOptimizer::AdamOptimizer(const std::vector<NamedParam>& params,
                             std::vector<TensorPtr> padding_rows, const TrainConfig& config)
    : params_(params), padding_rows_(std::move(padding_rows)), config_(config) {
    config_.validate();
    moments_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        moments_[i].m.assign(params_[i].tensor->numel(), 0);
        moments_[i].v.assign(params_[i].tensor->numel(), 0);
    }
}

void AdamOptimizer::zero_grad() {
    for (const auto& p : params_) p.tensor->zero_grad();
}

void AdamOptimizer::step() {
    ++t_;
    double clip_scale = 1.0;
    if (config_.grad_clip > 0) {
        double norm_sq = 0;
        for (const auto& p : params_)
            for (Real g : p.tensor->grad) norm_sq += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(norm_sq);
        if (norm > config_.grad_clip) clip_scale = config_.grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& tensor = *params_[i].tensor;
        auto& mom = moments_[i];
        const bool decay = config_.weight_decay > 0 && params_[i].group == ParamGroup::mixer;
        for (std::size_t j = 0; j < tensor.numel(); ++j) {
            const double g = static_cast<double>(tensor.grad[j]) * clip_scale;
            if (!std::isfinite(g)) {
                throw NumericError("adam: non-finite gradient in '" + params_[i].name + "'");
            }
            mom.m[j] = static_cast<Real>(config_.beta1 * mom.m[j] + (1.0 - config_.beta1) * g);
            mom.v[j] = static_cast<Real>(config_.beta2 * mom.v[j] + (1.0 - config_.beta2) * g * g);
            const double m_hat = mom.m[j] / bc1;
            const double v_hat = mom.v[j] / bc2;
            double update = config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.adam_eps);
            if (decay) update += config_.learning_rate * config_.weight_decay * tensor.data[j];
            tensor.data[j] -= static_cast<Real>(update);
        }
    }
    for (const auto& table : padding_rows_) {
        std::fill_n(table->data.begin(), table->cols(), 0);
    }
}

EpochStats train_epoch(const Model& model, const SequenceDataset& ds, AdamOptimizer& optimizer,
                       const TrainConfig& config, std::size_t epoch_index) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(config.seed * 0x9e3779b97f4a7c15ULL + epoch_index + 1);
    auto batches = build_batches(ds, config.batch_size, config.negatives_per_position, rng);

    EpochStats stats;
    const std::size_t s = ds.max_len;
    for (auto& batch : batches) {
        optimizer.zero_grad();
        GradTape tape;
        TensorPtr batch_loss;
        std::size_t batch_positions = 0;
        for (std::size_t b = 0; b < batch.users.size(); ++b) {
            auto hidden = model.forward(tape, batch.inputs[b], ds.columns, /*training=*/true, rng);
            auto pos_emb = tape.embedding_lookup(model.item_table, batch.targets[b]);
            auto pos_scores = tape.rowwise_dot(hidden, pos_emb);
            std::vector<TensorPtr> neg_scores;
            for (std::size_t j = 0; j < config.negatives_per_position; ++j) {
                const std::span<const std::int64_t> negs(batch.negatives[b].data() + j * s, s);
                auto neg_emb = tape.embedding_lookup(model.item_table, negs);
                neg_scores.push_back(tape.rowwise_dot(hidden, neg_emb));
            }
            auto mask = make_tensor({s});
            for (std::size_t t = 0; t < s; ++t) mask->data[t] = batch.loss_mask[b][t];
            auto loss = bce_loss(tape, pos_scores, neg_scores, mask);
            batch_positions += loss.positions;
            batch_loss = batch_loss ? tape.add(batch_loss, loss.total) : loss.total;
        }
        if (!batch_loss) continue;
        const double loss_value = batch_loss->data[0];
        if (!std::isfinite(loss_value)) {
            throw NumericError("train_epoch: non-finite loss in epoch " +
                               std::to_string(epoch_index));
        }
        tape.backward(batch_loss);
        optimizer.step();
        stats.sum_loss += loss_value;
        stats.positions += batch_positions;
        ++stats.batches;
    }
    stats.mean_loss = stats.positions ? stats.sum_loss / static_cast<double>(stats.positions) : 0.0;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return stats;
}

EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience) {
    if (history.empty()) throw ConfigError("early_stop: history is empty");
    EarlyStopDecision d;
    double best = history[0];
    d.best_epoch = 1;
    std::size_t since_best = 0;
    for (std::size_t e = 1; e < history.size(); ++e) {
        if (history[e] > best) {
            best = history[e];
            d.best_epoch = e + 1;
            since_best = 0;
        } else {
            ++since_best;
        }
    }
    d.stop = since_best >= patience;
    return d;
}

TrainLoopResult train_loop(Model& model, const SequenceDataset& ds, const TrainConfig& config,
                           const TrainLoopOptions& options) {
    config.validate();
    TrainLoopResult result;

    if (model.config.variant == Variant::pop_rec) {
        model.fit_pop_rec(ds);
        if (!options.checkpoint_path.empty()) {
            model.save_checkpoint(options.checkpoint_path, options.config_echo);
        }
        result.log.push_back({{"epoch", 0}, {"note", "pop_rec: fitted item frequencies"}});
        return result;
    }

    std::vector<TensorPtr> padding_tables{model.item_table};
    for (const auto& fe : model.feature_emb)
        if (fe.table) padding_tables.push_back(fe.table);
    AdamOptimizer optimizer(model.parameters(), padding_tables, config);

    EvalProtocol protocol;
    protocol.top_k = options.valid_top_k;
    protocol.negatives = options.valid_negatives;
    protocol.candidate_seed = options.candidate_seed;
    protocol.split = Split::validation;

    std::vector<double> history;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto stats = train_epoch(model, ds, optimizer, config, epoch);
        const auto valid = evaluate(model, ds, protocol, options.workers);
        history.push_back(valid.ndcg);
        result.log.push_back({{"epoch", epoch},
                              {"train_loss", stats.mean_loss},
                              {"valid", valid.to_json()},
                              {"seconds", stats.seconds}});
        result.epochs_run = epoch;

        const auto decision = early_stop(history, config.patience);
        if (decision.best_epoch == epoch) {  // a fresh validation best
            result.best_epoch = epoch;
            result.best_valid_ndcg = valid.ndcg;
            if (!options.checkpoint_path.empty()) {
                model.save_checkpoint(options.checkpoint_path, options.config_echo);
            }
        }
        if (options.on_epoch && !options.on_epoch(epoch, stats, valid.ndcg)) break;
        if (decision.stop) break;
    }
    if (options.restore_best && !options.checkpoint_path.empty() &&
        std::filesystem::exists(options.checkpoint_path)) {
        model = Model::load_checkpoint(options.checkpoint_path);
    }
    return result;
}

}  // namespace mixrec
