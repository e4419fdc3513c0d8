#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mixrec/model.hpp"

namespace mixrec {

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    double weight_decay = 0.0;  // decoupled; mixer matrices only
    double grad_clip = 0.0;     // global-norm clip, 0 disables
    std::size_t negatives_per_position = 1;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Shifted next-item supervision: target[t] is the item at position t+1;
/// mask is 1 only where positions t and t+1 both hold real training items.
/// Negatives are uniform over items outside the user's full history,
/// resampled every epoch; stored row-major as [neg_slot][position].
struct TrainingBatch {
    std::vector<std::size_t> users;
    std::vector<std::vector<std::int64_t>> inputs;     // per user, length s
    std::vector<std::vector<std::int64_t>> targets;    // per user, length s
    std::vector<std::vector<std::int64_t>> negatives;  // per user, n_neg * s
    std::vector<std::vector<std::uint8_t>> loss_mask;  // per user, length s
};

std::vector<TrainingBatch> build_batches(const SequenceDataset& ds, std::size_t batch_size,
                                         std::size_t negatives_per_position, std::mt19937_64& rng);

struct BceLoss {
    TensorPtr total;        // scalar sum over masked positions (and negatives)
    std::size_t positions;  // masked position count, for the per-position mean
};

/// Binary cross-entropy of Eq.-(4) shape in stable softplus form:
/// -log sigmoid(pos) - sum_j log(1 - sigmoid(neg_j)), masked and summed.
BceLoss bce_loss(GradTape& tape, const TensorPtr& pos_scores,
                 std::span<const TensorPtr> neg_scores, const TensorPtr& mask);

class AdamOptimizer {
public:
    AdamOptimizer(const std::vector<NamedParam>& params, std::vector<TensorPtr> padding_rows,
                  const TrainConfig& config);

    /// Bias-corrected Adam step from the gradients stored on the parameters.
    /// Decoupled weight decay applies to mixer matrices only; padding rows
    /// are re-zeroed afterwards. Non-finite gradients raise NumericError.
    void step();
    void zero_grad();
    std::size_t step_count() const { return t_; }

private:
    struct Moments {
        std::vector<Real> m, v;
    };
    std::vector<NamedParam> params_;
    std::vector<TensorPtr> padding_rows_;
    std::vector<Moments> moments_;
    TrainConfig config_;
    std::size_t t_ = 0;
};

struct EpochStats {
    double mean_loss = 0;  // per supervised position
    double sum_loss = 0;
    std::size_t positions = 0;
    std::size_t batches = 0;
    double seconds = 0;
};

/// One pass of the optimization loop: batches, forward with dropout,
/// Eq.-(4) loss, backward, Adam. Deterministic for a fixed seed and a
/// single worker.
EpochStats train_epoch(const Model& model, const SequenceDataset& ds, AdamOptimizer& optimizer,
                       const TrainConfig& config, std::size_t epoch_index);

struct EarlyStopDecision {
    bool stop = false;
    std::size_t best_epoch = 0;  // 1-based into the history
};

/// Stops once the monitored metric fails to improve for `patience`
/// consecutive epochs; improvement is strict.
EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience);

struct TrainLoopOptions {
    std::size_t valid_top_k = 10;       // early stopping monitors NDCG@top_k
    std::size_t valid_negatives = 100;
    std::uint64_t candidate_seed = 1;
    std::filesystem::path checkpoint_path;  // empty disables checkpointing
    nlohmann::json config_echo;
    std::size_t workers = 1;
    bool restore_best = true;  // reload the best checkpoint after the loop
    /// called after each epoch; return false to stop early (e.g. a probe
    /// already reached its target)
    std::function<bool(std::size_t epoch, const EpochStats&, double valid_metric)> on_epoch;
};

struct TrainLoopResult {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_valid_ndcg = 0;
    std::vector<nlohmann::json> log;  // one entry per epoch
};

/// Algorithm-1-shaped loop: train epochs, track validation NDCG, checkpoint
/// on improvement, stop early after `patience` stale epochs.
TrainLoopResult train_loop(Model& model, const SequenceDataset& ds, const TrainConfig& config,
                           const TrainLoopOptions& options);

}  // namespace mixrec
