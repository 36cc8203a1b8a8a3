#pragma once

#include <functional>
#include <limits>

#include "seqrec/backbone.hpp"
#include "seqrec/data.hpp"

namespace seqrec {

/// Sampled binary cross-entropy over live positions:
///   -sum[log sigmoid(pos) + sum_j log(1 - sigmoid(neg_j))] / #live
/// pos_scores[b] and neg_scores[b][j] are [n x 1] score columns; mask[b][t]
/// marks positions that carry a loss. All positions masked is a contract
/// error.
Tensor bce_loss(const std::vector<Tensor>& pos_scores, const std::vector<std::vector<Tensor>>& neg_scores,
                const std::vector<std::vector<uint8_t>>& mask);

/// L2 norm of the concatenation of all parameter gradients (missing grad
/// buffers count as zero).
double global_grad_norm(const std::vector<Parameter>& params);

/// Positive/negative position scores for one encoded training row: dot
/// products against target embeddings, or negative W2 against target
/// distributions. negatives[t] lists the sampled ids per position.
struct SeqScores {
    Tensor pos;                // [n x 1]
    std::vector<Tensor> negs;  // one [n x 1] column per negative sample
};
SeqScores score_training_positions(const Model& m, const EncodeResult& enc,
                                   const std::vector<int>& targets,
                                   const std::vector<std::vector<int>>& negatives);

/// Adam with bias correction. l2_weight enters the gradient before the
/// moment updates (loss-side penalty, not decoupled decay). A non-finite
/// gradient aborts with the parameter's name.
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<Parameter>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8, double l2_weight = 0.0);

    void zero_grad();
    void step();
    int64_t steps() const { return t_; }

    std::string state_to_json() const;
    void state_from_json(const std::string& text);

  private:
    std::vector<Parameter>* params_;
    double lr_, beta1_, beta2_, eps_, l2_;
    int64_t t_ = 0;
    std::vector<Eigen::ArrayXd> m_, v_;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double valid_ndcg5 = 0;
    double grad_norm = 0;  // mean global gradient norm over the epoch's steps
    double seconds = 0;
};

struct TrainState {
    int epoch = 0;  // completed epochs, 1-based history
    double best_valid_ndcg5 = -std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int epochs_since_improvement = 0;
    std::vector<EpochRecord> history;

    bool stopped(int patience, int max_epochs) const {
        return epochs_since_improvement >= patience || epoch >= max_epochs;
    }
};

struct FitHooks {
    /// Replaces the validation NDCG@5 evaluation (used by early-stopping tests).
    std::function<double(int epoch, const Model&)> valid_metric;
    /// Called after backward and before the optimizer step.
    std::function<void(Model&)> post_backward;
    /// Called at the end of every epoch (after bookkeeping).
    std::function<void(int epoch, const Model&, const TrainState&)> on_epoch_end;
};

struct FitResult {
    Model model;  // parameters of the best validation epoch
    TrainState state;
};

/// Full training loop: per epoch shuffle users, step Adam over batches,
/// evaluate validation NDCG@5, keep the best snapshot, stop after `patience`
/// epochs without strict improvement or at max_epochs. When cfg.run_dir is
/// set, writes train_log.jsonl, checkpoint_best/last.json and state.json
/// there and resumes from them if present.
FitResult fit(const RunConfig& cfg, const SequenceDataset& ds, const FitHooks& hooks = {});

std::string epoch_record_to_json(const EpochRecord& r);

}  // namespace seqrec
