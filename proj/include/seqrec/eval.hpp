#pragma once

#include <map>

#include "seqrec/backbone.hpp"
#include "seqrec/data.hpp"

namespace seqrec {

/// 1-based rank of the target among candidate scores; ties break against the
/// target: rank = 1 + #strictly-higher + #equal-others.
int rank_target(const Eigen::VectorXd& scores, Eigen::Index target_index);

/// recall@N = fraction of ranks <= N; ndcg@N = mean of 1/log2(rank+1) over
/// ranks <= N (single-target protocol, ideal DCG = 1). Requires N >= 1.
std::pair<double, double> metrics_at(const std::vector<int>& ranks, int N);

enum class EvalTarget { valid, test };

struct MetricsReport {
    struct PerN {
        double recall = 0;
        double ndcg = 0;
    };
    std::map<int, PerN> at;
    int num_users_evaluated = 0;
    std::string ranking_mode;

    std::string to_json_string() const;
    std::string format_table() const;
};

/// Leave-one-out evaluation. Each user's history (train items, plus the
/// validation item when targeting test) is encoded and the held-out target is
/// ranked at the last position. Full mode ranks against the whole vocabulary
/// minus the user's train items (target always kept); sampled mode ranks
/// against k uniformly sampled non-train negatives plus the target.
MetricsReport evaluate(const Model& m, const SplitDataset& split, EvalTarget target,
                       const std::vector<int>& Ns, const EvalMode& mode, uint64_t sample_seed = 0);

}  // namespace seqrec
