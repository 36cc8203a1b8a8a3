#include "seqrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace seqrec {

int rank_target(const Eigen::VectorXd& scores, Eigen::Index target_index) {
    if (target_index < 0 || target_index >= scores.size())
        throw ContractError("rank_target: target missing from candidates");
    double ts = scores[target_index];
    int rank = 1;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        if (i == target_index) continue;
        if (scores[i] >= ts) ++rank;  // pessimistic: ties count against the target
    }
    return rank;
}

std::pair<double, double> metrics_at(const std::vector<int>& ranks, int N) {
    if (N < 1) throw ContractError("metrics_at: N must be >= 1");
    for (int r : ranks)
        if (r < 1) throw ContractError("metrics_at: ranks are 1-based");
    if (ranks.empty()) return {0.0, 0.0};
    double hits = 0, gain = 0;
    for (int r : ranks) {
        if (r <= N) {
            hits += 1.0;
            gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
        }
    }
    double m = static_cast<double>(ranks.size());
    return {hits / m, gain / m};
}

MetricsReport evaluate(const Model& m, const SplitDataset& split, EvalTarget target,
                       const std::vector<int>& Ns, const EvalMode& mode, uint64_t sample_seed) {
    NoGradGuard ng;
    Rng rng(sample_seed);
    std::vector<int> ranks;
    ranks.reserve(split.users.size());

    for (const auto& us : split.users) {
        std::vector<int> history = us.train;
        int tgt = us.valid_target;
        if (target == EvalTarget::test) {
            history.push_back(us.valid_target);
            tgt = us.test_target;
        }
        if (static_cast<int>(history.size()) > m.config.n)
            history.erase(history.begin(), history.end() - m.config.n);
        EncodeResult enc = encode(m, history, /*train_mode=*/false);

        std::unordered_set<int> train_items(us.train.begin(), us.train.end());
        std::vector<int> candidates;
        int target_idx = -1;
        if (mode.full) {
            candidates.reserve(m.num_items);
            for (int v = 1; v <= m.num_items; ++v)
                if (v == tgt || !train_items.count(v)) {
                    if (v == tgt) target_idx = static_cast<int>(candidates.size());
                    candidates.push_back(v);
                }
        } else {
            candidates.push_back(tgt);
            target_idx = 0;
            int available = 0;  // negatives that are neither the target nor train items
            for (int v = 1; v <= m.num_items; ++v)
                if (v != tgt && !train_items.count(v)) ++available;
            int want = std::min(mode.sampled, available);
            std::unordered_set<int> chosen{tgt};
            while (static_cast<int>(candidates.size()) < want + 1) {
                int v = 1 + static_cast<int>(rng.uniform_int(m.num_items));
                if (chosen.count(v) || train_items.count(v)) continue;
                chosen.insert(v);
                candidates.push_back(v);
            }
        }
        Eigen::VectorXd scores = score_items(m, enc, m.config.n - 1, candidates);
        ranks.push_back(rank_target(scores, target_idx));
    }

    MetricsReport report;
    report.num_users_evaluated = static_cast<int>(ranks.size());
    report.ranking_mode = mode.str();
    for (int N : Ns) {
        auto [recall, ndcg] = metrics_at(ranks, N);
        report.at[N] = {recall, ndcg};
    }
    return report;
}

std::string MetricsReport::to_json_string() const {
    nlohmann::json j;
    j["num_users_evaluated"] = num_users_evaluated;
    j["ranking_mode"] = ranking_mode;
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [N, v] : at)
        metrics[std::to_string(N)] = {{"recall", v.recall}, {"ndcg", v.ndcg}};
    j["metrics"] = metrics;
    return j.dump(2) + "\n";
}

std::string MetricsReport::format_table() const {
    std::ostringstream os;
    os << "N\tRecall@N\tNDCG@N\n";
    os.setf(std::ios::fixed);
    os.precision(4);
    for (const auto& [N, v] : at) os << N << "\t" << v.recall << "\t" << v.ndcg << "\n";
    os << "users=" << num_users_evaluated << " mode=" << ranking_mode << "\n";
    return os.str();
}

}  // namespace seqrec
