#include <doctest.h>

#include <cmath>
#include <unordered_set>

#include "seqrec/eval.hpp"
#include "seqrec/train.hpp"
#include "test_helpers.hpp"

using namespace seqrec;

TEST_CASE("rank_target tie rules and sort oracle") {
    Eigen::VectorXd s(4);
    s << 0.1, 0.9, 0.3, 0.2;
    CHECK(rank_target(s, 1) == 1);  // unique max

    Eigen::VectorXd tied(3);
    tied << 0.9, 0.9, 0.1;
    CHECK(rank_target(tied, 0) == 2);  // tie breaks against the target

    CHECK_THROWS_AS(rank_target(s, 7), ContractError);

    Rng rng(83);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 2 + static_cast<int>(rng.uniform_int(30));
        std::vector<double> v(n);
        for (double& x : v) x = rng.uniform_int(6) * 0.25;  // force ties
        Eigen::VectorXd scores = Eigen::Map<Eigen::VectorXd>(v.data(), n);
        size_t target = rng.uniform_int(n);
        CHECK(rank_target(scores, static_cast<Eigen::Index>(target)) ==
              oracle::rank_of(v, target));
    }
}

TEST_CASE("metrics_at closed forms") {
    auto [r1, n1] = metrics_at({1, 1, 1}, 5);
    CHECK(r1 == 1.0);
    CHECK(n1 == 1.0);

    auto [r2, n2] = metrics_at({2}, 5);
    CHECK(n2 == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
    CHECK(n2 == doctest::Approx(0.6309).epsilon(1e-4));

    // ranks [1,3,10] at N=5: recall exactly 2/3, ndcg exactly (1 + 1/2)/3
    auto [r3, n3] = metrics_at({1, 3, 10}, 5);
    CHECK(r3 == 2.0 / 3.0);
    CHECK(n3 == 0.5);

    CHECK_THROWS_AS(metrics_at({1}, 0), ContractError);
    CHECK_THROWS_AS(metrics_at({0}, 3), ContractError);
}

TEST_CASE("metrics_at properties: monotonicity and recall@1 == ndcg@1") {
    Rng rng(89);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> ranks;
        int users = 1 + static_cast<int>(rng.uniform_int(40));
        for (int u = 0; u < users; ++u) ranks.push_back(1 + static_cast<int>(rng.uniform_int(50)));
        auto [r1, n1] = metrics_at(ranks, 1);
        CHECK(r1 == n1);
        double prev_r = 0, prev_n = 0;
        for (int N : {1, 2, 5, 10, 20, 50}) {
            auto [r, n] = metrics_at(ranks, N);
            CHECK(r >= prev_r);
            CHECK(n >= prev_n);
            CHECK(n <= 1.0);
            CHECK((n > 0) == (r > 0));
            prev_r = r;
            prev_n = n;
            // against the independent oracle
            double orr, orn;
            oracle::metrics_at(ranks, N, orr, orn);
            CHECK(r == doctest::Approx(orr).epsilon(1e-15));
            CHECK(n == doctest::Approx(orn).epsilon(1e-15));
        }
    }
}

namespace {

SequenceDataset synth_ds(int users, int items, int len, double strength, uint64_t seed, int n) {
    return build_sequences(five_core_filter(generate_synthetic(users, items, len, strength, seed), 1), n);
}

}  // namespace

TEST_CASE("evaluate agrees with a manual per-user walk") {
    SequenceDataset ds = synth_ds(25, 30, 9, 0.5, 23, 8);
    SplitDataset split = leave_one_out_split(ds);
    Model m = build_model(th::tiny_config(Backbone::dot_product, Mechanism::none, 8, 8, 1, 1, 7),
                          ds.num_items());

    for (EvalTarget tgt : {EvalTarget::valid, EvalTarget::test}) {
        MetricsReport rep = evaluate(m, split, tgt, {1, 5, 10}, EvalMode{});
        std::vector<int> ranks;
        for (const auto& us : split.users) {
            std::vector<int> history = us.train;
            int target = us.valid_target;
            if (tgt == EvalTarget::test) {
                history.push_back(us.valid_target);
                target = us.test_target;
            }
            if (static_cast<int>(history.size()) > m.config.n)
                history.erase(history.begin(), history.end() - m.config.n);
            EncodeResult enc = encode(m, history, false);
            std::unordered_set<int> train_items(us.train.begin(), us.train.end());
            std::vector<int> cands;
            int tidx = -1;
            for (int v = 1; v <= ds.num_items(); ++v) {
                if (v != target && train_items.count(v)) continue;
                if (v == target) tidx = static_cast<int>(cands.size());
                cands.push_back(v);
            }
            Eigen::VectorXd scores = score_items(m, enc, m.config.n - 1, cands);
            ranks.push_back(rank_target(scores, tidx));
        }
        for (int N : {1, 5, 10}) {
            auto [r, n] = metrics_at(ranks, N);
            CHECK(rep.at.at(N).recall == r);
            CHECK(rep.at.at(N).ndcg == n);
        }
        CHECK(rep.num_users_evaluated == static_cast<int>(split.users.size()));
    }
}

TEST_CASE("evaluate on an untrained model matches the chance rate") {
    // targets are uniform, so recall@1 over many users concentrates at 1/|V|
    SequenceDataset ds = synth_ds(2000, 100, 8, 0.0, 31, 8);
    SplitDataset split = leave_one_out_split(ds);
    Model m = build_model(th::tiny_config(Backbone::dot_product, Mechanism::none, 8, 8, 1, 1, 11),
                          ds.num_items());
    MetricsReport rep = evaluate(m, split, EvalTarget::test, {1}, EvalMode{});
    CHECK(rep.at.at(1).recall == doctest::Approx(0.01).epsilon(0.5));  // 0.01 +/- 0.005
}

TEST_CASE("evaluate never mutates the model") {
    SequenceDataset ds = synth_ds(20, 25, 8, 0.5, 37, 8);
    SplitDataset split = leave_one_out_split(ds);
    Model m = build_model(th::tiny_config(Backbone::stochastic, Mechanism::stoc, 4, 8, 1, 1, 13),
                          ds.num_items());
    uint64_t before = m.values_checksum();
    evaluate(m, split, EvalTarget::test, {1, 5}, EvalMode{});
    EvalMode sampled;
    sampled.full = false;
    sampled.sampled = 10;
    evaluate(m, split, EvalTarget::valid, {5}, sampled, 99);
    CHECK(m.values_checksum() == before);
}

TEST_CASE("sampled mode copes with users who interacted with most of the vocabulary") {
    SequenceDataset ds;
    ds.max_len = 30;
    ds.users = {"u"};
    for (int v = 1; v <= 25; ++v) ds.items.push_back("i" + std::to_string(v));
    std::vector<int> seq;
    for (int v = 1; v <= 23; ++v) seq.push_back(v);  // train covers items 1..21
    ds.sequences = {seq};
    SplitDataset split = leave_one_out_split(ds);
    Model m = build_model(th::tiny_config(Backbone::dot_product, Mechanism::none, 4, 30), 25);
    EvalMode sampled;
    sampled.full = false;
    sampled.sampled = 100;  // far more than the 4 available negatives
    MetricsReport rep = evaluate(m, split, EvalTarget::test, {5}, sampled, 3);
    CHECK(rep.num_users_evaluated == 1);
    CHECK(rep.at.at(5).recall <= 1.0);
}

TEST_CASE("sampled and full modes agree on model ordering") {
    SequenceDataset ds = synth_ds(120, 40, 12, 0.9, 41, 10);
    SplitDataset split = leave_one_out_split(ds);

    RunConfig cfg;
    cfg.model = th::tiny_config(Backbone::dot_product, Mechanism::none, 16, 10, 1, 1, 3);
    cfg.model.learning_rate = 1e-2;
    cfg.batch_size = 32;
    cfg.max_epochs = 20;
    cfg.patience = 20;
    Model trained = fit(cfg, ds).model;
    Model untrained = build_model(cfg.model, ds.num_items());

    EvalMode sampled;
    sampled.full = false;
    sampled.sampled = 25;

    double full_a = evaluate(trained, split, EvalTarget::test, {5}, EvalMode{}).at.at(5).ndcg;
    double full_b = evaluate(untrained, split, EvalTarget::test, {5}, EvalMode{}).at.at(5).ndcg;
    double samp_a = evaluate(trained, split, EvalTarget::test, {5}, sampled, 7).at.at(5).ndcg;
    double samp_b = evaluate(untrained, split, EvalTarget::test, {5}, sampled, 7).at.at(5).ndcg;
    CHECK(full_a > full_b);
    CHECK(samp_a > samp_b);

    MetricsReport rep = evaluate(trained, split, EvalTarget::test, {1, 5}, sampled, 7);
    CHECK(rep.ranking_mode == "sampled:25");
    CHECK(rep.to_json_string().find("\"ranking_mode\"") != std::string::npos);
    CHECK(rep.format_table().find("Recall@N") != std::string::npos);
}
