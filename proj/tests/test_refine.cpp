#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "seqrec/refine.hpp"
#include "test_helpers.hpp"

using namespace seqrec;

namespace {

AttentionMask full_mask(int n) {
    std::vector<int> ids(n, 1);
    return AttentionMask::causal(ids);
}

RefineParams random_refine(Mechanism mech, int n, Rng& rng) {
    RefineParams p;
    auto mk = [&] { return Tensor::uniform({n, n}, -0.5, 0.5, rng, true); };
    if (mech == Mechanism::stoc) {
        p.WmuR = mk();
        p.WsigmaR = mk();
    } else {
        p.WRQ = mk();
        p.WRK = mk();
        if (mech == Mechanism::value) p.WRV = mk();
    }
    return p;
}

Tensor identity(int n) {
    Tensor t = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
    return t;
}

}  // namespace

TEST_CASE("sanitize_scores zeroes exactly the disallowed entries") {
    Rng rng(3);
    int n = 5;
    std::vector<int> ids = {0, 0, 3, 4, 5};  // two padding positions
    AttentionMask mask = AttentionMask::causal(ids);
    Tensor A = Tensor::uniform({n, n}, -2, 2, rng);
    Tensor S = sanitize_scores(A, mask);
    for (int k = 0; k < n; ++k)
        for (int t = 0; t < n; ++t) {
            if (mask.allowed(k, t))
                CHECK(S.at(k, t) == A.at(k, t));
            else
                CHECK(S.at(k, t) == 0.0);
        }
    // idempotence
    Tensor S2 = sanitize_scores(S, mask);
    for (Index i = 0; i < S.size(); ++i) CHECK(S2.data()[i] == S.data()[i]);

    // fully allowed mask keeps A untouched
    AttentionMask full;
    full.n = n;
    full.valid.assign(n, 1);
    full.allowed = BoolMat::Constant(n, n, true);
    full.softmax_support = full.allowed;
    full.keep_rows = full.allowed;
    Tensor S3 = sanitize_scores(A, full);
    for (Index i = 0; i < A.size(); ++i) CHECK(S3.data()[i] == A.data()[i]);
}

TEST_CASE("refine_simp identity weights give A A^T / sqrt(d)") {
    Rng rng(5);
    int n = 4;
    double sd = std::sqrt(6.0);
    RefineParams p;
    p.WRQ = identity(n);
    p.WRK = identity(n);
    Tensor A = Tensor::uniform({n, n}, -1, 1, rng);
    Tensor B = refine_simp(A, p, sd);
    MatrixRM expect = A.mat() * A.mat().transpose() / sd;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) CHECK(B.at(i, j) == doctest::Approx(expect(i, j)).epsilon(1e-14));

    Tensor Z = Tensor::zeros({n, n});
    Tensor BZ = refine_simp(Z, random_refine(Mechanism::simp, n, rng), sd);
    for (Index i = 0; i < BZ.size(); ++i) CHECK(BZ.data()[i] == 0.0);
}

TEST_CASE("refine_simp matches the loop oracle") {
    Rng rng(7);
    int n = 3;
    double sd = std::sqrt(4.0);
    for (int trial = 0; trial < 50; ++trial) {
        RefineParams p = random_refine(Mechanism::simp, n, rng);
        Tensor A = Tensor::uniform({n, n}, -1.5, 1.5, rng);
        Tensor B = refine_simp(A, p, sd);
        auto expect = oracle::refine_simp(th::to_mat(A), th::to_mat(p.WRQ), th::to_mat(p.WRK), sd);
        CHECK(th::max_abs_diff(B, expect) <= 1e-12);
    }
}

TEST_CASE("refine_value zero input, oracle match, inner softmax normalization") {
    Rng rng(11);
    int n = 3;
    AttentionMask mask = full_mask(n);
    RefineParams p = random_refine(Mechanism::value, n, rng);

    Tensor BZ = refine_value(Tensor::zeros({n, n}), p, mask);
    for (Index i = 0; i < BZ.size(); ++i) CHECK(BZ.data()[i] == 0.0);

    auto support = th::to_bools(mask.softmax_support);
    for (int trial = 0; trial < 50; ++trial) {
        RefineParams q = random_refine(Mechanism::value, n, rng);
        Tensor A = Tensor::uniform({n, n}, -1, 1, rng);
        Tensor B = refine_value(A, q, mask);
        auto expect = oracle::refine_value(th::to_mat(A), th::to_mat(q.WRQ), th::to_mat(q.WRK),
                                           th::to_mat(q.WRV), support);
        CHECK(th::max_abs_diff(B, expect) <= 1e-12);

        // the internal attention over rows of A is row-stochastic on its support
        auto scores = oracle::matmul(oracle::matmul(th::to_mat(A), th::to_mat(q.WRQ)),
                                     oracle::transpose(oracle::matmul(th::to_mat(A), th::to_mat(q.WRK))));
        auto inner = oracle::softmax_rows(scores, support);
        for (size_t i = 0; i < inner.size(); ++i) {
            double s = 0;
            for (double v : inner[i]) s += v;
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("refine_add zero weights halve A and preserve row argmax") {
    Rng rng(13);
    int n = 4;
    double sd = std::sqrt(4.0);
    RefineParams zero;
    zero.WRQ = Tensor::zeros({n, n}, true);
    zero.WRK = Tensor::zeros({n, n}, true);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor A = Tensor::uniform({n, n}, -3, 3, rng);
        Tensor B = refine_add(A, zero, sd);
        for (int i = 0; i < n; ++i) {
            Index arg_a = 0, arg_b = 0;
            for (int j = 0; j < n; ++j) {
                CHECK(B.at(i, j) == doctest::Approx(A.at(i, j) / 2).epsilon(1e-15));
                if (A.at(i, j) > A.at(i, arg_a)) arg_a = j;
                if (B.at(i, j) > B.at(i, arg_b)) arg_b = j;
            }
            CHECK(arg_a == arg_b);
        }
    }

    Tensor BZ = refine_add(Tensor::zeros({n, n}), zero, sd);
    for (Index i = 0; i < BZ.size(); ++i) CHECK(BZ.data()[i] == 0.0);
}

TEST_CASE("refine_add matches the loop oracle") {
    Rng rng(17);
    int n = 4;
    double sd = std::sqrt(8.0);
    for (int trial = 0; trial < 50; ++trial) {
        RefineParams p = random_refine(Mechanism::add, n, rng);
        Tensor A = Tensor::uniform({n, n}, -1, 1, rng);
        auto expect = oracle::refine_add(th::to_mat(A), th::to_mat(p.WRQ), th::to_mat(p.WRK), sd);
        CHECK(th::max_abs_diff(refine_add(A, p, sd), expect) <= 1e-12);
    }
}

TEST_CASE("refine_stoc metric structure and oracle match") {
    Rng rng(19);
    int n = 3;
    RefineParams p = random_refine(Mechanism::stoc, n, rng);

    // identical rows of A -> all refined distributions equal -> B = 0
    Tensor A = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A.mutable_data()[i * n + j] = 0.3 * j - 0.1;
    Tensor B = refine_stoc(A, p);
    for (Index i = 0; i < B.size(); ++i) CHECK(B.data()[i] == 0.0);

    for (int trial = 0; trial < 50; ++trial) {
        RefineParams q = random_refine(Mechanism::stoc, n, rng);
        Tensor A2 = Tensor::uniform({n, n}, -1, 1, rng);
        Tensor B2 = refine_stoc(A2, q);
        // symmetric with zero diagonal
        for (int i = 0; i < n; ++i) {
            CHECK(B2.at(i, i) == 0.0);
            for (int j = 0; j < n; ++j) CHECK(B2.at(i, j) == B2.at(j, i));
        }
        auto expect = oracle::refine_stoc(th::to_mat(A2), th::to_mat(q.WmuR), th::to_mat(q.WsigmaR));
        CHECK(th::max_abs_diff(B2, expect) <= 1e-12);
    }
}

TEST_CASE("refine gradients match finite differences") {
    Rng rng(23);
    int n = 4;
    AttentionMask mask = full_mask(n);
    double sd = std::sqrt(4.0);
    Tensor R = Tensor::uniform({n, n}, -1, 1, rng, false);

    for (Mechanism mech : {Mechanism::simp, Mechanism::value, Mechanism::add, Mechanism::stoc}) {
        CAPTURE(to_string(mech));
        RefineParams p = random_refine(mech, n, rng);
        Tensor A = Tensor::uniform({n, n}, -1, 1, rng, true);
        std::vector<Tensor> params = {A};
        if (mech == Mechanism::stoc) {
            params.push_back(p.WmuR);
            params.push_back(p.WsigmaR);
        } else {
            params.push_back(p.WRQ);
            params.push_back(p.WRK);
            if (mech == Mechanism::value) params.push_back(p.WRV);
        }
        auto loss = [&] {
            Tensor B;
            switch (mech) {
                case Mechanism::simp: B = refine_simp(A, p, sd); break;
                case Mechanism::value: B = refine_value(A, p, mask); break;
                case Mechanism::add: B = refine_add(A, p, sd); break;
                default: B = refine_stoc(A, p); break;
            }
            return sum_all(mul(B, R));
        };
        auto rep = fd::check(params, loss, 1e-5, 1e-4, 1e-4);
        CHECK(rep.max_rel <= 1e-4);
    }
}

TEST_CASE("pipeline with mechanism none equals the raw masked softmax") {
    Rng rng(29);
    int n = 5;
    std::vector<int> ids = {0, 2, 3, 4, 5};
    AttentionMask mask = AttentionMask::causal(ids);
    ModelConfig cfg = th::tiny_config(Backbone::dot_product, Mechanism::none);
    Tensor A = Tensor::uniform({n, n}, -1, 1, rng);
    PipelineValues vals;
    vals.V = Tensor::uniform({n, 3}, -1, 1, rng);
    PipelineResult res = refinement_pipeline(A, mask, cfg, nullptr, vals);

    auto w_oracle = th::to_mat(res.weights);
    // reference: softmax over allowed entries, zero rows for padding
    for (int k = 0; k < n; ++k) {
        if (!ids[k]) {
            for (int t = 0; t < n; ++t) CHECK(res.weights.at(k, t) == 0.0);
            continue;
        }
        double mx = -1e300, denom = 0;
        for (int t = 0; t < n; ++t)
            if (mask.allowed(k, t)) mx = std::max(mx, A.at(k, t));
        for (int t = 0; t < n; ++t)
            if (mask.allowed(k, t)) denom += std::exp(A.at(k, t) - mx);
        for (int t = 0; t < n; ++t) {
            double expect = mask.allowed(k, t) ? std::exp(A.at(k, t) - mx) / denom : 0.0;
            CHECK(std::abs(res.weights.at(k, t) - expect) <= 1e-12);
        }
    }
    (void)w_oracle;
}

TEST_CASE("pipeline weight contracts hold for every mechanism") {
    Rng rng(31);
    int n = 6;
    std::vector<int> ids = {0, 0, 7, 8, 9, 10};
    AttentionMask mask = AttentionMask::causal(ids);
    for (Mechanism mech :
         {Mechanism::none, Mechanism::simp, Mechanism::value, Mechanism::add, Mechanism::stoc}) {
        CAPTURE(to_string(mech));
        ModelConfig cfg = th::tiny_config(
            mech == Mechanism::stoc ? Backbone::stochastic : Backbone::dot_product, mech, 4, n);
        RefineParams p = random_refine(mech, n, rng);
        Tensor A = Tensor::uniform({n, n}, -1, 1, rng);
        PipelineValues vals;
        if (cfg.backbone == Backbone::dot_product) {
            vals.V = Tensor::uniform({n, 4}, -1, 1, rng);
        } else {
            vals.V_mu = Tensor::uniform({n, 4}, -1, 1, rng);
            vals.V_cov = elu_plus_one(Tensor::uniform({n, 4}, -1, 1, rng));
        }
        PipelineResult res = refinement_pipeline(A, mask, cfg, &p, vals);
        for (int k = 0; k < n; ++k) {
            double sum = 0;
            for (int t = 0; t < n; ++t) {
                if (!mask.allowed(k, t)) CHECK(res.weights.at(k, t) == 0.0);
                CHECK(res.weights.at(k, t) >= 0.0);
                sum += res.weights.at(k, t);
            }
            if (ids[k]) CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            else CHECK(sum == 0.0);
        }
    }
}

TEST_CASE("pipeline rejects stoc mechanism on the dot backbone") {
    ModelConfig cfg = th::tiny_config(Backbone::dot_product, Mechanism::stoc);
    Rng rng(37);
    AttentionMask mask = full_mask(4);
    RefineParams p = random_refine(Mechanism::stoc, 4, rng);
    PipelineValues vals;
    vals.V = Tensor::zeros({4, 4});
    CHECK_THROWS_AS(refinement_pipeline(Tensor::zeros({4, 4}), mask, cfg, &p, vals), UserError);
}

TEST_CASE("refine_scale switch picks sqrt(d) or sqrt(n)") {
    ModelConfig cfg = th::tiny_config(Backbone::dot_product, Mechanism::simp, 16, 9);
    CHECK(refine_scale_divisor(cfg) == doctest::Approx(4.0));  // sqrt(d), the default
    cfg.refine_scale = RefineScale::sqrt_n;
    CHECK(refine_scale_divisor(cfg) == doctest::Approx(3.0));  // sqrt(n)

    // the pipeline actually applies the configured divisor
    Rng rng(71);
    int n = 9;
    AttentionMask mask = full_mask(n);
    RefineParams p = random_refine(Mechanism::simp, n, rng);
    Tensor A = Tensor::uniform({n, n}, -1, 1, rng);
    PipelineValues vals;
    vals.V = Tensor::uniform({n, 4}, -1, 1, rng);
    ModelConfig cfg_d = cfg;
    cfg_d.refine_scale = RefineScale::sqrt_d;
    Tensor B_n = refinement_pipeline(A, mask, cfg, &p, vals).B;
    Tensor B_d = refinement_pipeline(A, mask, cfg_d, &p, vals).B;
    for (Index i = 0; i < B_n.size(); ++i)
        CHECK(B_n.data()[i] == doctest::Approx(B_d.data()[i] * 4.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("refinement parameter accounting") {
    auto count = [](Mechanism mech, int n, int layers, int heads) {
        ModelConfig cfg = th::tiny_config(Backbone::stochastic, mech, 8, n, heads, layers);
        return refinement_parameter_count(cfg);
    };
    CHECK(count(Mechanism::simp, 20, 1, 1) == 800);
    CHECK(count(Mechanism::add, 20, 1, 1) == 800);
    CHECK(count(Mechanism::stoc, 20, 1, 1) == 800);
    CHECK(count(Mechanism::value, 20, 1, 1) == 1200);
    CHECK(count(Mechanism::none, 20, 1, 1) == 0);
    CHECK(count(Mechanism::value, 20, 2, 2) == 4800);

    // registered refinement tensors in a real model agree with the formula
    for (Mechanism mech : {Mechanism::none, Mechanism::simp, Mechanism::value, Mechanism::add}) {
        ModelConfig cfg = th::tiny_config(Backbone::dot_product, mech, 8, 6, 2, 2);
        Model m = build_model(cfg, 30);
        long long actual = 0;
        for (const auto& p : m.parameters)
            if (p.name.find(".refine.") != std::string::npos) actual += p.tensor.size();
        CHECK(actual == refinement_parameter_count(cfg));
    }
}
