#include "seqrec/refine.hpp"

#include <cmath>

namespace seqrec {

Tensor sanitize_scores(const Tensor& A_raw, const AttentionMask& mask) {
    return mask_mul(A_raw, mask.allowed);
}

Tensor refine_simp(const Tensor& A, const RefineParams& p, double scale_div) {
    Tensor q = matmul(A, p.WRQ);
    Tensor k = matmul(A, p.WRK);
    return scale(matmul(q, transpose(k)), 1.0 / scale_div);
}

Tensor refine_value(const Tensor& A, const RefineParams& p, const AttentionMask& mask) {
    Tensor q = matmul(A, p.WRQ);
    Tensor k = matmul(A, p.WRK);
    Tensor v = matmul(A, p.WRV);
    Tensor scores = matmul(q, transpose(k));
    Tensor inner = softmax_rows(scores, &mask.softmax_support);
    return matmul(inner, v);
}

Tensor refine_add(const Tensor& A, const RefineParams& p, double scale_div) {
    return scale(add(refine_simp(A, p, scale_div), A), 0.5);
}

Tensor refine_stoc(const Tensor& A, const RefineParams& p) {
    Tensor mu = matmul(A, p.WmuR);
    Tensor var = elu_plus_one(matmul(A, p.WsigmaR));
    return scale(pairwise_w2(mu, var, mu, var), -1.0);
}

double refine_scale_divisor(const ModelConfig& cfg) {
    return std::sqrt(static_cast<double>(cfg.refine_scale == RefineScale::sqrt_d ? cfg.d : cfg.n));
}

PipelineResult refinement_pipeline(const Tensor& A_raw, const AttentionMask& mask, const ModelConfig& cfg,
                                   const RefineParams* rp, const PipelineValues& values) {
    if (cfg.mechanism == Mechanism::stoc && cfg.backbone != Backbone::stochastic)
        throw UserError("refinement_pipeline: mechanism 'stoc' requires the stochastic backbone");
    if (cfg.mechanism != Mechanism::none && rp == nullptr)
        throw ContractError("refinement_pipeline: refinement parameters missing");

    PipelineResult res;
    Tensor pre_softmax;
    if (cfg.mechanism == Mechanism::none) {
        res.A = A_raw;
        pre_softmax = A_raw;
    } else {
        res.A = sanitize_scores(A_raw, mask);
        switch (cfg.mechanism) {
            case Mechanism::simp: res.B = refine_simp(res.A, *rp, refine_scale_divisor(cfg)); break;
            case Mechanism::value: res.B = refine_value(res.A, *rp, mask); break;
            case Mechanism::add: res.B = refine_add(res.A, *rp, refine_scale_divisor(cfg)); break;
            case Mechanism::stoc: res.B = refine_stoc(res.A, *rp); break;
            case Mechanism::none: break;
        }
        pre_softmax = res.B;
    }

    // Masked softmax over the allowed support; padding rows are then zeroed
    // so disallowed entries of the final weights are exact zeros.
    Tensor weights = softmax_rows(pre_softmax, &mask.softmax_support);
    res.weights = mask_mul(weights, mask.keep_rows);

    if (values.V.defined()) res.out = matmul(res.weights, values.V);
    if (values.V_mu.defined()) {
        res.out_mu = matmul(res.weights, values.V_mu);
        res.out_cov = matmul(res.weights, values.V_cov);
        // Convex combination of strictly positive diagonals stays positive on
        // real rows; padding rows are zero by construction.
        for (int k = 0; k < mask.n; ++k) {
            if (!mask.valid[k]) continue;
            for (Index j = 0; j < res.out_cov.cols(); ++j)
                if (res.out_cov.at(k, j) <= 0.0)
                    throw ContractError("refinement_pipeline: aggregated covariance not positive at row " +
                                        std::to_string(k));
        }
    }
    return res;
}

long long refinement_parameter_count(const ModelConfig& cfg) {
    long long per_head;
    switch (cfg.mechanism) {
        case Mechanism::none: per_head = 0; break;
        case Mechanism::value: per_head = 3LL * cfg.n * cfg.n; break;
        default: per_head = 2LL * cfg.n * cfg.n; break;
    }
    return static_cast<long long>(cfg.layers) * cfg.heads * per_head;
}

}  // namespace seqrec
