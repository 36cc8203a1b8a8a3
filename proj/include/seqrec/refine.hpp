#pragma once

#include "seqrec/backbone.hpp"
#include "seqrec/config.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

/// Zero every disallowed (future or padding) entry of a raw score matrix so
/// the refinement matmuls cannot mix masked values in. Idempotent.
Tensor sanitize_scores(const Tensor& A_raw, const AttentionMask& mask);

/// B = (A WRQ)(A WRK)^T / scale_div.
Tensor refine_simp(const Tensor& A, const RefineParams& p, double scale_div);

/// Attention over the rows of A: B = softmax(causal((A WRQ)(A WRK)^T)) (A WRV).
/// The inner softmax is masked with the same causal support as the outer
/// pipeline; without it the row mixing would leak future positions.
Tensor refine_value(const Tensor& A, const RefineParams& p, const AttentionMask& mask);

/// B = ((A WRQ)(A WRK)^T / scale_div + A) / 2.
Tensor refine_add(const Tensor& A, const RefineParams& p, double scale_div);

/// Rows of A become diagonal Gaussians N(A_k WmuR, elu_plus_one(A_k WsigmaR));
/// B[k][t] = -W2 between the distributions of rows k and t. Symmetric with a
/// zero diagonal.
Tensor refine_stoc(const Tensor& A, const RefineParams& p);

/// Value tensors for one head: dot backbone fills V; stochastic fills V_mu
/// and V_cov (V_cov already strictly positive).
struct PipelineValues {
    Tensor V;
    Tensor V_mu, V_cov;
};

struct PipelineResult {
    Tensor A;        // sanitized scores (raw scores for mechanism none)
    Tensor B;        // refined scores; undefined for mechanism none
    Tensor weights;  // final row-stochastic weights, exact zeros off-support
    Tensor out;      // dot backbone aggregation
    Tensor out_mu, out_cov;  // stochastic aggregation
};

/// mechanism none: weights = masked softmax of the raw scores. Otherwise:
/// sanitize, refine, re-mask, softmax. Values are aggregated with the final
/// weights either way. Padding rows of `weights` are exactly zero.
PipelineResult refinement_pipeline(const Tensor& A_raw, const AttentionMask& mask, const ModelConfig& cfg,
                                   const RefineParams* rp, const PipelineValues& values);

/// Exact number of refinement parameters added by the configured mechanism:
/// layers * heads * {0, 2n^2, 3n^2, 2n^2, 2n^2} for none/simp/value/add/stoc.
long long refinement_parameter_count(const ModelConfig& cfg);

/// Scale divisor used by simp/add: sqrt(d) by default, sqrt(n) as ablation.
double refine_scale_divisor(const ModelConfig& cfg);

}  // namespace seqrec
