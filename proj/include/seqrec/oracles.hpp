#pragma once

// Naive loop reference implementations, deliberately independent of the
// tensor library: plain std::vector math, no Eigen, no tape. The acceptance
// suite and unit tests compare the production path against these.

#include <cstddef>
#include <vector>

namespace seqrec::oracle {

using Mat = std::vector<std::vector<double>>;  // row-major dense

Mat zeros(size_t r, size_t c);
Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);

/// Row softmax with max subtraction; allowed empty means no mask.
Mat softmax_rows(const Mat& x, const std::vector<std::vector<bool>>& allowed = {});

double elu_plus_one(double x);

/// W2 between diagonal Gaussians, elementwise loops.
double wasserstein2(const std::vector<double>& mu1, const std::vector<double>& var1,
                    const std::vector<double>& mu2, const std::vector<double>& var2);

/// A[k][t] = (H WQ)_k . (H WK)_t / sqrt(d_head), all products by loops.
Mat dot_scores(const Mat& H, const Mat& WQ, const Mat& WK);

/// A[k][t] = -W2(query dist k, key dist t); covariance maps pass through
/// elu_plus_one after the linear projection.
Mat stochastic_scores(const Mat& mean, const Mat& cov_raw, const Mat& WQ_mu, const Mat& WK_mu,
                      const Mat& WQ_cov, const Mat& WK_cov);

Mat refine_simp(const Mat& A, const Mat& WRQ, const Mat& WRK, double scale_div);
Mat refine_add(const Mat& A, const Mat& WRQ, const Mat& WRK, double scale_div);
/// Row-space attention over A with a causally masked inner softmax.
Mat refine_value(const Mat& A, const Mat& WRQ, const Mat& WRK, const Mat& WRV,
                 const std::vector<std::vector<bool>>& support);
Mat refine_stoc(const Mat& A, const Mat& WmuR, const Mat& WsigmaR);

/// Masked scaled-dot-product attention exactly as the classic formulation:
/// softmax over allowed entries of (H WQ)(H WK)^T / sqrt(d_head), rows without
/// support all zero, times H WV.
Mat reference_dot_attention(const Mat& H, const Mat& WQ, const Mat& WK, const Mat& WV,
                            const std::vector<std::vector<bool>>& allowed);

/// Same masking/softmax applied to negative-W2 scores; returns aggregated
/// means and (positive) covariances.
void reference_stoch_attention(const Mat& mean, const Mat& cov_raw, const Mat& WQ_mu, const Mat& WK_mu,
                               const Mat& WV_mu, const Mat& WQ_cov, const Mat& WK_cov, const Mat& WV_cov,
                               const std::vector<std::vector<bool>>& allowed, Mat& out_mu, Mat& out_cov);

/// Sort-based rank of `target_idx` with pessimistic ties.
int rank_of(const std::vector<double>& scores, size_t target_idx);

void metrics_at(const std::vector<int>& ranks, int N, double& recall, double& ndcg);

}  // namespace seqrec::oracle
