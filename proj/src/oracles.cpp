#include "seqrec/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace seqrec::oracle {

Mat zeros(size_t r, size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

Mat matmul(const Mat& a, const Mat& b) {
    size_t m = a.size(), k = a[0].size(), p = b[0].size();
    if (b.size() != k) throw std::invalid_argument("oracle matmul: inner dims");
    Mat c = zeros(m, p);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < p; ++j) {
            double s = 0;
            for (size_t t = 0; t < k; ++t) s += a[i][t] * b[t][j];
            c[i][j] = s;
        }
    return c;
}

Mat transpose(const Mat& a) {
    Mat t = zeros(a[0].size(), a.size());
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

Mat softmax_rows(const Mat& x, const std::vector<std::vector<bool>>& allowed) {
    Mat y = zeros(x.size(), x[0].size());
    for (size_t i = 0; i < x.size(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < x[i].size(); ++j)
            if (allowed.empty() || allowed[i][j]) mx = std::max(mx, x[i][j]);
        if (!std::isfinite(mx)) throw std::invalid_argument("oracle softmax: empty row");
        double denom = 0;
        for (size_t j = 0; j < x[i].size(); ++j) {
            if (!allowed.empty() && !allowed[i][j]) continue;
            denom += std::exp(x[i][j] - mx);
        }
        for (size_t j = 0; j < x[i].size(); ++j)
            if (allowed.empty() || allowed[i][j]) y[i][j] = std::exp(x[i][j] - mx) / denom;
    }
    return y;
}

double elu_plus_one(double x) { return x > 0 ? x + 1.0 : std::exp(x); }

double wasserstein2(const std::vector<double>& mu1, const std::vector<double>& var1,
                    const std::vector<double>& mu2, const std::vector<double>& var2) {
    double s = 0;
    for (size_t i = 0; i < mu1.size(); ++i) {
        double dm = mu1[i] - mu2[i];
        double ds = std::sqrt(var1[i]) - std::sqrt(var2[i]);
        s += dm * dm + ds * ds;
    }
    return std::sqrt(s);
}

Mat dot_scores(const Mat& H, const Mat& WQ, const Mat& WK) {
    Mat q = matmul(H, WQ), k = matmul(H, WK);
    size_t n = H.size(), dh = WQ[0].size();
    Mat a = zeros(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double s = 0;
            for (size_t t = 0; t < dh; ++t) s += q[i][t] * k[j][t];
            a[i][j] = s / std::sqrt(static_cast<double>(dh));
        }
    return a;
}

namespace {

Mat elu1_all(const Mat& a) {
    Mat out = a;
    for (auto& row : out)
        for (double& v : row) v = elu_plus_one(v);
    return out;
}

}  // namespace

Mat stochastic_scores(const Mat& mean, const Mat& cov_raw, const Mat& WQ_mu, const Mat& WK_mu,
                      const Mat& WQ_cov, const Mat& WK_cov) {
    Mat mu_q = matmul(mean, WQ_mu), mu_k = matmul(mean, WK_mu);
    Mat var_q = elu1_all(matmul(cov_raw, WQ_cov)), var_k = elu1_all(matmul(cov_raw, WK_cov));
    size_t n = mean.size();
    Mat a = zeros(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) a[i][j] = -wasserstein2(mu_q[i], var_q[i], mu_k[j], var_k[j]);
    return a;
}

Mat refine_simp(const Mat& A, const Mat& WRQ, const Mat& WRK, double scale_div) {
    Mat q = matmul(A, WRQ), k = matmul(A, WRK);
    size_t n = A.size();
    Mat b = zeros(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double s = 0;
            for (size_t t = 0; t < n; ++t) s += q[i][t] * k[j][t];
            b[i][j] = s / scale_div;
        }
    return b;
}

Mat refine_add(const Mat& A, const Mat& WRQ, const Mat& WRK, double scale_div) {
    Mat b = refine_simp(A, WRQ, WRK, scale_div);
    for (size_t i = 0; i < A.size(); ++i)
        for (size_t j = 0; j < A.size(); ++j) b[i][j] = (b[i][j] + A[i][j]) / 2.0;
    return b;
}

Mat refine_value(const Mat& A, const Mat& WRQ, const Mat& WRK, const Mat& WRV,
                 const std::vector<std::vector<bool>>& support) {
    Mat q = matmul(A, WRQ), k = matmul(A, WRK), v = matmul(A, WRV);
    size_t n = A.size();
    Mat scores = zeros(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double s = 0;
            for (size_t t = 0; t < n; ++t) s += q[i][t] * k[j][t];
            scores[i][j] = s;
        }
    Mat inner = softmax_rows(scores, support);
    return matmul(inner, v);
}

Mat refine_stoc(const Mat& A, const Mat& WmuR, const Mat& WsigmaR) {
    Mat mu = matmul(A, WmuR);
    Mat var = elu1_all(matmul(A, WsigmaR));
    size_t n = A.size();
    Mat b = zeros(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) b[i][j] = -wasserstein2(mu[i], var[i], mu[j], var[j]);
    return b;
}

namespace {

/// Masked softmax where rows without any allowed entry come out all zero.
Mat masked_weights(const Mat& scores, const std::vector<std::vector<bool>>& allowed) {
    size_t n = scores.size();
    Mat w = zeros(n, n);
    for (size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < n; ++j)
            if (allowed[i][j]) mx = std::max(mx, scores[i][j]);
        if (!std::isfinite(mx)) continue;
        double denom = 0;
        for (size_t j = 0; j < n; ++j)
            if (allowed[i][j]) denom += std::exp(scores[i][j] - mx);
        for (size_t j = 0; j < n; ++j)
            if (allowed[i][j]) w[i][j] = std::exp(scores[i][j] - mx) / denom;
    }
    return w;
}

}  // namespace

Mat reference_dot_attention(const Mat& H, const Mat& WQ, const Mat& WK, const Mat& WV,
                            const std::vector<std::vector<bool>>& allowed) {
    Mat w = masked_weights(dot_scores(H, WQ, WK), allowed);
    return matmul(w, matmul(H, WV));
}

void reference_stoch_attention(const Mat& mean, const Mat& cov_raw, const Mat& WQ_mu, const Mat& WK_mu,
                               const Mat& WV_mu, const Mat& WQ_cov, const Mat& WK_cov, const Mat& WV_cov,
                               const std::vector<std::vector<bool>>& allowed, Mat& out_mu, Mat& out_cov) {
    Mat w = masked_weights(stochastic_scores(mean, cov_raw, WQ_mu, WK_mu, WQ_cov, WK_cov), allowed);
    out_mu = matmul(w, matmul(mean, WV_mu));
    out_cov = matmul(w, elu1_all(matmul(cov_raw, WV_cov)));
}

int rank_of(const std::vector<double>& scores, size_t target_idx) {
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    double ts = scores[target_idx];
    // Sort descending; among equal scores put the target last.
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return (a != target_idx) && (b == target_idx);
    });
    for (size_t pos = 0; pos < order.size(); ++pos)
        if (order[pos] == target_idx) return static_cast<int>(pos) + 1;
    (void)ts;
    throw std::logic_error("oracle rank_of: target not found");
}

void metrics_at(const std::vector<int>& ranks, int N, double& recall, double& ndcg) {
    double h = 0, g = 0;
    for (int r : ranks)
        if (r <= N) {
            h += 1;
            g += 1.0 / std::log2(r + 1.0);
        }
    recall = ranks.empty() ? 0 : h / ranks.size();
    ndcg = ranks.empty() ? 0 : g / ranks.size();
}

}  // namespace seqrec::oracle
