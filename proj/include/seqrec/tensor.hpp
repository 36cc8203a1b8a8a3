#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

std::string shape_str(const Shape& s);

struct TensorImpl {
    Shape shape;
    Eigen::ArrayXd data;  // row-major flattening of `shape`
    Eigen::ArrayXd grad;  // empty until backward touches it; same size as data otherwise
    bool requires_grad = false;

    // Tape edges. Leaves have no parents and no backward_fn.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    Index size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad = Eigen::ArrayXd::Zero(data.size());
    }
};

/// Dense 2-D (or flat 1-D) tensor of doubles with reverse-mode autodiff.
/// Value-semantic handle onto a shared node; node contents are immutable
/// once the tensor has been consumed by an op, except the grad buffer.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor from_matrix(const MatrixRM& m, bool requires_grad = false);
    /// Entries drawn uniformly from [lo, hi) in row-major order.
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    Index size() const { return impl_->data.size(); }
    Index rows() const;
    Index cols() const;
    bool requires_grad() const { return impl_->requires_grad; }

    const Eigen::ArrayXd& data() const { return impl_->data; }
    Eigen::ArrayXd& mutable_data() { return impl_->data; }
    const Eigen::ArrayXd& grad() const;
    bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
    void zero_grad();

    double item() const;  // requires size() == 1
    double at(Index r, Index c) const;

    ConstMatMap mat() const;  // 2-D view
    MatrixRM to_matrix() const { return MatrixRM(mat()); }

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    TensorImpl* node() const { return impl_.get(); }

  private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Thread-local autodiff switch. Ops record tape edges only while enabled.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

/// Reverse-topological gradient accumulation from a scalar root. Repeated
/// calls accumulate additively; callers zero grads between steps.
void backward(const Tensor& root);

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);

/// out[i][j] = a[i][j] + r[0][j]
Tensor row_broadcast_add(const Tensor& a, const Tensor& r);
/// out[i][j] = a[i][j] * r[0][j]
Tensor row_broadcast_mul(const Tensor& a, const Tensor& r);

Tensor sum_all(const Tensor& a);   // [1x1]
Tensor mean_all(const Tensor& a);  // [1x1]
Tensor row_sum(const Tensor& a);   // [m x 1]

Tensor sigmoid(const Tensor& a);
Tensor log_t(const Tensor& a);   // requires strictly positive entries
Tensor sqrt_t(const Tensor& a);  // requires strictly positive entries
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1 + e^x), overflow-safe
/// x+1 for x>0, exp(x) otherwise; strictly positive for all finite inputs.
Tensor elu_plus_one(const Tensor& a);

/// Row-wise softmax with numerical max-subtraction. `allowed`, when given,
/// marks entries that participate; masked entries come out exactly 0 and each
/// row normalizes over its unmasked support. A fully masked row is a
/// contract violation.
Tensor softmax_rows(const Tensor& a, const BoolMat* allowed = nullptr);

/// Elementwise multiply by a constant 0/1 keep-mask (same shape).
Tensor mask_mul(const Tensor& a, const BoolMat& keep);

/// Train mode: Bernoulli keep-mask scaled by 1/keep (mask drawn from `rng` in
/// row-major order). Eval mode or p_drop == 0: identity.
Tensor dropout(const Tensor& a, double p_drop, bool train, Rng* rng);

/// y = (x - mean_row) / sqrt(var_row + eps) * gain + bias, gain/bias [1 x n].
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-8);

/// out[i] = table[ids[i]], backward scatter-adds into the table rows.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

Tensor concat_cols(const std::vector<Tensor>& parts);

/// 2-Wasserstein distance between diagonal Gaussians, row-paired:
/// out[i] = W2(N(mu_a[i], var_a[i]), N(mu_b[i], var_b[i])), shape [m x 1].
/// Variances must be strictly positive.
Tensor rowwise_w2(const Tensor& mu_a, const Tensor& var_a, const Tensor& mu_b, const Tensor& var_b);

/// All-pairs W2: out[k][t] = W2(N(mu_q[k], var_q[k]), N(mu_k[t], var_k[t])).
Tensor pairwise_w2(const Tensor& mu_q, const Tensor& var_q, const Tensor& mu_k, const Tensor& var_k);

/// Scalar convenience wrapper over rowwise_w2 for two [1 x d] Gaussians.
Tensor wasserstein2_diag(const Tensor& mu1, const Tensor& var1, const Tensor& mu2, const Tensor& var2);

/// A parameter is a named leaf tensor with requires_grad set.
struct Parameter {
    std::string name;
    Tensor tensor;
};

}  // namespace seqrec
