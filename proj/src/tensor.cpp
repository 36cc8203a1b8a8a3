#include "seqrec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace seqrec {

namespace {

thread_local bool g_grad_enabled = true;

Index shape_size(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
}

std::shared_ptr<TensorImpl> make_node(Shape shape, Eigen::ArrayXd data) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (impl->data.size() != shape_size(impl->shape))
        throw ContractError("tensor: data length does not match shape " + shape_str(impl->shape));
    return impl;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ins) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

void attach(const std::shared_ptr<TensorImpl>& out, std::vector<std::shared_ptr<TensorImpl>> parents,
            std::function<void(TensorImpl&)> fn) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
}

// Accumulate `g` into the parent's grad if it participates in the tape.
void push_grad(TensorImpl& parent, const Eigen::ArrayXd& g) {
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    parent.grad += g;
}

ConstMatMap impl_mat(const TensorImpl& t) {
    Index r = t.shape[0];
    Index c = t.shape.size() == 2 ? t.shape[1] : 1;
    return ConstMatMap(t.data.data(), r, c);
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw ContractError(std::string(op) + ": expected 2-D tensor, got shape " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Index n = shape_size(shape);
    auto impl = make_node(std::move(shape), Eigen::ArrayXd::Zero(n));
    impl->requires_grad = requires_grad && g_grad_enabled;
    return Tensor(impl);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    t.mutable_data().setConstant(value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    Eigen::ArrayXd d = Eigen::Map<const Eigen::ArrayXd>(values.data(), static_cast<Index>(values.size()));
    auto impl = make_node(std::move(shape), std::move(d));
    impl->requires_grad = requires_grad && g_grad_enabled;
    return Tensor(impl);
}

Tensor Tensor::from_matrix(const MatrixRM& m, bool requires_grad) {
    Eigen::ArrayXd d = Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size());
    auto impl = make_node({m.rows(), m.cols()}, std::move(d));
    impl->requires_grad = requires_grad && g_grad_enabled;
    return Tensor(impl);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    auto& d = t.mutable_data();
    for (Index i = 0; i < d.size(); ++i) d[i] = rng.uniform(lo, hi);
    return t;
}

Index Tensor::rows() const { return impl_->shape[0]; }
Index Tensor::cols() const { return impl_->shape.size() == 2 ? impl_->shape[1] : 1; }

const Eigen::ArrayXd& Tensor::grad() const {
    if (!has_grad()) throw ContractError("Tensor::grad: gradient not populated");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (has_grad()) impl_->grad.setZero();
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("Tensor::item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return impl_->data[0];
}

double Tensor::at(Index r, Index c) const { return impl_->data[r * cols() + c]; }

ConstMatMap Tensor::mat() const { return impl_mat(*impl_); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- backward ---------------------------------------------------------------

void backward(const Tensor& root) {
    if (!root.defined() || root.size() != 1)
        throw ContractError("backward: root must be a scalar tensor" +
                            (root.defined() ? ", got shape " + shape_str(root.shape()) : std::string()));

    // Iterative post-order DFS; reverse gives a deterministic topological order.
    std::vector<TensorImpl*> topo;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes are transient: only leaf (parameter) grads accumulate
    // across repeated backward calls.
    for (TensorImpl* node : topo)
        if (node->backward_fn && node->grad.size() > 0) node->grad.setZero();

    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
    // Every requires_grad ancestor ends up with a populated (possibly zero) grad.
    for (TensorImpl* node : topo)
        if (node->requires_grad) node->ensure_grad();
}

// ---- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw ContractError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    MatrixRM c = a.mat() * b.mat();
    auto out = make_node({c.rows(), c.cols()}, Eigen::Map<const Eigen::ArrayXd>(c.data(), c.size()));
    if (any_requires_grad({&a, &b})) {
        auto pa = a.impl(), pb = b.impl();
        attach(out, {pa, pb}, [pa, pb](TensorImpl& self) {
            ConstMatMap g(self.grad.data(), self.shape[0], self.shape[1]);
            if (pa->requires_grad) {
                MatrixRM da = g * impl_mat(*pb).transpose();
                push_grad(*pa, Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
            }
            if (pb->requires_grad) {
                MatrixRM db = impl_mat(*pa).transpose() * g;
                push_grad(*pb, Eigen::Map<const Eigen::ArrayXd>(db.data(), db.size()));
            }
        });
    }
    return Tensor(out);
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    MatrixRM t = a.mat().transpose();
    auto out = make_node({t.rows(), t.cols()}, Eigen::Map<const Eigen::ArrayXd>(t.data(), t.size()));
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) {
            ConstMatMap g(self.grad.data(), self.shape[0], self.shape[1]);
            MatrixRM gt = g.transpose();
            push_grad(*pa, Eigen::Map<const Eigen::ArrayXd>(gt.data(), gt.size()));
        });
    }
    return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto out = make_node(a.shape(), a.data() + b.data());
    if (any_requires_grad({&a, &b})) {
        auto pa = a.impl(), pb = b.impl();
        attach(out, {pa, pb}, [pa, pb](TensorImpl& self) {
            push_grad(*pa, self.grad);
            push_grad(*pb, self.grad);
        });
    }
    return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto out = make_node(a.shape(), a.data() - b.data());
    if (any_requires_grad({&a, &b})) {
        auto pa = a.impl(), pb = b.impl();
        attach(out, {pa, pb}, [pa, pb](TensorImpl& self) {
            push_grad(*pa, self.grad);
            if (pb->requires_grad) {
                pb->ensure_grad();
                pb->grad -= self.grad;
            }
        });
    }
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto out = make_node(a.shape(), a.data() * b.data());
    if (any_requires_grad({&a, &b})) {
        auto pa = a.impl(), pb = b.impl();
        attach(out, {pa, pb}, [pa, pb](TensorImpl& self) {
            if (pa->requires_grad) push_grad(*pa, self.grad * pb->data);
            if (pb->requires_grad) push_grad(*pb, self.grad * pa->data);
        });
    }
    return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
    auto out = make_node(a.shape(), a.data() * c);
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa, c](TensorImpl& self) { push_grad(*pa, self.grad * c); });
    }
    return Tensor(out);
}

Tensor row_broadcast_add(const Tensor& a, const Tensor& r) {
    require_2d(a, "row_broadcast_add");
    if (r.rows() != 1 || r.cols() != a.cols())
        throw ContractError("row_broadcast_add: row shape " + shape_str(r.shape()) + " incompatible with " +
                            shape_str(a.shape()));
    MatrixRM m = a.mat();
    m.rowwise() += Eigen::RowVectorXd(r.mat().row(0));
    auto out = make_node(a.shape(), Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size()));
    if (any_requires_grad({&a, &r})) {
        auto pa = a.impl(), pr = r.impl();
        attach(out, {pa, pr}, [pa, pr](TensorImpl& self) {
            push_grad(*pa, self.grad);
            if (pr->requires_grad) {
                ConstMatMap g(self.grad.data(), self.shape[0], self.shape[1]);
                Eigen::RowVectorXd cs = g.colwise().sum();
                push_grad(*pr, Eigen::Map<const Eigen::ArrayXd>(cs.data(), cs.size()));
            }
        });
    }
    return Tensor(out);
}

Tensor row_broadcast_mul(const Tensor& a, const Tensor& r) {
    require_2d(a, "row_broadcast_mul");
    if (r.rows() != 1 || r.cols() != a.cols())
        throw ContractError("row_broadcast_mul: row shape " + shape_str(r.shape()) + " incompatible with " +
                            shape_str(a.shape()));
    MatrixRM m = a.mat().array().rowwise() * r.mat().row(0).array();
    auto out = make_node(a.shape(), Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size()));
    if (any_requires_grad({&a, &r})) {
        auto pa = a.impl(), pr = r.impl();
        attach(out, {pa, pr}, [pa, pr](TensorImpl& self) {
            ConstMatMap g(self.grad.data(), self.shape[0], self.shape[1]);
            if (pa->requires_grad) {
                MatrixRM da = g.array().rowwise() * impl_mat(*pr).row(0).array();
                push_grad(*pa, Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
            }
            if (pr->requires_grad) {
                Eigen::RowVectorXd dr = (g.array() * impl_mat(*pa).array()).colwise().sum();
                push_grad(*pr, Eigen::Map<const Eigen::ArrayXd>(dr.data(), dr.size()));
            }
        });
    }
    return Tensor(out);
}

Tensor sum_all(const Tensor& a) {
    Eigen::ArrayXd d(1);
    d[0] = a.data().sum();
    auto out = make_node({1, 1}, std::move(d));
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) {
            push_grad(*pa, Eigen::ArrayXd::Constant(pa->data.size(), self.grad[0]));
        });
    }
    return Tensor(out);
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor row_sum(const Tensor& a) {
    require_2d(a, "row_sum");
    Eigen::VectorXd s = a.mat().rowwise().sum();
    auto out = make_node({a.rows(), 1}, Eigen::Map<const Eigen::ArrayXd>(s.data(), s.size()));
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) {
            Index r = pa->shape[0], c = pa->shape[1];
            MatrixRM da = Eigen::Map<const Eigen::VectorXd>(self.grad.data(), r) * Eigen::RowVectorXd::Ones(c);
            push_grad(*pa, Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
        });
    }
    return Tensor(out);
}

Tensor sigmoid(const Tensor& a) {
    Eigen::ArrayXd y(a.size());
    for (Index i = 0; i < a.size(); ++i) {
        double x = a.data()[i];
        y[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    auto out = make_node(a.shape(), std::move(y));
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) {
            push_grad(*pa, self.grad * self.data * (1.0 - self.data));
        });
    }
    return Tensor(out);
}

Tensor log_t(const Tensor& a) {
    if ((a.data() <= 0.0).any()) throw ContractError("log: input must be strictly positive");
    auto out = make_node(a.shape(), a.data().log());
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) { push_grad(*pa, self.grad / pa->data); });
    }
    return Tensor(out);
}

Tensor sqrt_t(const Tensor& a) {
    if ((a.data() <= 0.0).any()) throw ContractError("sqrt: input must be strictly positive");
    auto out = make_node(a.shape(), a.data().sqrt());
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) { push_grad(*pa, self.grad / (2.0 * self.data)); });
    }
    return Tensor(out);
}

Tensor relu(const Tensor& a) {
    auto out = make_node(a.shape(), a.data().max(0.0));
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) {
            push_grad(*pa, self.grad * (pa->data > 0.0).cast<double>());
        });
    }
    return Tensor(out);
}

Tensor softplus(const Tensor& a) {
    Eigen::ArrayXd y(a.size());
    for (Index i = 0; i < a.size(); ++i) {
        double x = a.data()[i];
        y[i] = std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
    }
    auto out = make_node(a.shape(), std::move(y));
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) {
            Eigen::ArrayXd s(pa->data.size());
            for (Index i = 0; i < s.size(); ++i) {
                double x = pa->data[i];
                s[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            }
            push_grad(*pa, self.grad * s);
        });
    }
    return Tensor(out);
}

Tensor elu_plus_one(const Tensor& a) {
    Eigen::ArrayXd y(a.size());
    for (Index i = 0; i < a.size(); ++i) {
        double x = a.data()[i];
        y[i] = x > 0 ? x + 1.0 : std::exp(x);
    }
    auto out = make_node(a.shape(), std::move(y));
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) {
            // d/dx = 1 on the linear branch, exp(x) = output on the other.
            Eigen::ArrayXd d = (pa->data > 0.0).select(Eigen::ArrayXd::Ones(self.data.size()), self.data);
            push_grad(*pa, self.grad * d);
        });
    }
    return Tensor(out);
}

Tensor softmax_rows(const Tensor& a, const BoolMat* allowed) {
    require_2d(a, "softmax_rows");
    Index r = a.rows(), c = a.cols();
    if (allowed && (allowed->rows() != r || allowed->cols() != c))
        throw ContractError("softmax_rows: mask shape mismatch");
    MatrixRM y(r, c);
    ConstMatMap x = a.mat();
    for (Index i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < c; ++j)
            if (!allowed || (*allowed)(i, j)) mx = std::max(mx, x(i, j));
        if (!std::isfinite(mx))
            throw ContractError("softmax_rows: row " + std::to_string(i) + " is fully masked");
        double denom = 0;
        for (Index j = 0; j < c; ++j) {
            double z = x(i, j) - mx;
            if (allowed && !(*allowed)(i, j)) z = -1e9;  // additive mask on disallowed logits
            double e = std::exp(z);
            if (allowed && !(*allowed)(i, j)) e = 0.0;  // exact zero on masked outputs
            y(i, j) = e;
            denom += e;
        }
        y.row(i) /= denom;
    }
    auto out = make_node({r, c}, Eigen::Map<const Eigen::ArrayXd>(y.data(), y.size()));
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa](TensorImpl& self) {
            Index rr = self.shape[0], cc = self.shape[1];
            ConstMatMap yy(self.data.data(), rr, cc);
            ConstMatMap g(self.grad.data(), rr, cc);
            MatrixRM dx(rr, cc);
            for (Index i = 0; i < rr; ++i) {
                double dot = (g.row(i).array() * yy.row(i).array()).sum();
                dx.row(i) = yy.row(i).array() * (g.row(i).array() - dot);
            }
            push_grad(*pa, Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
        });
    }
    return Tensor(out);
}

Tensor mask_mul(const Tensor& a, const BoolMat& keep) {
    require_2d(a, "mask_mul");
    if (keep.rows() != a.rows() || keep.cols() != a.cols())
        throw ContractError("mask_mul: mask shape mismatch");
    Eigen::ArrayXd k(a.size());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) k[i * a.cols() + j] = keep(i, j) ? 1.0 : 0.0;
    auto out = make_node(a.shape(), a.data() * k);
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa, k](TensorImpl& self) { push_grad(*pa, self.grad * k); });
    }
    return Tensor(out);
}

Tensor dropout(const Tensor& a, double p_drop, bool train, Rng* rng) {
    if (p_drop < 0.0 || p_drop >= 1.0)
        throw ContractError("dropout: rate must be in [0,1), got " + std::to_string(p_drop));
    if (!train || p_drop == 0.0) return a;
    if (!rng) throw ContractError("dropout: train mode requires an RNG");
    double keep = 1.0 - p_drop;
    Eigen::ArrayXd m(a.size());
    for (Index i = 0; i < a.size(); ++i) m[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
    auto out = make_node(a.shape(), a.data() * m);
    if (any_requires_grad({&a})) {
        auto pa = a.impl();
        attach(out, {pa}, [pa, m](TensorImpl& self) { push_grad(*pa, self.grad * m); });
    }
    return Tensor(out);
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(a, "layer_norm");
    Index r = a.rows(), c = a.cols();
    if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
        throw ContractError("layer_norm: gain/bias must be [1x" + std::to_string(c) + "]");
    ConstMatMap x = a.mat();
    Eigen::VectorXd mu(r), inv_sd(r);
    MatrixRM xhat(r, c);
    for (Index i = 0; i < r; ++i) {
        mu[i] = x.row(i).mean();
        double var = (x.row(i).array() - mu[i]).square().mean();
        inv_sd[i] = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (x.row(i).array() - mu[i]) * inv_sd[i];
    }
    MatrixRM y = (xhat.array().rowwise() * gain.mat().row(0).array()).rowwise() + bias.mat().row(0).array();
    auto out = make_node({r, c}, Eigen::Map<const Eigen::ArrayXd>(y.data(), y.size()));
    if (any_requires_grad({&a, &gain, &bias})) {
        auto pa = a.impl(), pg = gain.impl(), pb = bias.impl();
        attach(out, {pa, pg, pb}, [pa, pg, pb, xhat, inv_sd](TensorImpl& self) {
            Index rr = self.shape[0], cc = self.shape[1];
            ConstMatMap g(self.grad.data(), rr, cc);
            if (pg->requires_grad) {
                Eigen::RowVectorXd dg = (g.array() * xhat.array()).colwise().sum();
                push_grad(*pg, Eigen::Map<const Eigen::ArrayXd>(dg.data(), dg.size()));
            }
            if (pb->requires_grad) {
                Eigen::RowVectorXd db = g.colwise().sum();
                push_grad(*pb, Eigen::Map<const Eigen::ArrayXd>(db.data(), db.size()));
            }
            if (pa->requires_grad) {
                ConstMatMap gn = impl_mat(*pg);
                MatrixRM dx(rr, cc);
                double n = static_cast<double>(cc);
                for (Index i = 0; i < rr; ++i) {
                    Eigen::ArrayXd dxh = g.row(i).array() * gn.row(0).array();
                    double s = inv_sd[i];
                    double sum_dxh = dxh.sum();
                    double sum_dxh_xhat = (dxh * xhat.row(i).transpose().array()).sum();
                    // dx = s * (dxh - mean(dxh) - xhat * mean(dxh * xhat))
                    dx.row(i) =
                        s * (dxh - sum_dxh / n - xhat.row(i).transpose().array() * (sum_dxh_xhat / n));
                }
                push_grad(*pa, Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
            }
        });
    }
    return Tensor(out);
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
    require_2d(table, "gather_rows");
    Index v = table.rows(), c = table.cols();
    MatrixRM out_m(static_cast<Index>(ids.size()), c);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v)
            throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " out of range [0," +
                                std::to_string(v) + ")");
        out_m.row(static_cast<Index>(i)) = table.mat().row(ids[i]);
    }
    auto out = make_node({out_m.rows(), c}, Eigen::Map<const Eigen::ArrayXd>(out_m.data(), out_m.size()));
    if (any_requires_grad({&table})) {
        auto pt = table.impl();
        std::vector<int> idv(ids.begin(), ids.end());
        attach(out, {pt}, [pt, idv](TensorImpl& self) {
            if (!pt->requires_grad) return;
            pt->ensure_grad();
            Index cc = self.shape[1];
            MatMap gt(pt->grad.data(), pt->shape[0], cc);
            ConstMatMap g(self.grad.data(), self.shape[0], cc);
            for (size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Index>(i));
        });
    }
    return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    if (parts.size() == 1) return parts[0];
    Index r = parts[0].rows(), total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != r) throw ContractError("concat_cols: row count mismatch");
        total += p.cols();
    }
    MatrixRM m(r, total);
    Index off = 0;
    for (const Tensor& p : parts) {
        m.middleCols(off, p.cols()) = p.mat();
        off += p.cols();
    }
    auto out = make_node({r, total}, Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size()));
    bool track = false;
    for (const Tensor& p : parts) track = track || (g_grad_enabled && p.requires_grad());
    if (track) {
        std::vector<std::shared_ptr<TensorImpl>> ps;
        for (const Tensor& p : parts) ps.push_back(p.impl());
        attach(out, ps, [ps](TensorImpl& self) {
            ConstMatMap g(self.grad.data(), self.shape[0], self.shape[1]);
            Index off2 = 0;
            for (const auto& p : ps) {
                Index w = p->shape[1];
                if (p->requires_grad) {
                    MatrixRM gp = g.middleCols(off2, w);
                    push_grad(*p, Eigen::Map<const Eigen::ArrayXd>(gp.data(), gp.size()));
                }
                off2 += w;
            }
        });
    }
    return Tensor(out);
}

namespace {

void require_positive_var(const Tensor& v, const char* op) {
    if ((v.data() <= 0.0).any())
        throw ContractError(std::string(op) + ": variances must be strictly positive");
}

}  // namespace

Tensor rowwise_w2(const Tensor& mu_a, const Tensor& var_a, const Tensor& mu_b, const Tensor& var_b) {
    require_same_shape(mu_a, var_a, "rowwise_w2");
    require_same_shape(mu_b, var_b, "rowwise_w2");
    require_same_shape(mu_a, mu_b, "rowwise_w2");
    require_positive_var(var_a, "rowwise_w2");
    require_positive_var(var_b, "rowwise_w2");
    Index r = mu_a.rows();
    Eigen::ArrayXd sa = var_a.data().sqrt(), sb = var_b.data().sqrt();
    Eigen::ArrayXd dmu = mu_a.data() - mu_b.data(), dsd = sa - sb;
    Eigen::ArrayXd w(r);
    Index c = mu_a.cols();
    for (Index i = 0; i < r; ++i) {
        double s = 0;
        for (Index j = 0; j < c; ++j) {
            Index k = i * c + j;
            s += dmu[k] * dmu[k] + dsd[k] * dsd[k];
        }
        w[i] = std::sqrt(s);
    }
    auto out = make_node({r, 1}, std::move(w));
    if (any_requires_grad({&mu_a, &var_a, &mu_b, &var_b})) {
        auto pma = mu_a.impl(), pva = var_a.impl(), pmb = mu_b.impl(), pvb = var_b.impl();
        attach(out, {pma, pva, pmb, pvb}, [pma, pva, pmb, pvb, sa, sb, dmu, dsd, c](TensorImpl& self) {
            Index rr = self.shape[0];
            // q_i = g_i / w_i, the subgradient at w == 0 taken as 0.
            Eigen::ArrayXd q(rr);
            for (Index i = 0; i < rr; ++i) q[i] = self.data[i] > 0 ? self.grad[i] / self.data[i] : 0.0;
            auto spread = [&](const Eigen::ArrayXd& per_elem) {
                Eigen::ArrayXd g(rr * c);
                for (Index i = 0; i < rr; ++i)
                    for (Index j = 0; j < c; ++j) g[i * c + j] = q[i] * per_elem[i * c + j];
                return g;
            };
            if (pma->requires_grad) push_grad(*pma, spread(dmu));
            if (pmb->requires_grad) push_grad(*pmb, spread(-dmu));
            if (pva->requires_grad) push_grad(*pva, spread(dsd / (2.0 * sa)));
            if (pvb->requires_grad) push_grad(*pvb, spread(-dsd / (2.0 * sb)));
        });
    }
    return Tensor(out);
}

Tensor pairwise_w2(const Tensor& mu_q, const Tensor& var_q, const Tensor& mu_k, const Tensor& var_k) {
    require_same_shape(mu_q, var_q, "pairwise_w2");
    require_same_shape(mu_k, var_k, "pairwise_w2");
    if (mu_q.cols() != mu_k.cols())
        throw ContractError("pairwise_w2: dimension mismatch " + shape_str(mu_q.shape()) + " vs " +
                            shape_str(mu_k.shape()));
    require_positive_var(var_q, "pairwise_w2");
    require_positive_var(var_k, "pairwise_w2");
    Index nq = mu_q.rows(), nk = mu_k.rows(), d = mu_q.cols();
    MatrixRM mq = mu_q.mat(), mk = mu_k.mat();
    MatrixRM sq = var_q.mat().array().sqrt(), sk = var_k.mat().array().sqrt();

    // Explicit difference-of-rows loops: (a-b)^2 terms keep the matrix exactly
    // symmetric with an exactly zero diagonal when both sides are the same
    // distributions, which matrix-form |a|^2+|b|^2-2ab evaluation would not.
    MatrixRM w(nq, nk);
    for (Index i = 0; i < nq; ++i)
        for (Index j = 0; j < nk; ++j) {
            double s2 = 0;
            for (Index t = 0; t < d; ++t) {
                double dm = mq(i, t) - mk(j, t);
                double ds = sq(i, t) - sk(j, t);
                s2 += dm * dm + ds * ds;
            }
            w(i, j) = std::sqrt(s2);
        }

    auto out = make_node({nq, nk}, Eigen::Map<const Eigen::ArrayXd>(w.data(), w.size()));
    if (any_requires_grad({&mu_q, &var_q, &mu_k, &var_k})) {
        auto pmq = mu_q.impl(), pvq = var_q.impl(), pmk = mu_k.impl(), pvk = var_k.impl();
        attach(out, {pmq, pvq, pmk, pvk}, [pmq, pvq, pmk, pvk, mq, mk, sq, sk](TensorImpl& self) {
            Index rq = self.shape[0], rk = self.shape[1];
            // Q[k][t] = g/(2w) with the w == 0 subgradient taken as 0; gradients
            // below use 2Q = g/w.
            MatrixRM q2(rq, rk);
            for (Index i = 0; i < rq; ++i)
                for (Index j = 0; j < rk; ++j) {
                    double w = self.data[i * rk + j];
                    q2(i, j) = w > 0 ? self.grad[i * rk + j] / w : 0.0;
                }
            Eigen::VectorXd row_q = q2.rowwise().sum(), col_q = q2.colwise().sum();
            if (pmq->requires_grad) {
                MatrixRM d = (mq.array().colwise() * row_q.array()).matrix() - q2 * mk;
                push_grad(*pmq, Eigen::Map<const Eigen::ArrayXd>(d.data(), d.size()));
            }
            if (pmk->requires_grad) {
                MatrixRM d = (mk.array().colwise() * col_q.array()).matrix() - q2.transpose() * mq;
                push_grad(*pmk, Eigen::Map<const Eigen::ArrayXd>(d.data(), d.size()));
            }
            if (pvq->requires_grad) {
                MatrixRM num = (sq.array().colwise() * row_q.array()).matrix() - q2 * sk;
                MatrixRM d = (num.array() / (2.0 * sq.array()));
                push_grad(*pvq, Eigen::Map<const Eigen::ArrayXd>(d.data(), d.size()));
            }
            if (pvk->requires_grad) {
                MatrixRM num = (sk.array().colwise() * col_q.array()).matrix() - q2.transpose() * sq;
                MatrixRM d = (num.array() / (2.0 * sk.array()));
                push_grad(*pvk, Eigen::Map<const Eigen::ArrayXd>(d.data(), d.size()));
            }
        });
    }
    return Tensor(out);
}

Tensor wasserstein2_diag(const Tensor& mu1, const Tensor& var1, const Tensor& mu2, const Tensor& var2) {
    if (mu1.rows() != 1 || mu2.rows() != 1)
        throw ContractError("wasserstein2_diag: expects [1xd] mean/variance rows");
    return rowwise_w2(mu1, var1, mu2, var2);
}

}  // namespace seqrec
