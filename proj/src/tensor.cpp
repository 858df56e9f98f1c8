#include "trime/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "trime/error.hpp"

namespace trime {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local Tape* tl_active_tape = nullptr;

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->requires_grad(); });
}

void check_finite(const Tensor& t, const char* op) {
    if (!g_finite_checks.load(std::memory_order_relaxed)) {
        return;
    }
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NonFiniteError(std::string("non-finite value produced by ") + op);
        }
    }
}

// Wires `out` onto the active tape when any input requires a gradient.
// `backward` is called with the output impl once its gradient is populated.
template <typename Fn>
Tensor finish(const char* op, std::initializer_list<const Tensor*> inputs, Tensor out, Fn backward) {
    check_finite(out, op);
    Tape* tape = Tape::current();
    if (tape == nullptr || !any_requires_grad(inputs)) {
        return out;
    }
    const auto& oimpl = out.impl();
    oimpl->requires_grad = true;
    oimpl->on_tape = true;
    Tape::Node node;
    node.op = op;
    for (const Tensor* t : inputs) {
        node.inputs.push_back(t->impl());
    }
    node.output = oimpl;
    TensorImpl* raw_out = oimpl.get();
    node.backward = [raw_out, backward = std::move(backward)]() { backward(*raw_out); };
    tape->record(std::move(node));
    return out;
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& TensorImpl::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = {0};
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t.mutable_data()[i * n + i] = 1.0;
    }
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
    }
    return impl_->shape[axis];
}

std::size_t Tensor::rows() const {
    switch (rank()) {
        case 0:
        case 1:
            return 1;
        case 2:
            return impl_->shape[0];
        default:
            throw DimensionError("rows(): tensor of rank " + std::to_string(rank()));
    }
}

std::size_t Tensor::cols() const {
    switch (rank()) {
        case 0:
            return 1;
        case 1:
            return impl_->shape[0];
        case 2:
            return impl_->shape[1];
        default:
            throw DimensionError("cols(): tensor of rank " + std::to_string(rank()));
    }
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
    if (impl_->grad.empty()) {
        return std::vector<double>(impl_->data.size(), 0.0);
    }
    return impl_->grad;
}

Tensor Tensor::detach() const {
    return Tensor(impl_->shape, impl_->data, false);
}

// ---------------------------------------------------------------------------
// Tape

Tape::Scope::Scope(Tape& tape) : previous_(tl_active_tape) {
    tl_active_tape = &tape;
}

Tape::Scope::~Scope() {
    tl_active_tape = previous_;
}

Tape::NoGrad::NoGrad() : previous_(tl_active_tape) {
    tl_active_tape = nullptr;
}

Tape::NoGrad::~NoGrad() {
    tl_active_tape = previous_;
}

Tape* Tape::current() {
    return tl_active_tape;
}

void Tape::record(Node node) {
    nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    const auto& limpl = loss.impl();
    if (!limpl->on_tape) {
        if (!limpl->requires_grad) {
            throw Error("backward: loss was not produced on the tape");
        }
        limpl->ensure_grad()[0] += 1.0;
        nodes_.clear();
        return;
    }
    const bool found = std::any_of(nodes_.begin(), nodes_.end(),
                                   [&](const Node& n) { return n.output == limpl; });
    if (!found) {
        throw Error("backward: loss was not produced on this tape");
    }
    limpl->ensure_grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output->grad.empty()) {
            continue;
        }
        it->backward();
    }
    nodes_.clear();
}

void backward(const Tensor& loss) {
    Tape* tape = Tape::current();
    if (tape == nullptr) {
        throw Error("backward: no active tape");
    }
    tape->backward(loss);
}

void set_finite_checks(bool enabled) {
    g_finite_checks.store(enabled);
}

bool finite_checks_enabled() {
    return g_finite_checks.load();
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (a.rank() > 2 || b.rank() > 2 || b.rows() != k) {
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    auto ai = a.impl(), bi = b.impl();
    return finish("matmul", {&a, &b}, Tensor({m, n}, std::move(out)),
                  [ai, bi, m, k, n](TensorImpl& o) {
                      ConstMap go(o.grad.data(), m, n);
                      if (ai->requires_grad) {
                          MutMap(ai->ensure_grad().data(), m, k).noalias() +=
                              go * ConstMap(bi->data.data(), k, n).transpose();
                      }
                      if (bi->requires_grad) {
                          MutMap(bi->ensure_grad().data(), k, n).noalias() +=
                              ConstMap(ai->data.data(), m, k).transpose() * go;
                      }
                  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (a.rank() > 2 || b.rank() > 2 || b.cols() != k) {
        throw DimensionError("matmul_nt: cannot multiply " + shape_str(a.shape()) + " by transpose of " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() =
        ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), n, k).transpose();
    auto ai = a.impl(), bi = b.impl();
    return finish("matmul_nt", {&a, &b}, Tensor({m, n}, std::move(out)),
                  [ai, bi, m, k, n](TensorImpl& o) {
                      ConstMap go(o.grad.data(), m, n);
                      if (ai->requires_grad) {
                          MutMap(ai->ensure_grad().data(), m, k).noalias() += go * ConstMap(bi->data.data(), n, k);
                      }
                      if (bi->requires_grad) {
                          MutMap(bi->ensure_grad().data(), n, k).noalias() +=
                              go.transpose() * ConstMap(ai->data.data(), m, k);
                      }
                  });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    auto ai = a.impl();
    return finish("transpose", {&a}, Tensor({n, m}, std::move(out)), [ai, m, n](TensorImpl& o) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += o.grad[j * m + i];
            }
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    auto ai = a.impl();
    std::vector<double> data(a.data().begin(), a.data().end());
    return finish("reshape", {&a}, Tensor(std::move(shape), std::move(data)), [ai](TensorImpl& o) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += o.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    auto ai = a.impl(), bi = b.impl();
    return finish("add", {&a, &b}, Tensor(a.shape(), std::move(out)), [ai, bi](TensorImpl& o) {
        for (auto* in : {ai.get(), bi.get()}) {
            if (!in->requires_grad) {
                continue;
            }
            auto& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += o.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    auto ai = a.impl(), bi = b.impl();
    return finish("sub", {&a, &b}, Tensor(a.shape(), std::move(out)), [ai, bi](TensorImpl& o) {
        if (ai->requires_grad) {
            auto& g = ai->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += o.grad[i];
            }
        }
        if (bi->requires_grad) {
            auto& g = bi->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= o.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    auto ai = a.impl(), bi = b.impl();
    return finish("mul", {&a, &b}, Tensor(a.shape(), std::move(out)), [ai, bi](TensorImpl& o) {
        if (ai->requires_grad) {
            auto& g = ai->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += o.grad[i] * bi->data[i];
            }
        }
        if (bi->requires_grad) {
            auto& g = bi->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += o.grad[i] * ai->data[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * factor;
    }
    auto ai = a.impl();
    return finish("scale", {&a}, Tensor(a.shape(), std::move(out)), [ai, factor](TensorImpl& o) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += o.grad[i] * factor;
        }
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_rank2(a, "add_row");
    const std::size_t m = a.rows(), n = a.cols();
    if (row.numel() != n || row.rank() > 2 || (row.rank() == 2 && row.rows() != 1)) {
        throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not fit " + shape_str(a.shape()));
    }
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = a[i * n + j] + row[j];
        }
    }
    auto ai = a.impl(), ri = row.impl();
    return finish("add_row", {&a, &row}, Tensor(a.shape(), std::move(out)), [ai, ri, m, n](TensorImpl& o) {
        if (ai->requires_grad) {
            auto& g = ai->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += o.grad[i];
            }
        }
        if (ri->requires_grad) {
            auto& g = ri->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    g[j] += o.grad[i * n + j];
                }
            }
        }
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] > 0.0 ? a[i] : 0.0;
    }
    auto ai = a.impl();
    return finish("relu", {&a}, Tensor(a.shape(), std::move(out)), [ai](TensorImpl& o) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (ai->data[i] > 0.0) {
                g[i] += o.grad[i];
            }
        }
    });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(a[i]);
    }
    auto ai = a.impl();
    return finish("exp", {&a}, Tensor(a.shape(), std::move(out)), [ai](TensorImpl& o) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += o.grad[i] * o.data[i];
        }
    });
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::log(a[i]);
    }
    auto ai = a.impl();
    return finish("log", {&a}, Tensor(a.shape(), std::move(out)), [ai](TensorImpl& o) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += o.grad[i] / ai->data[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) {
        total += v;
    }
    auto ai = a.impl();
    return finish("sum", {&a}, Tensor::scalar(total), [ai](TensorImpl& o) {
        auto& g = ai->ensure_grad();
        for (double& v : g) {
            v += o.grad[0];
        }
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) {
        throw DimensionError("mean of an empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor log_sum_exp(const Tensor& x, std::size_t axis) {
    if (x.rank() == 0 || x.rank() > 2 || axis >= x.rank()) {
        throw DimensionError("log_sum_exp: invalid axis " + std::to_string(axis) + " for shape " +
                             shape_str(x.shape()));
    }
    // Reduce over `len` elements spaced by `stride`, for `groups` groups.
    std::size_t groups, len, stride, group_step;
    Shape out_shape;
    if (x.rank() == 1) {
        groups = 1, len = x.dim(0), stride = 1, group_step = 0;
    } else if (axis == 1) {
        groups = x.rows(), len = x.cols(), stride = 1, group_step = x.cols();
        out_shape = {groups};
    } else {
        groups = x.cols(), len = x.rows(), stride = x.cols(), group_step = 1;
        out_shape = {groups};
    }
    if (len == 0) {
        throw DimensionError("log_sum_exp: empty reduction axis");
    }
    std::vector<double> out(groups);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const double* base = x.data().data() + gi * group_step;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < len; ++i) {
            mx = std::max(mx, base[i * stride]);
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            acc += std::exp(base[i * stride] - mx);
        }
        out[gi] = mx + std::log(acc);
    }
    auto xi = x.impl();
    return finish("log_sum_exp", {&x}, Tensor(out_shape, std::move(out)),
                  [xi, groups, len, stride, group_step](TensorImpl& o) {
                      auto& g = xi->ensure_grad();
                      for (std::size_t gi = 0; gi < groups; ++gi) {
                          const std::size_t off = gi * group_step;
                          for (std::size_t i = 0; i < len; ++i) {
                              const std::size_t idx = off + i * stride;
                              g[idx] += o.grad[gi] * std::exp(xi->data[idx] - o.data[gi]);
                          }
                      }
                  });
}

Tensor causal_softmax(const Tensor& scores) {
    require_rank2(scores, "causal_softmax");
    const std::size_t m = scores.rows(), n = scores.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t visible = std::min(n, i + 1);
        const double* row = scores.data().data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < visible; ++j) {
            mx = std::max(mx, row[j]);
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
            acc += std::exp(row[j] - mx);
        }
        const double lse = mx + std::log(acc);
        for (std::size_t j = 0; j < visible; ++j) {
            out[i * n + j] = std::exp(row[j] - lse);
        }
    }
    auto si = scores.impl();
    return finish("causal_softmax", {&scores}, Tensor({m, n}, std::move(out)), [si, m, n](TensorImpl& o) {
        auto& g = si->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t visible = std::min(n, i + 1);
            double dot = 0.0;
            for (std::size_t j = 0; j < visible; ++j) {
                dot += o.grad[i * n + j] * o.data[i * n + j];
            }
            for (std::size_t j = 0; j < visible; ++j) {
                g[i * n + j] += o.data[i * n + j] * (o.grad[i * n + j] - dot);
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.numel() != n || bias.numel() != n) {
        throw DimensionError("layer_norm: gain/bias length does not match width " + std::to_string(n));
    }
    std::vector<double> out(m * n), xhat(m * n), rstd(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data().data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            mu += row[j];
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            var += (row[j] - mu) * (row[j] - mu);
        }
        var /= static_cast<double>(n);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (row[j] - mu) * rstd[i];
            out[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
        }
    }
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
    return finish("layer_norm", {&x, &gain, &bias}, Tensor({m, n}, std::move(out)),
                  [xi, gi, bi, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](TensorImpl& o) {
                      if (gi->requires_grad) {
                          auto& g = gi->ensure_grad();
                          for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) {
                                  g[j] += o.grad[i * n + j] * xhat[i * n + j];
                              }
                          }
                      }
                      if (bi->requires_grad) {
                          auto& g = bi->ensure_grad();
                          for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) {
                                  g[j] += o.grad[i * n + j];
                              }
                          }
                      }
                      if (xi->requires_grad) {
                          auto& g = xi->ensure_grad();
                          const double inv_n = 1.0 / static_cast<double>(n);
                          for (std::size_t i = 0; i < m; ++i) {
                              double mean_d = 0.0, mean_dx = 0.0;
                              for (std::size_t j = 0; j < n; ++j) {
                                  const double d = o.grad[i * n + j] * gi->data[j];
                                  mean_d += d;
                                  mean_dx += d * xhat[i * n + j];
                              }
                              mean_d *= inv_n;
                              mean_dx *= inv_n;
                              for (std::size_t j = 0; j < n; ++j) {
                                  const double d = o.grad[i * n + j] * gi->data[j];
                                  g[i * n + j] += rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                              }
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Indexing

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
    require_rank2(table, "gather_rows");
    const std::size_t v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside [0, " +
                             std::to_string(v) + ")");
        }
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    auto ti = table.impl();
    std::vector<std::int32_t> idcopy(ids.begin(), ids.end());
    return finish("gather_rows", {&table}, Tensor({ids.size(), d}, std::move(out)),
                  [ti, d, idcopy = std::move(idcopy)](TensorImpl& o) {
                      auto& g = ti->ensure_grad();
                      for (std::size_t i = 0; i < idcopy.size(); ++i) {
                          double* dst = g.data() + static_cast<std::size_t>(idcopy[i]) * d;
                          for (std::size_t j = 0; j < d; ++j) {
                              dst[j] += o.grad[i * d + j];
                          }
                      }
                  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    require_rank2(a, "slice_rows");
    const std::size_t n = a.cols();
    if (begin + count > a.rows()) {
        throw DimensionError("slice_rows: range exceeds " + shape_str(a.shape()));
    }
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                            a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
    auto ai = a.impl();
    return finish("slice_rows", {&a}, Tensor({count, n}, std::move(out)), [ai, begin, n](TensorImpl& o) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            g[begin * n + i] += o.grad[i];
        }
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    require_rank2(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin + count > n) {
        throw DimensionError("slice_cols: range exceeds " + shape_str(a.shape()));
    }
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.data().data() + i * n + begin, count, out.data() + i * count);
    }
    auto ai = a.impl();
    return finish("slice_cols", {&a}, Tensor({m, count}, std::move(out)),
                  [ai, begin, count, m, n](TensorImpl& o) {
                      auto& g = ai->ensure_grad();
                      for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < count; ++j) {
                              g[i * n + begin + j] += o.grad[i * count + j];
                          }
                      }
                  });
}

namespace {

Tensor record_parts(const char* op, std::span<const Tensor> parts, Tensor out,
                    std::function<void(TensorImpl&)> backward) {
    check_finite(out, op);
    Tape* tape = Tape::current();
    const bool track = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (tape == nullptr || !track) {
        return out;
    }
    out.impl()->requires_grad = true;
    out.impl()->on_tape = true;
    Tape::Node node;
    node.op = op;
    for (const Tensor& t : parts) {
        node.inputs.push_back(t.impl());
    }
    node.output = out.impl();
    TensorImpl* raw = out.impl().get();
    node.backward = [raw, backward = std::move(backward)]() { backward(*raw); };
    tape->record(std::move(node));
    return out;
}

}  // namespace

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) {
        throw DimensionError("concat_rows: no inputs");
    }
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.cols() != n) {
            throw DimensionError("concat_rows: column mismatch");
        }
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        impls.push_back(p.impl());
    }
    return record_parts("concat_rows", parts, Tensor({m, n}, std::move(out)), [impls](TensorImpl& o) {
        std::size_t off = 0;
        for (const auto& p : impls) {
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += o.grad[off + i];
                }
            }
            off += p->data.size();
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: no inputs");
    }
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row mismatch");
        }
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(p.data().data() + i * w, w, out.data() + i * n + col);
        }
        col += w;
        impls.push_back(p.impl());
    }
    return record_parts("concat_cols", parts, Tensor({m, n}, std::move(out)), [impls, m, n](TensorImpl& o) {
        std::size_t col0 = 0;
        for (const auto& p : impls) {
            const std::size_t w = p->shape[1];
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        g[i * w + j] += o.grad[i * n + col0 + j];
                    }
                }
            }
            col0 += w;
        }
    });
}

Tensor record_custom(const std::string& name, std::vector<Tensor> inputs, Tensor output,
                     std::function<void(std::span<const double>)> backward) {
    return record_parts(name.c_str(), inputs, std::move(output),
                        [backward = std::move(backward)](TensorImpl& o) { backward(o.grad); });
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

double relative_error(double analytic, double numeric) {
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
        return std::numeric_limits<double>::infinity();
    }
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

double eval_scalar(const std::function<Tensor()>& f) {
    Tape::NoGrad guard;
    const Tensor y = f();
    if (y.numel() != 1) {
        throw DimensionError("grad_check: function is not scalar-valued");
    }
    return y.item();
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double eps) {
    if (!(eps > 0.0)) {
        throw Error("grad_check: eps must be positive");
    }
    constexpr double kInf = std::numeric_limits<double>::infinity();
    for (Tensor& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    try {
        Tape tape;
        Tensor y;
        {
            Tape::Scope scope(tape);
            y = f();
        }
        if (y.numel() != 1) {
            throw DimensionError("grad_check: function is not scalar-valued");
        }
        if (!std::isfinite(y.item())) {
            return kInf;
        }
        tape.backward(y);
        double worst = 0.0;
        for (Tensor& leaf : leaves) {
            const std::vector<double> analytic = leaf.grad();
            auto values = leaf.mutable_data();
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double orig = values[i];
                values[i] = orig + eps;
                const double up = eval_scalar(f);
                values[i] = orig - eps;
                const double down = eval_scalar(f);
                values[i] = orig;
                worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
            }
        }
        return worst;
    } catch (const NonFiniteError&) {
        return kInf;
    }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    Tensor leaf = x.detach();
    std::vector<Tensor> leaves{leaf};
    return grad_check([&]() { return f(leaves[0]); }, leaves, eps);
}

}  // namespace trime
