#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode autodiff.
//
// A Tensor is a cheap handle onto shared storage. Operations record
// themselves on the tape that is active on the calling thread (see
// Tape::Scope) whenever at least one input requires a gradient; with no
// active tape every op is a plain forward computation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace trime {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient is accumulated
    bool requires_grad{false};
    bool on_tape{false};  // produced by a recorded op

    std::vector<double>& ensure_grad();
};

class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t dim(std::size_t axis) const;
    // Matrix view helpers: a rank-1 tensor of length n is treated as 1 x n.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool value) { impl_->requires_grad = value; }
    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient buffer; all zeros when nothing has been accumulated yet.
    std::vector<double> grad() const;
    void zero_grad() { impl_->grad.clear(); }

    /// Copy of the values with no gradient history.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of executed operations for reverse traversal.
class Tape {
public:
    struct Node {
        std::string op;
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::shared_ptr<TensorImpl> output;
        std::function<void()> backward;
    };

    /// Makes a tape the recording target for the current thread while alive.
    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

    /// Suspends recording on the current thread while alive.
    class NoGrad {
    public:
        NoGrad();
        ~NoGrad();
        NoGrad(const NoGrad&) = delete;
        NoGrad& operator=(const NoGrad&) = delete;

    private:
        Tape* previous_;
    };

    static Tape* current();

    void record(Node node);
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    const std::vector<Node>& nodes() const { return nodes_; }

    /// Propagates d(loss)/d(x) to every requires_grad tensor reachable from
    /// `loss`, then clears the tape. Leaf gradients accumulate.
    void backward(const Tensor& loss);
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

/// Backward on the current thread's active tape.
void backward(const Tensor& loss);

/// Finite checks after every op: on by default in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Adds a length-n vector to every row of an m x n matrix.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Max-shifted log(sum(exp(x))) along `axis`. Rank-1 input reduces to a
/// scalar; rank-2 input reduces axis 0 (per column) or axis 1 (per row).
Tensor log_sum_exp(const Tensor& x, std::size_t axis);

/// Row-wise softmax restricted to the lower triangle (column <= row),
/// normalized through an explicit log-sum-exp. Entries above the diagonal
/// are exactly zero.
Tensor causal_softmax(const Tensor& scores);

/// Per-row layer normalization with learned gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// out[i] = table[ids[i]]; backward scatters into the table gradient.
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);
/// Rows [begin, begin + count) of a matrix.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

/// Registers a custom differentiable op: `backward` receives the output
/// gradient and must add into the inputs' gradient buffers.
Tensor record_custom(const std::string& name, std::vector<Tensor> inputs, Tensor output,
                     std::function<void(std::span<const double> out_grad)> backward);

// ---------------------------------------------------------------------------
// Gradient checking

/// Max over coordinates of |analytic - central| / max(1, |analytic|) for a
/// scalar function of one tensor. Non-finite values anywhere report +inf.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

/// Same check over several leaf tensors the closure reads directly. The
/// leaves are perturbed in place and restored.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                  double eps = 1e-5);

}  // namespace trime
