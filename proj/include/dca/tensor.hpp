#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dca/errors.hpp"

namespace dca {

// Dense fp64 tensor with reverse-mode autodiff. Tensors are cheap handles:
// copying shares the underlying data and grad buffers. Ops record their
// backward rules on the thread-local active Tape (see TapeScope); without an
// active tape they run in inference mode and outputs carry no grad.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // null unless requires_grad
    bool requires_grad = false;
    std::int64_t node = -1;  // tape node that produced this value, -1 for leaves

    Tensor() = default;

    std::int64_t numel() const;
    int ndim() const { return static_cast<int>(shape.size()); }
    std::int64_t size(int d) const;  // negative d counts from the back

    const double* cdata() const { return data->data(); }
    double* mdata() { return data->data(); }
    double* gdata() { return grad->data(); }
    const double* gdata() const { return grad->data(); }

    double item() const;
    double at(std::initializer_list<std::int64_t> idx) const;

    void ensure_grad();
    void zero_grad();
    bool defined() const { return static_cast<bool>(data); }

    // Value copy that is detached from any tape and never requires grad.
    Tensor detached() const;
};

Tensor make_tensor(std::vector<std::int64_t> shape, bool requires_grad = false);
Tensor from_values(std::vector<std::int64_t> shape, std::vector<double> values,
                   bool requires_grad = false);
Tensor full_like_value(std::vector<std::int64_t> shape, double value);

std::string format_shape(const std::vector<std::int64_t>& shape);

// Per-forward-pass record of backward rules. Rules are appended in forward
// execution order, which is a topological order of the graph, so backward is
// a single reverse sweep visiting each node exactly once. backward() consumes
// the tape; calling it again throws.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::int64_t record(std::function<void()> rule);
    void backward(Tensor& root);
    std::size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    static Tape* active();

private:
    friend struct TapeScope;
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

// RAII scope making a tape the active one for the current thread.
struct TapeScope {
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// ---- differentiable ops ----
//
// Binary elementwise ops accept equal shapes, or a second operand whose shape
// is a trailing suffix of the first (broadcast over the leading dims).

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// a[..,m,k] x b[..,k,n]; b may omit the leading batch dims (shared weights).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a, int dim0, int dim1);
Tensor reshape(const Tensor& a, std::vector<std::int64_t> new_shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split(const Tensor& a, int axis, const std::vector<std::int64_t>& sizes);
Tensor narrow(const Tensor& a, int axis, std::int64_t start, std::int64_t length);

// Replicate a tensor n times along a new leading axis.
Tensor expand_leading(const Tensor& a, std::int64_t n);

Tensor softmax(const Tensor& a, int axis);

// Population variance (divide by count) along `axis`; the axis is removed.
Tensor variance(const Tensor& a, int axis);

Tensor mean(const Tensor& a, int axis);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);

// Mean negative log-likelihood over positions where mask != 0, computed with
// log-sum-exp. logits: [batch, seq, vocab]; targets/mask: batch*seq entries.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                     const std::vector<std::uint8_t>& mask);

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps);

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids,
                        std::int64_t batch, std::int64_t seq);

Tensor silu(const Tensor& x);

// Rotary position rotation over the last axis of x: [batch, heads, seq, dim],
// position of row s is pos_offset + s. dim must be even.
Tensor rope(const Tensor& x, double base, std::int64_t pos_offset = 0);

// Multiply each slice x[..., i, ...] along `axis` by s[i]. s is 1-D.
Tensor scale_channels(const Tensor& x, const Tensor& s, int axis);

void zero_grad(std::vector<Tensor>& params);

}  // namespace dca
