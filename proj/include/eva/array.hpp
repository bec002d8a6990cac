#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace eva {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct ArrayStorage {
    Shape shape;
    // data/grad are shared with reshape views; a view is the same buffer under a
    // different shape, so gradient accumulation needs no extra bookkeeping.
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // kept empty until first touched
    bool requires_grad = false;
    bool leaf = false;
};

}  // namespace detail

/// Dense row-major array of 64-bit floats. Handle semantics: copies share
/// storage, operations on a Tape produce fresh storage. An array either
/// tracks gradients (parameters and anything derived from them) or is a
/// plain constant.
class DiffArray {
public:
    DiffArray() = default;

    static DiffArray zeros(Shape shape);
    static DiffArray full(Shape shape, double value);
    static DiffArray from_data(Shape shape, std::vector<double> values);
    static DiffArray scalar(double value);
    /// Leaf with gradient tracking; the unit the optimizer updates.
    static DiffArray param(Shape shape, std::vector<double> values);

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return storage_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(storage_->data->size()); }
    std::int64_t extent(int axis) const;

    double* data() { return storage_->data->data(); }
    const double* data() const { return storage_->data->data(); }
    std::span<const double> values() const { return {storage_->data->data(), storage_->data->size()}; }
    double item() const;
    bool all_finite() const;

    bool requires_grad() const { return storage_->requires_grad; }
    bool is_leaf() const { return storage_->leaf; }
    bool has_grad() const { return storage_->grad && !storage_->grad->empty(); }
    std::span<const double> grad() const;
    /// Allocates (zeroed) on first use.
    double* grad_data();
    void zero_grad();

    /// Same buffer, new extents; product must match. No copy, no tape node.
    DiffArray reshape(Shape shape) const;
    /// Same values as a fresh constant (no gradient link).
    DiffArray detached_copy() const;
    /// Shares the value buffer but owns a fresh gradient buffer. Lets several
    /// threads run forward/backward against one parameter set and reduce the
    /// per-thread gradients in a fixed order afterwards.
    DiffArray gradient_shadow() const;

private:
    friend class Tape;
    explicit DiffArray(std::shared_ptr<detail::ArrayStorage> s) : storage_(std::move(s)) {}
    std::shared_ptr<detail::ArrayStorage> storage_;
};

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;  // first moments, aligned with the param list
    std::vector<std::vector<double>> v;  // second moments
};

/// Reverse-mode tape. Nodes are appended in execution order, which is a
/// topological order by construction; backward() walks them once in reverse.
/// A tape and the arrays recorded on it are a single-threaded unit.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    DiffArray add(const DiffArray& a, const DiffArray& b);
    DiffArray sub(const DiffArray& a, const DiffArray& b);
    DiffArray mul(const DiffArray& a, const DiffArray& b);
    DiffArray scale(const DiffArray& a, double factor);
    DiffArray add_scalar(const DiffArray& a, double value);

    /// [.., m, k] x [.., k, n] -> [.., m, n]; leading extents must match or be 1.
    DiffArray matmul(const DiffArray& a, const DiffArray& b);
    DiffArray transpose_last2(const DiffArray& a);
    /// Shared linear map over the last axis: out[.., j] = sum_i x[.., i] w[i, j] + b[j].
    DiffArray pointwise_linear(const DiffArray& x, const DiffArray& w, const DiffArray& b);

    DiffArray softmax_lastdim(const DiffArray& x);
    DiffArray relu(const DiffArray& x);
    DiffArray sqrt_elem(const DiffArray& x);

    /// Max over `axis` (axis removed). Ties route the gradient to the lowest index.
    DiffArray max_reduce(const DiffArray& x, int axis);
    DiffArray concat(std::span<const DiffArray> parts, int axis);
    /// x viewed as [rows, rest]; out[i] = x[indices[i]]. Backward scatter-adds.
    DiffArray gather_rows(const DiffArray& x, std::span<const std::int64_t> indices);
    /// Repeats an extent-1 axis `times` times.
    DiffArray tile_axis(const DiffArray& x, int axis, int times);
    /// Columns [begin, end) of the last axis.
    DiffArray slice_lastdim(const DiffArray& x, std::int64_t begin, std::int64_t end);

    DiffArray sum_all(const DiffArray& x);
    DiffArray mean_all(const DiffArray& x);
    /// sum(x*x) as one node; the workhorse of the weight-decay term.
    DiffArray squared_norm(const DiffArray& x);

    /// root must be scalar. Leaf gradients accumulate across calls (and across
    /// tapes); intermediate gradients are reset at the start of every call.
    void backward(const DiffArray& root);

    void clear();
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        const char* op;
        std::shared_ptr<detail::ArrayStorage> out;
        std::function<void()> pull;  // accumulate d(out) into inputs
    };

    DiffArray make_out(Shape shape, bool requires_grad);
    void record(const char* op, const DiffArray& out, std::function<void()> pull);

    std::vector<Node> nodes_;
};

/// Standard Adam with bias correction; zeroes gradients afterwards.
/// Every parameter must have a populated gradient buffer.
void adam_step(std::span<DiffArray> params, AdamState& state);

}  // namespace eva
