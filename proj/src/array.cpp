#include "eva/array.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "eva/errors.hpp"

namespace eva {

std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (const auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

using detail::ArrayStorage;

std::shared_ptr<ArrayStorage> make_storage(Shape shape, std::vector<double> values) {
    const auto expected = shape_size(shape);
    if (expected < 0 || static_cast<std::size_t>(expected) != values.size()) {
        throw DimensionError("array data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto s = std::make_shared<ArrayStorage>();
    s->shape = std::move(shape);
    s->data = std::make_shared<std::vector<double>>(std::move(values));
    // Allocated empty up front so reshape views alias the same vector even
    // when the gradient is first touched after the view was made.
    s->grad = std::make_shared<std::vector<double>>();
    return s;
}

double* ensure_grad(ArrayStorage& s) {
    if (s.grad->empty()) s.grad->assign(s.data->size(), 0.0);
    return s.grad->data();
}

void check_same_shape(const char* op, const DiffArray& a, const DiffArray& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

int normalize_axis(const char* op, int axis, std::size_t ndim) {
    int a = axis;
    if (a < 0) a += static_cast<int>(ndim);
    if (a < 0 || a >= static_cast<int>(ndim)) {
        throw ArgumentError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                            std::to_string(ndim));
    }
    return a;
}

constexpr std::int64_t kGemmParallelCutoff = 1 << 18;
constexpr std::int64_t kElemParallelCutoff = 1 << 16;

// All GEMM variants accumulate each output element as a single fixed-order
// sum over the inner dimension, so results are bit-identical for any thread
// count.

// c[m,n] += a[m,k] * b[k,n]; p unrolled 4x so each pass over the c row does
// four fused multiply-adds per load/store.
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static) if (m * n * k > kGemmParallelCutoff)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        std::int64_t p = 0;
        for (; p + 4 <= k; p += 4) {
            const double a0 = ai[p];
            const double a1 = ai[p + 1];
            const double a2 = ai[p + 2];
            const double a3 = ai[p + 3];
            const double* b0 = b + p * n;
            const double* b1 = b0 + n;
            const double* b2 = b1 + n;
            const double* b3 = b2 + n;
            for (std::int64_t j = 0; j < n; ++j) {
                ci[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
        }
        for (; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T; four dot products share each pass over a_i.
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static) if (m * n * k > kGemmParallelCutoff)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        std::int64_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = b + j * k;
            const double* b1 = b0 + k;
            const double* b2 = b1 + k;
            const double* b3 = b2 + k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::int64_t p = 0; p < k; ++p) {
                const double av = ai[p];
                s0 += av * b0[p];
                s1 += av * b1[p];
                s2 += av * b2[p];
                s3 += av * b3[p];
            }
            ci[j] += s0;
            ci[j + 1] += s1;
            ci[j + 2] += s2;
            ci[j + 3] += s3;
        }
        for (; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::int64_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// c[m,n] += a[k,m]^T * b[k,n]; transposes a once instead of striding k times.
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b, double* c) {
    std::vector<double> at(static_cast<std::size_t>(m * k));
#pragma omp parallel for schedule(static) if (m * k > kElemParallelCutoff)
    for (std::int64_t i = 0; i < m; ++i) {
        double* ati = at.data() + i * k;
        for (std::int64_t p = 0; p < k; ++p) ati[p] = a[p * m + i];
    }
    gemm_nn(m, n, k, at.data(), b, c);
}

struct BatchLayout {
    Shape batch;            // broadcast batch extents
    std::int64_t count = 1; // product of batch extents
    std::int64_t stride_a = 0;
    std::int64_t stride_b = 0;
    bool broadcast = false;
};

// Leading extents must agree or be 1 (padded on the left with 1s).
BatchLayout batch_layout(const char* op, const Shape& sa, const Shape& sb) {
    const std::size_t ndim = std::max(sa.size(), sb.size());
    const std::size_t pad_a = ndim - sa.size();
    const std::size_t pad_b = ndim - sb.size();
    BatchLayout bl;
    std::int64_t batch_a = 1;
    std::int64_t batch_b = 1;
    for (std::size_t d = 0; d + 2 < ndim; ++d) {
        // aligned from the right, shorter shape padded with leading 1s
        const std::int64_t ea = d >= pad_a ? sa[d - pad_a] : 1;
        const std::int64_t eb = d >= pad_b ? sb[d - pad_b] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw DimensionError(std::string(op) + ": batch extents of " + shape_str(sa) + " and " +
                                 shape_str(sb) + " do not broadcast");
        }
        const std::int64_t e = std::max(ea, eb);
        bl.batch.push_back(e);
        bl.count *= e;
        batch_a *= ea;
        batch_b *= eb;
    }
    if (batch_a != bl.count || batch_b != bl.count) bl.broadcast = true;
    // Only all-or-nothing broadcast is supported: either the full batch or a
    // single panel. That covers every use in this codebase.
    if (batch_a != bl.count && batch_a != 1) {
        throw DimensionError(std::string(op) + ": unsupported partial broadcast of " + shape_str(sa));
    }
    if (batch_b != bl.count && batch_b != 1) {
        throw DimensionError(std::string(op) + ": unsupported partial broadcast of " + shape_str(sb));
    }
    bl.stride_a = batch_a == 1 ? 0 : 1;
    bl.stride_b = batch_b == 1 ? 0 : 1;
    return bl;
}

}  // namespace

DiffArray DiffArray::zeros(Shape shape) {
    const auto n = shape_size(shape);
    return DiffArray(make_storage(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0)));
}

DiffArray DiffArray::full(Shape shape, double value) {
    const auto n = shape_size(shape);
    return DiffArray(make_storage(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value)));
}

DiffArray DiffArray::from_data(Shape shape, std::vector<double> values) {
    return DiffArray(make_storage(std::move(shape), std::move(values)));
}

DiffArray DiffArray::scalar(double value) { return from_data({1}, {value}); }

DiffArray DiffArray::param(Shape shape, std::vector<double> values) {
    auto arr = from_data(std::move(shape), std::move(values));
    arr.storage_->requires_grad = true;
    arr.storage_->leaf = true;
    return arr;
}

std::int64_t DiffArray::extent(int axis) const {
    const int a = normalize_axis("extent", axis, shape().size());
    return shape()[static_cast<std::size_t>(a)];
}

double DiffArray::item() const {
    if (size() != 1) throw ContractError("item(): array " + shape_str(shape()) + " is not scalar");
    return (*storage_->data)[0];
}

bool DiffArray::all_finite() const {
    for (const double v : *storage_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::span<const double> DiffArray::grad() const {
    if (!has_grad()) return {};
    return {storage_->grad->data(), storage_->grad->size()};
}

double* DiffArray::grad_data() { return ensure_grad(*storage_); }

void DiffArray::zero_grad() {
    if (storage_->grad) std::fill(storage_->grad->begin(), storage_->grad->end(), 0.0);
}

DiffArray DiffArray::reshape(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw DimensionError("reshape: cannot view " + shape_str(this->shape()) + " as " + shape_str(shape));
    }
    auto s = std::make_shared<ArrayStorage>(*storage_);
    s->shape = std::move(shape);
    return DiffArray(std::move(s));
}

DiffArray DiffArray::detached_copy() const { return from_data(shape(), *storage_->data); }

DiffArray DiffArray::gradient_shadow() const {
    auto s = std::make_shared<ArrayStorage>(*storage_);
    s->grad = std::make_shared<std::vector<double>>();
    return DiffArray(std::move(s));
}

DiffArray Tape::make_out(Shape shape, bool requires_grad) {
    auto arr = DiffArray::zeros(std::move(shape));
    arr.storage_->requires_grad = requires_grad;
    return arr;
}

void Tape::record(const char* op, const DiffArray& out, std::function<void()> pull) {
    if (!out.requires_grad()) return;
    nodes_.push_back(Node{op, out.storage_, std::move(pull)});
}

void Tape::clear() { nodes_.clear(); }

void Tape::backward(const DiffArray& root) {
    if (!root.defined() || root.size() != 1) {
        throw ContractError("backward: root must be a scalar array");
    }
    if (!root.requires_grad()) {
        throw ContractError("backward: root does not depend on any tracked parameter");
    }
    // Intermediates restart from zero every call; leaves keep accumulating.
    for (auto& node : nodes_) {
        if (node.out->grad->empty()) {
            node.out->grad->assign(node.out->data->size(), 0.0);  // fresh buffer arrives zeroed
        } else {
            std::fill(node.out->grad->begin(), node.out->grad->end(), 0.0);
        }
    }
    ensure_grad(*root.storage_)[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
}

DiffArray Tape::add(const DiffArray& a, const DiffArray& b) {
    check_same_shape("add", a, b);
    auto out = make_out(a.shape(), a.requires_grad() || b.requires_grad());
    const auto n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
#pragma omp parallel for simd schedule(static) if (n > kElemParallelCutoff)
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    record("add", out, [sa = a.storage_, sb = b.storage_, so = out.storage_]() {
        const double* g = so->grad->data();
        const auto n2 = static_cast<std::int64_t>(so->data->size());
        if (sa->requires_grad) {
            double* ga = ensure_grad(*sa);
            for (std::int64_t i = 0; i < n2; ++i) ga[i] += g[i];
        }
        if (sb->requires_grad) {
            double* gb = ensure_grad(*sb);
            for (std::int64_t i = 0; i < n2; ++i) gb[i] += g[i];
        }
    });
    return out;
}

DiffArray Tape::sub(const DiffArray& a, const DiffArray& b) {
    check_same_shape("sub", a, b);
    auto out = make_out(a.shape(), a.requires_grad() || b.requires_grad());
    const auto n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
#pragma omp parallel for simd schedule(static) if (n > kElemParallelCutoff)
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    record("sub", out, [sa = a.storage_, sb = b.storage_, so = out.storage_]() {
        const double* g = so->grad->data();
        const auto n2 = static_cast<std::int64_t>(so->data->size());
        if (sa->requires_grad) {
            double* ga = ensure_grad(*sa);
            for (std::int64_t i = 0; i < n2; ++i) ga[i] += g[i];
        }
        if (sb->requires_grad) {
            double* gb = ensure_grad(*sb);
            for (std::int64_t i = 0; i < n2; ++i) gb[i] -= g[i];
        }
    });
    return out;
}

DiffArray Tape::mul(const DiffArray& a, const DiffArray& b) {
    check_same_shape("mul", a, b);
    auto out = make_out(a.shape(), a.requires_grad() || b.requires_grad());
    const auto n = a.size();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
#pragma omp parallel for simd schedule(static) if (n > kElemParallelCutoff)
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    record("mul", out, [sa = a.storage_, sb = b.storage_, so = out.storage_]() {
        const double* g = so->grad->data();
        const auto n2 = static_cast<std::int64_t>(so->data->size());
        // a and b may alias (x*x); accumulation handles that correctly.
        if (sa->requires_grad) {
            double* ga = ensure_grad(*sa);
            const double* pb2 = sb->data->data();
            for (std::int64_t i = 0; i < n2; ++i) ga[i] += g[i] * pb2[i];
        }
        if (sb->requires_grad) {
            double* gb = ensure_grad(*sb);
            const double* pa2 = sa->data->data();
            for (std::int64_t i = 0; i < n2; ++i) gb[i] += g[i] * pa2[i];
        }
    });
    return out;
}

DiffArray Tape::scale(const DiffArray& a, double factor) {
    auto out = make_out(a.shape(), a.requires_grad());
    const auto n = a.size();
    const double* pa = a.data();
    double* po = out.data();
#pragma omp parallel for simd schedule(static) if (n > kElemParallelCutoff)
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * factor;
    record("scale", out, [sa = a.storage_, so = out.storage_, factor]() {
        const double* g = so->grad->data();
        double* ga = ensure_grad(*sa);
        const auto n2 = static_cast<std::int64_t>(so->data->size());
        for (std::int64_t i = 0; i < n2; ++i) ga[i] += g[i] * factor;
    });
    return out;
}

DiffArray Tape::add_scalar(const DiffArray& a, double value) {
    auto out = make_out(a.shape(), a.requires_grad());
    const auto n = a.size();
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + value;
    record("add_scalar", out, [sa = a.storage_, so = out.storage_]() {
        const double* g = so->grad->data();
        double* ga = ensure_grad(*sa);
        const auto n2 = static_cast<std::int64_t>(so->data->size());
        for (std::int64_t i = 0; i < n2; ++i) ga[i] += g[i];
    });
    return out;
}

DiffArray Tape::matmul(const DiffArray& a, const DiffArray& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) {
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " +
                             shape_str(sb));
    }
    const std::int64_t m = sa[sa.size() - 2];
    const std::int64_t k = sa[sa.size() - 1];
    const std::int64_t kb = sb[sb.size() - 2];
    const std::int64_t n = sb[sb.size() - 1];
    if (k != kb) {
        throw DimensionError("matmul: inner extents of " + shape_str(sa) + " and " + shape_str(sb) +
                             " disagree");
    }
    const BatchLayout bl = batch_layout("matmul", sa, sb);
    Shape out_shape = bl.batch;
    out_shape.push_back(m);
    out_shape.push_back(n);

    auto out = make_out(out_shape, a.requires_grad() || b.requires_grad());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const std::int64_t pane_a = m * k;
    const std::int64_t pane_b = k * n;
    const std::int64_t pane_o = m * n;
    if (bl.count == 1) {
        gemm_nn(m, n, k, pa, pb, po);
    } else {
#pragma omp parallel for schedule(static) if (bl.count * pane_o * k > kGemmParallelCutoff)
        for (std::int64_t c = 0; c < bl.count; ++c) {
            gemm_nn(m, n, k, pa + c * bl.stride_a * pane_a, pb + c * bl.stride_b * pane_b, po + c * pane_o);
        }
    }

    record("matmul", out, [sa2 = a.storage_, sb2 = b.storage_, so = out.storage_, bl, m, n, k, pane_a,
                           pane_b, pane_o]() {
        const double* g = so->grad->data();
        const double* pa2 = sa2->data->data();
        const double* pb2 = sb2->data->data();
        // Broadcast panels accumulate across the batch, so the batch loop stays
        // serial; the panel kernels parallelize internally.
        if (sa2->requires_grad) {
            double* ga = ensure_grad(*sa2);
            for (std::int64_t c = 0; c < bl.count; ++c) {
                gemm_nt(m, k, n, g + c * pane_o, pb2 + c * bl.stride_b * pane_b, ga + c * bl.stride_a * pane_a);
            }
        }
        if (sb2->requires_grad) {
            double* gb = ensure_grad(*sb2);
            for (std::int64_t c = 0; c < bl.count; ++c) {
                gemm_tn(k, n, m, pa2 + c * bl.stride_a * pane_a, g + c * pane_o, gb + c * bl.stride_b * pane_b);
            }
        }
    });
    return out;
}

DiffArray Tape::transpose_last2(const DiffArray& a) {
    const auto& sa = a.shape();
    if (sa.size() < 2) throw DimensionError("transpose_last2: rank < 2 array " + shape_str(sa));
    const std::int64_t m = sa[sa.size() - 2];
    const std::int64_t n = sa[sa.size() - 1];
    Shape out_shape = sa;
    out_shape[sa.size() - 2] = n;
    out_shape[sa.size() - 1] = m;
    const std::int64_t panes = a.size() / (m * n);

    auto out = make_out(out_shape, a.requires_grad());
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t c = 0; c < panes; ++c) {
        const double* src = pa + c * m * n;
        double* dst = po + c * m * n;
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }
    record("transpose_last2", out, [sa2 = a.storage_, so = out.storage_, m, n, panes]() {
        const double* g = so->grad->data();
        double* ga = ensure_grad(*sa2);
        for (std::int64_t c = 0; c < panes; ++c) {
            const double* gsrc = g + c * m * n;
            double* gdst = ga + c * m * n;
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t i = 0; i < m; ++i) gdst[i * n + j] += gsrc[j * m + i];
        }
    });
    return out;
}

DiffArray Tape::pointwise_linear(const DiffArray& x, const DiffArray& w, const DiffArray& b) {
    const auto& sx = x.shape();
    if (sx.empty() || w.shape().size() != 2 || b.shape().size() != 1) {
        throw DimensionError("pointwise_linear: expected x[..,C_in], w[C_in,C_out], b[C_out]");
    }
    const std::int64_t c_in = sx.back();
    const std::int64_t c_out = w.shape()[1];
    if (w.shape()[0] != c_in || b.shape()[0] != c_out) {
        throw DimensionError("pointwise_linear: channel mismatch, x " + shape_str(sx) + " vs w " +
                             shape_str(w.shape()) + " vs b " + shape_str(b.shape()));
    }
    const std::int64_t rows = x.size() / c_in;
    Shape out_shape = sx;
    out_shape.back() = c_out;

    auto out = make_out(out_shape, x.requires_grad() || w.requires_grad() || b.requires_grad());
    double* po = out.data();
    const double* pb = b.data();
#pragma omp parallel for schedule(static) if (rows * c_out > kElemParallelCutoff)
    for (std::int64_t i = 0; i < rows; ++i) {
        double* oi = po + i * c_out;
        for (std::int64_t j = 0; j < c_out; ++j) oi[j] = pb[j];
    }
    gemm_nn(rows, c_out, c_in, x.data(), w.data(), po);

    record("pointwise_linear", out,
           [sx2 = x.storage_, sw = w.storage_, sb = b.storage_, so = out.storage_, rows, c_in, c_out]() {
               const double* g = so->grad->data();
               if (sx2->requires_grad) {
                   gemm_nt(rows, c_in, c_out, g, sw->data->data(), ensure_grad(*sx2));
               }
               if (sw->requires_grad) {
                   gemm_tn(c_in, c_out, rows, sx2->data->data(), g, ensure_grad(*sw));
               }
               if (sb->requires_grad) {
                   double* gb = ensure_grad(*sb);
                   for (std::int64_t i = 0; i < rows; ++i) {
                       const double* gi = g + i * c_out;
                       for (std::int64_t j = 0; j < c_out; ++j) gb[j] += gi[j];
                   }
               }
           });
    return out;
}

DiffArray Tape::softmax_lastdim(const DiffArray& x) {
    const auto& sx = x.shape();
    if (sx.empty() || sx.back() < 1) throw DimensionError("softmax_lastdim: empty last axis in " + shape_str(sx));
    if (!x.all_finite()) throw NumericError("softmax_lastdim: non-finite input");
    const std::int64_t width = sx.back();
    const std::int64_t rows = x.size() / width;

    auto out = make_out(sx, x.requires_grad());
    const double* px = x.data();
    double* po = out.data();
#pragma omp parallel for schedule(static) if (rows * width > kElemParallelCutoff)
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* xi = px + i * width;
        double* oi = po + i * width;
        double mx = xi[0];
        for (std::int64_t j = 1; j < width; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < width; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        const double inv = 1.0 / sum;
        for (std::int64_t j = 0; j < width; ++j) oi[j] *= inv;
    }
    record("softmax_lastdim", out, [sx2 = x.storage_, so = out.storage_, rows, width]() {
        const double* g = so->grad->data();
        const double* y = so->data->data();
        double* gx = ensure_grad(*sx2);
        for (std::int64_t i = 0; i < rows; ++i) {
            const double* gi = g + i * width;
            const double* yi = y + i * width;
            double dot = 0.0;
            for (std::int64_t j = 0; j < width; ++j) dot += gi[j] * yi[j];
            double* gxi = gx + i * width;
            for (std::int64_t j = 0; j < width; ++j) gxi[j] += yi[j] * (gi[j] - dot);
        }
    });
    return out;
}

DiffArray Tape::relu(const DiffArray& x) {
    auto out = make_out(x.shape(), x.requires_grad());
    const auto n = x.size();
    const double* px = x.data();
    double* po = out.data();
#pragma omp parallel for simd schedule(static) if (n > kElemParallelCutoff)
    for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    record("relu", out, [sx = x.storage_, so = out.storage_]() {
        const double* g = so->grad->data();
        const double* px2 = sx->data->data();
        double* gx = ensure_grad(*sx);
        const auto n2 = static_cast<std::int64_t>(so->data->size());
        for (std::int64_t i = 0; i < n2; ++i) {
            if (px2[i] > 0.0) gx[i] += g[i];
        }
    });
    return out;
}

DiffArray Tape::sqrt_elem(const DiffArray& x) {
    auto out = make_out(x.shape(), x.requires_grad());
    const auto n = x.size();
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) {
        if (px[i] < 0.0) throw NumericError("sqrt_elem: negative input " + std::to_string(px[i]));
        po[i] = std::sqrt(px[i]);
    }
    record("sqrt_elem", out, [sx = x.storage_, so = out.storage_]() {
        const double* g = so->grad->data();
        const double* y = so->data->data();
        double* gx = ensure_grad(*sx);
        const auto n2 = static_cast<std::int64_t>(so->data->size());
        for (std::int64_t i = 0; i < n2; ++i) {
            if (y[i] > 0.0) gx[i] += g[i] * 0.5 / y[i];  // subgradient 0 at the origin
        }
    });
    return out;
}

DiffArray Tape::max_reduce(const DiffArray& x, int axis) {
    const auto& sx = x.shape();
    const int ax = normalize_axis("max_reduce", axis, sx.size());
    const std::int64_t extent = sx[static_cast<std::size_t>(ax)];
    std::int64_t outer = 1;
    std::int64_t inner = 1;
    for (int d = 0; d < ax; ++d) outer *= sx[static_cast<std::size_t>(d)];
    for (std::size_t d = static_cast<std::size_t>(ax) + 1; d < sx.size(); ++d) inner *= sx[d];
    Shape out_shape;
    for (std::size_t d = 0; d < sx.size(); ++d) {
        if (static_cast<int>(d) != ax) out_shape.push_back(sx[d]);
    }
    if (out_shape.empty()) out_shape.push_back(1);

    auto out = make_out(out_shape, x.requires_grad());
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(outer * inner));
    const double* px = x.data();
    double* po = out.data();
    std::int64_t* parg = argmax->data();
#pragma omp parallel for schedule(static) if (outer * inner * extent > kElemParallelCutoff)
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const double* base = px + (o * extent) * inner + in;
            double best = base[0];
            std::int64_t best_e = 0;
            for (std::int64_t e = 1; e < extent; ++e) {
                const double v = base[e * inner];
                if (v > best) {  // strict: ties keep the lowest index
                    best = v;
                    best_e = e;
                }
            }
            po[o * inner + in] = best;
            parg[o * inner + in] = (o * extent + best_e) * inner + in;
        }
    }
    record("max_reduce", out, [sx2 = x.storage_, so = out.storage_, argmax]() {
        const double* g = so->grad->data();
        double* gx = ensure_grad(*sx2);
        const auto n2 = static_cast<std::int64_t>(so->data->size());
        for (std::int64_t i = 0; i < n2; ++i) gx[(*argmax)[static_cast<std::size_t>(i)]] += g[i];
    });
    return out;
}

DiffArray Tape::concat(std::span<const DiffArray> parts, int axis) {
    if (parts.empty()) throw ArgumentError("concat: no inputs");
    const auto& s0 = parts[0].shape();
    const int ax = normalize_axis("concat", axis, s0.size());
    std::int64_t total = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        const auto& sp = p.shape();
        if (sp.size() != s0.size()) {
            throw DimensionError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(sp));
        }
        for (std::size_t d = 0; d < sp.size(); ++d) {
            if (static_cast<int>(d) != ax && sp[d] != s0[d]) {
                throw DimensionError("concat: extent mismatch " + shape_str(s0) + " vs " + shape_str(sp));
            }
        }
        total += sp[static_cast<std::size_t>(ax)];
        needs_grad = needs_grad || p.requires_grad();
    }
    Shape out_shape = s0;
    out_shape[static_cast<std::size_t>(ax)] = total;

    std::int64_t outer = 1;
    std::int64_t inner = 1;
    for (int d = 0; d < ax; ++d) outer *= s0[static_cast<std::size_t>(d)];
    for (std::size_t d = static_cast<std::size_t>(ax) + 1; d < s0.size(); ++d) inner *= s0[d];

    auto out = make_out(out_shape, needs_grad);
    double* po = out.data();
    const std::int64_t out_stride = total * inner;
    std::int64_t offset = 0;
    struct Piece {
        std::shared_ptr<ArrayStorage> storage;
        std::int64_t offset;
        std::int64_t width;  // extent-at-axis * inner
    };
    std::vector<Piece> pieces;
    pieces.reserve(parts.size());
    for (const auto& p : parts) {
        const std::int64_t width = p.shape()[static_cast<std::size_t>(ax)] * inner;
        const double* pp = p.data();
#pragma omp parallel for schedule(static) if (outer * width > kElemParallelCutoff)
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy(pp + o * width, pp + (o + 1) * width, po + o * out_stride + offset);
        }
        pieces.push_back({p.storage_, offset, width});
        offset += width;
    }
    record("concat", out, [pieces, so = out.storage_, outer, out_stride]() {
        const double* g = so->grad->data();
        for (const auto& piece : pieces) {
            if (!piece.storage->requires_grad) continue;
            double* gp = ensure_grad(*piece.storage);
            for (std::int64_t o = 0; o < outer; ++o) {
                const double* gsrc = g + o * out_stride + piece.offset;
                double* gdst = gp + o * piece.width;
                for (std::int64_t j = 0; j < piece.width; ++j) gdst[j] += gsrc[j];
            }
        }
    });
    return out;
}

DiffArray Tape::gather_rows(const DiffArray& x, std::span<const std::int64_t> indices) {
    const auto& sx = x.shape();
    if (sx.empty()) throw DimensionError("gather_rows: rank-0 input");
    const std::int64_t rows = sx[0];
    const std::int64_t width = x.size() / std::max<std::int64_t>(rows, 1);
    for (const auto idx : indices) {
        if (idx < 0 || idx >= rows) {
            throw IndexError("gather_rows: index " + std::to_string(idx) + " out of range [0," +
                             std::to_string(rows) + ")");
        }
    }
    Shape out_shape = sx;
    out_shape[0] = static_cast<std::int64_t>(indices.size());

    auto out = make_out(out_shape, x.requires_grad());
    const double* px = x.data();
    double* po = out.data();
    const std::int64_t count = static_cast<std::int64_t>(indices.size());
#pragma omp parallel for schedule(static) if (count * width > kElemParallelCutoff)
    for (std::int64_t i = 0; i < count; ++i) {
        const double* src = px + indices[static_cast<std::size_t>(i)] * width;
        std::copy(src, src + width, po + i * width);
    }
    auto saved = std::make_shared<std::vector<std::int64_t>>(indices.begin(), indices.end());
    record("gather_rows", out, [sx2 = x.storage_, so = out.storage_, saved, width]() {
        const double* g = so->grad->data();
        double* gx = ensure_grad(*sx2);
        // Indices repeat, so the scatter-add stays serial for determinism.
        for (std::size_t i = 0; i < saved->size(); ++i) {
            const double* gsrc = g + static_cast<std::int64_t>(i) * width;
            double* gdst = gx + (*saved)[i] * width;
            for (std::int64_t j = 0; j < width; ++j) gdst[j] += gsrc[j];
        }
    });
    return out;
}

DiffArray Tape::tile_axis(const DiffArray& x, int axis, int times) {
    const auto& sx = x.shape();
    const int ax = normalize_axis("tile_axis", axis, sx.size());
    if (sx[static_cast<std::size_t>(ax)] != 1) {
        throw DimensionError("tile_axis: axis " + std::to_string(axis) + " of " + shape_str(sx) +
                             " must have extent 1");
    }
    if (times < 1) throw ArgumentError("tile_axis: times must be >= 1");
    std::int64_t outer = 1;
    std::int64_t inner = 1;
    for (int d = 0; d < ax; ++d) outer *= sx[static_cast<std::size_t>(d)];
    for (std::size_t d = static_cast<std::size_t>(ax) + 1; d < sx.size(); ++d) inner *= sx[d];
    Shape out_shape = sx;
    out_shape[static_cast<std::size_t>(ax)] = times;

    auto out = make_out(out_shape, x.requires_grad());
    const double* px = x.data();
    double* po = out.data();
#pragma omp parallel for schedule(static) if (outer * times * inner > kElemParallelCutoff)
    for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = px + o * inner;
        for (int t = 0; t < times; ++t) std::copy(src, src + inner, po + (o * times + t) * inner);
    }
    record("tile_axis", out, [sx2 = x.storage_, so = out.storage_, outer, inner, times]() {
        const double* g = so->grad->data();
        double* gx = ensure_grad(*sx2);
        for (std::int64_t o = 0; o < outer; ++o) {
            double* gdst = gx + o * inner;
            for (int t = 0; t < times; ++t) {
                const double* gsrc = g + (o * static_cast<std::int64_t>(times) + t) * inner;
                for (std::int64_t j = 0; j < inner; ++j) gdst[j] += gsrc[j];
            }
        }
    });
    return out;
}

DiffArray Tape::slice_lastdim(const DiffArray& x, std::int64_t begin, std::int64_t end) {
    const auto& sx = x.shape();
    if (sx.empty()) throw DimensionError("slice_lastdim: rank-0 input");
    const std::int64_t width = sx.back();
    if (begin < 0 || end > width || begin >= end) {
        throw ArgumentError("slice_lastdim: range [" + std::to_string(begin) + "," + std::to_string(end) +
                            ") invalid for width " + std::to_string(width));
    }
    Shape out_shape = sx;
    out_shape.back() = end - begin;
    const std::int64_t rows = x.size() / width;
    const std::int64_t out_width = end - begin;

    auto out = make_out(out_shape, x.requires_grad());
    const double* px = x.data();
    double* po = out.data();
#pragma omp parallel for schedule(static) if (rows * out_width > kElemParallelCutoff)
    for (std::int64_t i = 0; i < rows; ++i) {
        std::copy(px + i * width + begin, px + i * width + end, po + i * out_width);
    }
    record("slice_lastdim", out, [sx2 = x.storage_, so = out.storage_, rows, width, begin, out_width]() {
        const double* g = so->grad->data();
        double* gx = ensure_grad(*sx2);
        for (std::int64_t i = 0; i < rows; ++i) {
            const double* gsrc = g + i * out_width;
            double* gdst = gx + i * width + begin;
            for (std::int64_t j = 0; j < out_width; ++j) gdst[j] += gsrc[j];
        }
    });
    return out;
}

DiffArray Tape::sum_all(const DiffArray& x) {
    auto out = make_out({1}, x.requires_grad());
    const auto n = x.size();
    const double* px = x.data();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += px[i];
    out.data()[0] = s;
    record("sum_all", out, [sx = x.storage_, so = out.storage_]() {
        const double g = (*so->grad)[0];
        double* gx = ensure_grad(*sx);
        const auto n2 = static_cast<std::int64_t>(sx->data->size());
        for (std::int64_t i = 0; i < n2; ++i) gx[i] += g;
    });
    return out;
}

DiffArray Tape::mean_all(const DiffArray& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

DiffArray Tape::squared_norm(const DiffArray& x) {
    auto out = make_out({1}, x.requires_grad());
    const auto n = x.size();
    const double* px = x.data();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += px[i] * px[i];
    out.data()[0] = s;
    record("squared_norm", out, [sx = x.storage_, so = out.storage_]() {
        const double g = (*so->grad)[0];
        const double* px2 = sx->data->data();
        double* gx = ensure_grad(*sx);
        const auto n2 = static_cast<std::int64_t>(sx->data->size());
        for (std::int64_t i = 0; i < n2; ++i) gx[i] += 2.0 * g * px2[i];
    });
    return out;
}

void adam_step(std::span<DiffArray> params, AdamState& state) {
    if (state.m.empty() && state.v.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ContractError("adam_step: moment buffers track a different parameter list");
    }
    for (auto& p : params) {
        if (!p.has_grad()) throw ContractError("adam_step: parameter " + shape_str(p.shape()) + " has no gradient");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const auto n = static_cast<std::size_t>(p.size());
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.empty()) m.assign(n, 0.0);
        if (v.empty()) v.assign(n, 0.0);
        if (m.size() != n || v.size() != n) {
            throw ContractError("adam_step: moment shape does not match parameter " + shape_str(p.shape()));
        }
        double* x = p.data();
        const double* g = p.grad().data();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            x[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        p.zero_grad();
    }
}

}  // namespace eva
