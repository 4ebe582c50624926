#include "dca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dca/kernels.hpp"

namespace dca {

namespace {

using i64 = std::int64_t;

thread_local Tape* t_active_tape = nullptr;

i64 prod(const std::vector<i64>& shape) {
    return std::accumulate(shape.begin(), shape.end(), i64{1}, std::multiplies<>());
}

int norm_axis(int axis, int ndim, const char* op) {
    const int a = axis < 0 ? axis + ndim : axis;
    if (a < 0 || a >= ndim) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(ndim));
    }
    return a;
}

// Decompose a shape around `axis` into [outer, alen, inner].
struct AxisView {
    i64 outer = 1, alen = 1, inner = 1;
};

AxisView axis_view(const std::vector<i64>& shape, int axis) {
    AxisView v;
    for (int d = 0; d < axis; ++d) v.outer *= shape[d];
    v.alen = shape[axis];
    for (int d = axis + 1; d < static_cast<int>(shape.size()); ++d) v.inner *= shape[d];
    return v;
}

bool record_needed(std::initializer_list<const Tensor*> ins) {
    if (!Tape::active()) return false;
    for (const Tensor* t : ins) {
        if (t->requires_grad) return true;
    }
    return false;
}

Tensor make_out(std::vector<i64> shape, bool rec) {
    Tensor t = make_tensor(std::move(shape), false);
    if (rec) {
        t.requires_grad = true;
        t.ensure_grad();
    }
    return t;
}

// True when b's shape is a strict trailing suffix of a's.
bool is_suffix(const std::vector<i64>& a, const std::vector<i64>& b) {
    if (b.size() >= a.size()) return false;
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

void check_binary_shapes(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape == b.shape || is_suffix(a.shape, b.shape)) return;
    throw ShapeError(std::string(op) + ": incompatible shapes " + format_shape(a.shape) +
                     " and " + format_shape(b.shape));
}

std::vector<i64> strides_of(const std::vector<i64>& shape) {
    std::vector<i64> st(shape.size(), 1);
    for (int d = static_cast<int>(shape.size()) - 2; d >= 0; --d) {
        st[d] = st[d + 1] * shape[d + 1];
    }
    return st;
}

}  // namespace

i64 Tensor::numel() const { return prod(shape); }

i64 Tensor::size(int d) const {
    const int nd = ndim();
    const int dd = d < 0 ? d + nd : d;
    if (dd < 0 || dd >= nd) {
        throw ShapeError("size: dim " + std::to_string(d) + " out of range for rank " +
                         std::to_string(nd));
    }
    return shape[dd];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item: tensor of shape " + format_shape(shape) + " is not scalar");
    }
    return (*data)[0];
}

double Tensor::at(std::initializer_list<i64> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) {
        throw ShapeError("at: rank mismatch");
    }
    const auto st = strides_of(shape);
    i64 flat = 0;
    int d = 0;
    for (i64 i : idx) {
        if (i < 0 || i >= shape[d]) throw ShapeError("at: index out of bounds");
        flat += i * st[d];
        ++d;
    }
    return (*data)[flat];
}

void Tensor::ensure_grad() {
    if (!requires_grad) {
        throw ShapeError("ensure_grad on a tensor that does not require grad");
    }
    if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    return t;
}

Tensor make_tensor(std::vector<i64> shape, bool requires_grad) {
    Tensor t;
    const i64 n = prod(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(n, 0.0);
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
    return t;
}

Tensor from_values(std::vector<i64> shape, std::vector<double> values, bool requires_grad) {
    const i64 n = prod(shape);
    if (n != static_cast<i64>(values.size())) {
        throw ShapeError("from_values: shape " + format_shape(shape) + " needs " +
                         std::to_string(n) + " values, got " + std::to_string(values.size()));
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
    return t;
}

Tensor full_like_value(std::vector<i64> shape, double value) {
    Tensor t = make_tensor(std::move(shape), false);
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

std::string format_shape(const std::vector<i64>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

i64 Tape::record(std::function<void()> rule) {
    nodes_.push_back(std::move(rule));
    return static_cast<i64>(nodes_.size()) - 1;
}

void Tape::backward(Tensor& root) {
    if (consumed_) {
        throw std::logic_error("Tape::backward: tape already consumed; re-run forward first");
    }
    if (root.numel() != 1 || !root.requires_grad || !root.grad) {
        throw ShapeError("Tape::backward: root must be a scalar that requires grad");
    }
    (*root.grad)[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    consumed_ = true;
    nodes_.clear();
}

Tape* Tape::active() { return t_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

// ---- ops ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_binary_shapes(a, b, "add");
    const bool rec = record_needed({&a, &b});
    Tensor out = make_out(a.shape, rec);
    const i64 n = a.numel();
    const i64 bn = b.numel();
    if (a.shape == b.shape) {
        kernels::ew_add(a.cdata(), b.cdata(), out.mdata(), n);
    } else {
        const double* pa = a.cdata();
        const double* pb = b.cdata();
        double* po = out.mdata();
        for (i64 i = 0; i < n; ++i) po[i] = pa[i] + pb[i % bn];
    }
    if (rec) {
        Tensor ac = a, bc = b, oc = out;
        out.node = Tape::active()->record([ac, bc, oc, n, bn]() mutable {
            const double* dy = oc.gdata();
            if (ac.grad) kernels::acc_scaled(ac.gdata(), dy, 1.0, n);
            if (bc.grad) {
                double* db = bc.gdata();
                for (i64 i = 0; i < n; ++i) db[i % bn] += dy[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_binary_shapes(a, b, "mul");
    const bool rec = record_needed({&a, &b});
    Tensor out = make_out(a.shape, rec);
    const i64 n = a.numel();
    const i64 bn = b.numel();
    if (a.shape == b.shape) {
        kernels::ew_mul(a.cdata(), b.cdata(), out.mdata(), n);
    } else {
        const double* pa = a.cdata();
        const double* pb = b.cdata();
        double* po = out.mdata();
        for (i64 i = 0; i < n; ++i) po[i] = pa[i] * pb[i % bn];
    }
    if (rec) {
        Tensor ac = a, bc = b, oc = out;
        out.node = Tape::active()->record([ac, bc, oc, n, bn]() mutable {
            const double* dy = oc.gdata();
            const double* pa = ac.cdata();
            const double* pb = bc.cdata();
            if (ac.grad) {
                double* da = ac.gdata();
                for (i64 i = 0; i < n; ++i) da[i] += dy[i] * pb[i % bn];
            }
            if (bc.grad) {
                double* db = bc.gdata();
                for (i64 i = 0; i < n; ++i) db[i % bn] += dy[i] * pa[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    const bool rec = record_needed({&a});
    Tensor out = make_out(a.shape, rec);
    kernels::ew_scale(a.cdata(), out.mdata(), c, a.numel());
    if (rec) {
        Tensor ac = a, oc = out;
        const i64 n = a.numel();
        out.node = Tape::active()->record([ac, oc, c, n]() mutable {
            if (ac.grad) kernels::acc_scaled(ac.gdata(), oc.gdata(), c, n);
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) {
        throw ShapeError("matmul: need rank >= 2, got " + format_shape(a.shape) + " x " +
                         format_shape(b.shape));
    }
    const i64 m = a.size(-2), k = a.size(-1);
    const i64 kb = b.size(-2), n = b.size(-1);
    const bool broadcast_b = b.ndim() == 2 && a.ndim() > 2;
    bool batch_ok = broadcast_b || a.ndim() == b.ndim();
    if (batch_ok && !broadcast_b) {
        for (int d = 0; d + 2 < a.ndim(); ++d) batch_ok = batch_ok && a.shape[d] == b.shape[d];
    }
    if (k != kb || !batch_ok) {
        throw ShapeError("matmul: incompatible shapes " + format_shape(a.shape) + " x " +
                         format_shape(b.shape));
    }
    i64 groups = 1;
    for (int d = 0; d + 2 < a.ndim(); ++d) groups *= a.shape[d];

    std::vector<i64> out_shape(a.shape.begin(), a.shape.end() - 1);
    out_shape.push_back(n);
    const bool rec = record_needed({&a, &b});
    Tensor out = make_out(std::move(out_shape), rec);
    kernels::gemm(a.cdata(), b.cdata(), out.mdata(), groups, m, k, n, broadcast_b);
    if (rec) {
        Tensor ac = a, bc = b, oc = out;
        out.node = Tape::active()->record([ac, bc, oc, groups, m, k, n, broadcast_b]() mutable {
            const double* dy = oc.gdata();
            if (ac.grad) kernels::gemm_acc_da(ac.gdata(), dy, bc.cdata(), groups, m, k, n, broadcast_b);
            if (bc.grad) kernels::gemm_acc_db(bc.gdata(), ac.cdata(), dy, groups, m, k, n, broadcast_b);
        });
    }
    return out;
}

namespace {

// out[idx] = in[idx with d0,d1 swapped]; accumulate variant for backward.
void transpose_apply(const double* src, double* dst, const std::vector<i64>& in_shape,
                     int d0, int d1, bool accumulate) {
    std::vector<i64> out_shape = in_shape;
    std::swap(out_shape[d0], out_shape[d1]);
    const auto in_st = strides_of(in_shape);
    const int nd = static_cast<int>(in_shape.size());
    std::vector<i64> idx(nd, 0);
    const i64 n = prod(in_shape);
    for (i64 f = 0; f < n; ++f) {
        i64 in_flat = 0;
        for (int d = 0; d < nd; ++d) {
            const i64 coord = d == d0 ? idx[d1] : d == d1 ? idx[d0] : idx[d];
            in_flat += coord * in_st[d];
        }
        if (accumulate) {
            dst[in_flat] += src[f];
        } else {
            dst[f] = src[in_flat];
        }
        for (int d = nd - 1; d >= 0; --d) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
}

}  // namespace

Tensor transpose(const Tensor& a, int dim0, int dim1) {
    const int d0 = norm_axis(dim0, a.ndim(), "transpose");
    const int d1 = norm_axis(dim1, a.ndim(), "transpose");
    std::vector<i64> out_shape = a.shape;
    std::swap(out_shape[d0], out_shape[d1]);
    const bool rec = record_needed({&a});
    Tensor out = make_out(out_shape, rec);
    transpose_apply(a.cdata(), out.mdata(), a.shape, d0, d1, false);
    if (rec) {
        Tensor ac = a, oc = out;
        out.node = Tape::active()->record([ac, oc, d0, d1]() mutable {
            if (!ac.grad) return;
            // dy is indexed by the output shape; scattering through the same
            // index map accumulates into the input layout.
            transpose_apply(oc.gdata(), ac.gdata(), ac.shape, d0, d1, true);
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<i64> new_shape) {
    if (prod(new_shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + format_shape(a.shape) + " as " +
                         format_shape(new_shape));
    }
    // Row-major view: shares data and grad, so gradients flow with no tape node.
    Tensor out;
    out.shape = std::move(new_shape);
    out.data = a.data;
    out.grad = a.grad;
    out.requires_grad = a.requires_grad;
    out.node = a.node;
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const int nd = parts[0].ndim();
    const int ax = norm_axis(axis, nd, "concat");
    std::vector<i64> out_shape = parts[0].shape;
    i64 total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < nd; ++d) {
            if (d != ax && p.shape[d] != out_shape[d]) {
                throw ShapeError("concat: shape mismatch " + format_shape(p.shape) + " vs " +
                                 format_shape(parts[0].shape));
            }
        }
        total += p.shape[ax];
    }
    out_shape[ax] = total;
    bool rec = false;
    if (Tape::active()) {
        for (const Tensor& p : parts) rec = rec || p.requires_grad;
    }
    Tensor out = make_out(out_shape, rec);
    const AxisView ov = axis_view(out_shape, ax);
    double* po = out.mdata();
    i64 off = 0;
    for (const Tensor& p : parts) {
        const i64 palen = p.shape[ax];
        const double* pp = p.cdata();
        for (i64 o = 0; o < ov.outer; ++o) {
            std::copy(pp + o * palen * ov.inner, pp + (o + 1) * palen * ov.inner,
                      po + (o * ov.alen + off) * ov.inner);
        }
        off += palen;
    }
    if (rec) {
        std::vector<Tensor> pc = parts;
        Tensor oc = out;
        out.node = Tape::active()->record([pc, oc, ov, ax]() mutable {
            const double* dy = oc.gdata();
            i64 off = 0;
            for (Tensor& p : pc) {
                const i64 palen = p.shape[ax];
                if (p.grad) {
                    double* dp = p.gdata();
                    for (i64 o = 0; o < ov.outer; ++o) {
                        const double* src = dy + (o * ov.alen + off) * ov.inner;
                        double* dst = dp + o * palen * ov.inner;
                        for (i64 i = 0; i < palen * ov.inner; ++i) dst[i] += src[i];
                    }
                }
                off += palen;
            }
        });
    }
    return out;
}

Tensor narrow(const Tensor& a, int axis, i64 start, i64 length) {
    const int ax = norm_axis(axis, a.ndim(), "narrow");
    if (start < 0 || length < 0 || start + length > a.shape[ax]) {
        throw ShapeError("narrow: range [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") outside axis of size " +
                         std::to_string(a.shape[ax]));
    }
    std::vector<i64> out_shape = a.shape;
    out_shape[ax] = length;
    const bool rec = record_needed({&a});
    Tensor out = make_out(out_shape, rec);
    const AxisView av = axis_view(a.shape, ax);
    const double* pa = a.cdata();
    double* po = out.mdata();
    for (i64 o = 0; o < av.outer; ++o) {
        const double* src = pa + (o * av.alen + start) * av.inner;
        std::copy(src, src + length * av.inner, po + o * length * av.inner);
    }
    if (rec) {
        Tensor ac = a, oc = out;
        out.node = Tape::active()->record([ac, oc, av, start, length]() mutable {
            if (!ac.grad) return;
            const double* dy = oc.gdata();
            double* da = ac.gdata();
            for (i64 o = 0; o < av.outer; ++o) {
                double* dst = da + (o * av.alen + start) * av.inner;
                const double* src = dy + o * length * av.inner;
                for (i64 i = 0; i < length * av.inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

std::vector<Tensor> split(const Tensor& a, int axis, const std::vector<i64>& sizes) {
    const int ax = norm_axis(axis, a.ndim(), "split");
    i64 total = 0;
    for (i64 s : sizes) total += s;
    if (total != a.shape[ax]) {
        throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis has " +
                         std::to_string(a.shape[ax]));
    }
    std::vector<Tensor> out;
    out.reserve(sizes.size());
    i64 start = 0;
    for (i64 s : sizes) {
        out.push_back(narrow(a, ax, start, s));
        start += s;
    }
    return out;
}

Tensor expand_leading(const Tensor& a, i64 n) {
    if (n < 1) throw ShapeError("expand_leading: n must be >= 1");
    std::vector<i64> out_shape;
    out_shape.push_back(n);
    out_shape.insert(out_shape.end(), a.shape.begin(), a.shape.end());
    const bool rec = record_needed({&a});
    Tensor out = make_out(out_shape, rec);
    const i64 an = a.numel();
    double* po = out.mdata();
    for (i64 r = 0; r < n; ++r) {
        std::copy(a.cdata(), a.cdata() + an, po + r * an);
    }
    if (rec) {
        Tensor ac = a, oc = out;
        out.node = Tape::active()->record([ac, oc, n, an]() mutable {
            if (!ac.grad) return;
            double* da = ac.gdata();
            const double* dy = oc.gdata();
            for (i64 r = 0; r < n; ++r) {
                for (i64 i = 0; i < an; ++i) da[i] += dy[r * an + i];
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    const int ax = norm_axis(axis, a.ndim(), "softmax");
    const bool rec = record_needed({&a});
    Tensor out = make_out(a.shape, rec);
    const AxisView av = axis_view(a.shape, ax);
    if (av.inner == 1) {
        kernels::softmax_rows(a.cdata(), out.mdata(), av.outer, av.alen);
    } else {
        // Strided slices: gather, compute, scatter. Rarely used path.
        std::vector<double> row(av.alen), res(av.alen);
        const double* pa = a.cdata();
        double* po = out.mdata();
        for (i64 o = 0; o < av.outer; ++o) {
            for (i64 i = 0; i < av.inner; ++i) {
                for (i64 j = 0; j < av.alen; ++j) row[j] = pa[(o * av.alen + j) * av.inner + i];
                kernels::softmax_rows_serial(row.data(), res.data(), 1, av.alen);
                for (i64 j = 0; j < av.alen; ++j) po[(o * av.alen + j) * av.inner + i] = res[j];
            }
        }
    }
    if (rec) {
        Tensor ac = a, oc = out;
        out.node = Tape::active()->record([ac, oc, av]() mutable {
            if (!ac.grad) return;
            if (av.inner == 1) {
                kernels::softmax_bwd_rows(ac.gdata(), oc.cdata(), oc.gdata(), av.outer, av.alen);
                return;
            }
            std::vector<double> y(av.alen), dy(av.alen), dx(av.alen);
            const double* py = oc.cdata();
            const double* pdy = oc.gdata();
            double* pdx = ac.gdata();
            for (i64 o = 0; o < av.outer; ++o) {
                for (i64 i = 0; i < av.inner; ++i) {
                    for (i64 j = 0; j < av.alen; ++j) {
                        const i64 f = (o * av.alen + j) * av.inner + i;
                        y[j] = py[f];
                        dy[j] = pdy[f];
                        dx[j] = 0.0;
                    }
                    kernels::softmax_bwd_rows_serial(dx.data(), y.data(), dy.data(), 1, av.alen);
                    for (i64 j = 0; j < av.alen; ++j) {
                        pdx[(o * av.alen + j) * av.inner + i] += dx[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor variance(const Tensor& a, int axis) {
    const int ax = norm_axis(axis, a.ndim(), "variance");
    if (a.shape[ax] < 1) throw ShapeError("variance: empty axis");
    std::vector<i64> out_shape = a.shape;
    out_shape.erase(out_shape.begin() + ax);
    const bool rec = record_needed({&a});
    Tensor out = make_out(out_shape, rec);
    const AxisView av = axis_view(a.shape, ax);
    const double invn = 1.0 / static_cast<double>(av.alen);
    // Mean is taken relative to the first element so a constant slice yields
    // exactly zero deviations and exactly zero variance.
    const auto slice_mean = [av, invn](const double* pa, i64 o, i64 i) {
        const double x0 = pa[o * av.alen * av.inner + i];
        double acc = 0.0;
        for (i64 j = 0; j < av.alen; ++j) {
            acc += pa[(o * av.alen + j) * av.inner + i] - x0;
        }
        return x0 + acc * invn;
    };
    const double* pa = a.cdata();
    double* po = out.mdata();
    for (i64 o = 0; o < av.outer; ++o) {
        for (i64 i = 0; i < av.inner; ++i) {
            const double mean = slice_mean(pa, o, i);
            double var = 0.0;
            for (i64 j = 0; j < av.alen; ++j) {
                const double d = pa[(o * av.alen + j) * av.inner + i] - mean;
                var += d * d;
            }
            po[o * av.inner + i] = var * invn;
        }
    }
    if (rec) {
        Tensor ac = a, oc = out;
        out.node = Tape::active()->record([ac, oc, av, invn, slice_mean]() mutable {
            if (!ac.grad) return;
            const double* pa = ac.cdata();
            const double* dy = oc.gdata();
            double* da = ac.gdata();
            for (i64 o = 0; o < av.outer; ++o) {
                for (i64 i = 0; i < av.inner; ++i) {
                    const double mean = slice_mean(pa, o, i);
                    const double g = dy[o * av.inner + i] * 2.0 * invn;
                    for (i64 j = 0; j < av.alen; ++j) {
                        const i64 f = (o * av.alen + j) * av.inner + i;
                        da[f] += g * (pa[f] - mean);
                    }
                }
            }
        });
    }
    return out;
}

Tensor mean(const Tensor& a, int axis) {
    const int ax = norm_axis(axis, a.ndim(), "mean");
    std::vector<i64> out_shape = a.shape;
    out_shape.erase(out_shape.begin() + ax);
    const bool rec = record_needed({&a});
    Tensor out = make_out(out_shape, rec);
    const AxisView av = axis_view(a.shape, ax);
    const double invn = 1.0 / static_cast<double>(av.alen);
    const double* pa = a.cdata();
    double* po = out.mdata();
    for (i64 o = 0; o < av.outer; ++o) {
        for (i64 i = 0; i < av.inner; ++i) {
            double s = 0.0;
            for (i64 j = 0; j < av.alen; ++j) s += pa[(o * av.alen + j) * av.inner + i];
            po[o * av.inner + i] = s * invn;
        }
    }
    if (rec) {
        Tensor ac = a, oc = out;
        out.node = Tape::active()->record([ac, oc, av, invn]() mutable {
            if (!ac.grad) return;
            const double* dy = oc.gdata();
            double* da = ac.gdata();
            for (i64 o = 0; o < av.outer; ++o) {
                for (i64 i = 0; i < av.inner; ++i) {
                    const double g = dy[o * av.inner + i] * invn;
                    for (i64 j = 0; j < av.alen; ++j) {
                        da[(o * av.alen + j) * av.inner + i] += g;
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    const bool rec = record_needed({&a});
    Tensor out = make_out({}, rec);
    const double* pa = a.cdata();
    double s = 0.0;
    const i64 n = a.numel();
    for (i64 i = 0; i < n; ++i) s += pa[i];
    (*out.data)[0] = s;
    if (rec) {
        Tensor ac = a, oc = out;
        out.node = Tape::active()->record([ac, oc, n]() mutable {
            if (!ac.grad) return;
            const double g = oc.gdata()[0];
            double* da = ac.gdata();
            for (i64 i = 0; i < n; ++i) da[i] += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& a) {
    const bool rec = record_needed({&a});
    Tensor out = make_out({}, rec);
    const double* pa = a.cdata();
    const i64 n = a.numel();
    double s = 0.0;
    for (i64 i = 0; i < n; ++i) s += pa[i];
    (*out.data)[0] = s / static_cast<double>(n);
    if (rec) {
        Tensor ac = a, oc = out;
        out.node = Tape::active()->record([ac, oc, n]() mutable {
            if (!ac.grad) return;
            const double g = oc.gdata()[0] / static_cast<double>(n);
            double* da = ac.gdata();
            for (i64 i = 0; i < n; ++i) da[i] += g;
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                     const std::vector<std::uint8_t>& mask) {
    if (logits.ndim() != 3) {
        throw ShapeError("cross_entropy: logits must be [batch, seq, vocab], got " +
                         format_shape(logits.shape));
    }
    const i64 rows = logits.shape[0] * logits.shape[1];
    const i64 vocab = logits.shape[2];
    if (static_cast<i64>(targets.size()) != rows || static_cast<i64>(mask.size()) != rows) {
        throw ShapeError("cross_entropy: targets/mask must have batch*seq entries");
    }
    i64 count = 0;
    for (i64 r = 0; r < rows; ++r) count += mask[r] ? 1 : 0;
    if (count == 0) throw DataError("cross_entropy: mask selects no positions");

    const double* pl = logits.cdata();
    double loss = 0.0;
    for (i64 r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        const i64 t = targets[r];
        if (t < 0 || t >= vocab) {
            throw DataError("cross_entropy: target id " + std::to_string(t) +
                            " outside vocab of size " + std::to_string(vocab));
        }
        const double* row = pl + r * vocab;
        double mx = row[0];
        for (i64 v = 1; v < vocab; ++v) mx = row[v] > mx ? row[v] : mx;
        double se = 0.0;
        for (i64 v = 0; v < vocab; ++v) se += std::exp(row[v] - mx);
        loss += mx + std::log(se) - row[t];
    }
    loss /= static_cast<double>(count);

    const bool rec = record_needed({&logits});
    Tensor out = make_out({}, rec);
    (*out.data)[0] = loss;
    if (rec) {
        Tensor lc = logits, oc = out;
        out.node = Tape::active()->record([lc, oc, targets, mask, rows, vocab, count]() mutable {
            if (!lc.grad) return;
            const double g = oc.gdata()[0] / static_cast<double>(count);
            const double* pl = lc.cdata();
            double* dl = lc.gdata();
            for (i64 r = 0; r < rows; ++r) {
                if (!mask[r]) continue;
                const double* row = pl + r * vocab;
                double* drow = dl + r * vocab;
                double mx = row[0];
                for (i64 v = 1; v < vocab; ++v) mx = row[v] > mx ? row[v] : mx;
                double se = 0.0;
                for (i64 v = 0; v < vocab; ++v) se += std::exp(row[v] - mx);
                const double inv = 1.0 / se;
                for (i64 v = 0; v < vocab; ++v) {
                    const double p = std::exp(row[v] - mx) * inv;
                    drow[v] += g * (p - (v == targets[r] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
    if (x.ndim() < 1 || weight.ndim() != 1 || weight.shape[0] != x.size(-1)) {
        throw ShapeError("rms_norm: weight " + format_shape(weight.shape) +
                         " does not match feature dim of " + format_shape(x.shape));
    }
    const i64 cols = x.size(-1);
    const i64 rows = x.numel() / cols;
    const bool rec = record_needed({&x, &weight});
    Tensor out = make_out(x.shape, rec);
    kernels::rms_rows(x.cdata(), weight.cdata(), out.mdata(), rows, cols, eps);
    if (rec) {
        Tensor xc = x, wc = weight, oc = out;
        out.node = Tape::active()->record([xc, wc, oc, rows, cols, eps]() mutable {
            const double* px = xc.cdata();
            const double* pw = wc.cdata();
            const double* dy = oc.gdata();
            for (i64 r = 0; r < rows; ++r) {
                const double* xr = px + r * cols;
                const double* dyr = dy + r * cols;
                double ss = 0.0;
                for (i64 j = 0; j < cols; ++j) ss += xr[j] * xr[j];
                const double inv = 1.0 / std::sqrt(ss / static_cast<double>(cols) + eps);
                if (xc.grad) {
                    double dot = 0.0;
                    for (i64 j = 0; j < cols; ++j) dot += dyr[j] * pw[j] * xr[j];
                    const double c = inv * inv * inv * dot / static_cast<double>(cols);
                    double* dxr = xc.gdata() + r * cols;
                    for (i64 j = 0; j < cols; ++j) {
                        dxr[j] += dyr[j] * pw[j] * inv - c * xr[j];
                    }
                }
                if (wc.grad) {
                    double* dw = wc.gdata();
                    for (i64 j = 0; j < cols; ++j) dw[j] += dyr[j] * xr[j] * inv;
                }
            }
        });
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids,
                        i64 batch, i64 seq) {
    if (table.ndim() != 2) {
        throw ShapeError("embedding_lookup: table must be 2-D, got " + format_shape(table.shape));
    }
    if (static_cast<i64>(ids.size()) != batch * seq) {
        throw ShapeError("embedding_lookup: ids size mismatch");
    }
    const i64 vocab = table.shape[0];
    const i64 dim = table.shape[1];
    for (std::int32_t id : ids) {
        if (id < 0 || id >= vocab) {
            throw DataError("embedding_lookup: token id " + std::to_string(id) +
                            " outside vocab of size " + std::to_string(vocab));
        }
    }
    const bool rec = record_needed({&table});
    Tensor out = make_out({batch, seq, dim}, rec);
    const double* pt = table.cdata();
    double* po = out.mdata();
    for (i64 r = 0; r < batch * seq; ++r) {
        std::copy(pt + ids[r] * dim, pt + (ids[r] + 1) * dim, po + r * dim);
    }
    if (rec) {
        Tensor tc = table, oc = out;
        out.node = Tape::active()->record([tc, oc, ids, batch, seq, dim]() mutable {
            if (!tc.grad) return;
            double* dt = tc.gdata();
            const double* dy = oc.gdata();
            for (i64 r = 0; r < batch * seq; ++r) {
                double* dst = dt + ids[r] * dim;
                const double* src = dy + r * dim;
                for (i64 j = 0; j < dim; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor silu(const Tensor& x) {
    const bool rec = record_needed({&x});
    Tensor out = make_out(x.shape, rec);
    kernels::ew_silu(x.cdata(), out.mdata(), x.numel());
    if (rec) {
        Tensor xc = x, oc = out;
        const i64 n = x.numel();
        out.node = Tape::active()->record([xc, oc, n]() mutable {
            if (xc.grad) kernels::ew_silu_bwd(xc.gdata(), xc.cdata(), oc.gdata(), n);
        });
    }
    return out;
}

namespace {

// Rotation table shared across batch and heads: cos/sin per (position, pair).
std::vector<double> rope_table(i64 seq, i64 dim, double base, i64 pos_offset) {
    const i64 half = dim / 2;
    std::vector<double> freq(half);
    for (i64 i = 0; i < half; ++i) {
        freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    }
    std::vector<double> table(seq * dim);
    for (i64 s = 0; s < seq; ++s) {
        const double pos = static_cast<double>(pos_offset + s);
        for (i64 i = 0; i < half; ++i) {
            const double theta = pos * freq[i];
            table[s * dim + 2 * i] = std::cos(theta);
            table[s * dim + 2 * i + 1] = std::sin(theta);
        }
    }
    return table;
}

void rope_apply(const double* src, double* dst, i64 rows, i64 seq, i64 dim,
                const std::vector<double>& table, bool inverse, bool accumulate) {
    const i64 half = dim / 2;
    for (i64 r = 0; r < rows; ++r) {
        const double* rot = table.data() + (r % seq) * dim;
        const double* x = src + r * dim;
        double* y = dst + r * dim;
        for (i64 i = 0; i < half; ++i) {
            const double c = rot[2 * i];
            const double sn = inverse ? -rot[2 * i + 1] : rot[2 * i + 1];
            const double a = x[2 * i], b = x[2 * i + 1];
            const double ra = a * c - b * sn;
            const double rb = a * sn + b * c;
            if (accumulate) {
                y[2 * i] += ra;
                y[2 * i + 1] += rb;
            } else {
                y[2 * i] = ra;
                y[2 * i + 1] = rb;
            }
        }
    }
}

}  // namespace

Tensor rope(const Tensor& x, double base, i64 pos_offset) {
    if (x.ndim() != 4) {
        throw ShapeError("rope: expected [batch, heads, seq, dim], got " + format_shape(x.shape));
    }
    const i64 dim = x.size(-1);
    if (dim % 2 != 0) throw ShapeError("rope: head dim must be even");
    const i64 seq = x.size(-2);
    const i64 rows = x.numel() / dim;
    const bool rec = record_needed({&x});
    Tensor out = make_out(x.shape, rec);
    std::vector<double> table = rope_table(seq, dim, base, pos_offset);
    rope_apply(x.cdata(), out.mdata(), rows, seq, dim, table, false, false);
    if (rec) {
        Tensor xc = x, oc = out;
        out.node = Tape::active()->record(
            [xc, oc, rows, seq, dim, table = std::move(table)]() mutable {
                if (!xc.grad) return;
                // Gradient of a rotation is the inverse rotation.
                rope_apply(oc.gdata(), xc.gdata(), rows, seq, dim, table, true, true);
            });
    }
    return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& s, int axis) {
    const int ax = norm_axis(axis, x.ndim(), "scale_channels");
    if (s.ndim() != 1 || s.shape[0] != x.shape[ax]) {
        throw ShapeError("scale_channels: scale " + format_shape(s.shape) +
                         " does not match axis " + std::to_string(axis) + " of " +
                         format_shape(x.shape));
    }
    const bool rec = record_needed({&x, &s});
    Tensor out = make_out(x.shape, rec);
    const AxisView av = axis_view(x.shape, ax);
    const double* px = x.cdata();
    const double* ps = s.cdata();
    double* po = out.mdata();
    for (i64 o = 0; o < av.outer; ++o) {
        for (i64 j = 0; j < av.alen; ++j) {
            const double c = ps[j];
            const i64 b = (o * av.alen + j) * av.inner;
            for (i64 i = 0; i < av.inner; ++i) po[b + i] = px[b + i] * c;
        }
    }
    if (rec) {
        Tensor xc = x, sc = s, oc = out;
        out.node = Tape::active()->record([xc, sc, oc, av]() mutable {
            const double* dy = oc.gdata();
            const double* px = xc.cdata();
            const double* ps = sc.cdata();
            for (i64 o = 0; o < av.outer; ++o) {
                for (i64 j = 0; j < av.alen; ++j) {
                    const i64 b = (o * av.alen + j) * av.inner;
                    if (xc.grad) {
                        double* dx = xc.gdata();
                        const double c = ps[j];
                        for (i64 i = 0; i < av.inner; ++i) dx[b + i] += dy[b + i] * c;
                    }
                    if (sc.grad) {
                        double acc = 0.0;
                        for (i64 i = 0; i < av.inner; ++i) acc += dy[b + i] * px[b + i];
                        sc.gdata()[j] += acc;
                    }
                }
            }
        });
    }
    return out;
}

void zero_grad(std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace dca
