#pragma once
// Dense 64-bit float tensors with reverse-mode differentiation on an explicit
// tape. Operations record backward closures in program order; since inputs
// always exist before outputs, replaying the tape in reverse is a valid
// topological sweep and visits every operation exactly once.
//
// Recording is scoped: ops only push tape entries while a TapeScope is open
// on the current thread and at least one input requires gradients. A tape is
// single-use — backward() once, then clear() before the next forward pass.
// Leaf parameters keep their grad buffers across tapes; the optimizer owns
// zeroing them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grm/common.hpp"

namespace grm {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("shape has nonpositive dimension: " + shape_str(s));
        n *= d;
    }
    return n;
}

struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    int node_id = -1;  // tape entry that produced this tensor; -1 for leaves

    Tensor() = default;

    static Tensor zeros(Shape s, bool req = false) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<double>>(shape_numel(t.shape), 0.0);
        if (req) {
            t.requires_grad = true;
            t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
        }
        return t;
    }

    static Tensor full(Shape s, double v, bool req = false) {
        Tensor t = zeros(std::move(s), req);
        std::fill(t.data->begin(), t.data->end(), v);
        return t;
    }

    static Tensor from(Shape s, std::vector<double> vals, bool req = false) {
        Tensor t;
        t.shape = std::move(s);
        if (static_cast<std::int64_t>(vals.size()) != shape_numel(t.shape))
            throw ShapeError("tensor data length does not match shape " + shape_str(t.shape));
        t.data = std::make_shared<std::vector<double>>(std::move(vals));
        if (req) {
            t.requires_grad = true;
            t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
        }
        return t;
    }

    static Tensor scalar(double v, bool req = false) { return from({1}, {v}, req); }

    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool req = false) {
        const int r = static_cast<int>(rows.size());
        const int c = r ? static_cast<int>(rows[0].size()) : 0;
        std::vector<double> flat;
        flat.reserve(static_cast<std::size_t>(r) * c);
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) throw ShapeError("ragged matrix literal");
            flat.insert(flat.end(), row.begin(), row.end());
        }
        return from({r, c}, std::move(flat), req);
    }

    std::int64_t numel() const { return data ? static_cast<std::int64_t>(data->size()) : 0; }
    int ndim() const { return static_cast<int>(shape.size()); }

    int rows() const {
        if (shape.size() != 2) throw ShapeError("rows(): tensor is not 2-D: " + shape_str(shape));
        return shape[0];
    }
    int cols() const {
        if (shape.size() != 2) throw ShapeError("cols(): tensor is not 2-D: " + shape_str(shape));
        return shape[1];
    }

    double at(std::int64_t i) const { return (*data)[static_cast<std::size_t>(i)]; }
    double& at(std::int64_t i) { return (*data)[static_cast<std::size_t>(i)]; }
    double at2(int r, int c) const { return (*data)[static_cast<std::size_t>(r) * shape[1] + c]; }
    double& at2(int r, int c) { return (*data)[static_cast<std::size_t>(r) * shape[1] + c]; }
    double item() const {
        if (numel() != 1) throw ShapeError("item(): tensor is not scalar: " + shape_str(shape));
        return (*data)[0];
    }

    // Same storage, no gradient tracking.
    Tensor detached() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }

    // Deep copy of values only.
    Tensor clone_values() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<double>>(*data);
        return t;
    }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
    }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    }

    double grad_at(std::int64_t i) const { return (*grad)[static_cast<std::size_t>(i)]; }
};

class Tape {
public:
    int record(std::function<void()> bw) {
        entries_.push_back(std::move(bw));
        return static_cast<int>(entries_.size()) - 1;
    }

    // Seeds d(loss)/d(loss) = 1 and replays entries [loss.node_id .. 0].
    void backward(Tensor& loss) {
        if (loss.numel() != 1) throw TapeError("backward: loss must be a scalar");
        if (loss.node_id < 0 || loss.node_id >= static_cast<int>(entries_.size()))
            throw TapeError("backward: tensor is detached from this tape");
        if (consumed_) throw TapeError("backward: tape already consumed; clear() first");
        consumed_ = true;
        loss.ensure_grad();
        (*loss.grad)[0] = 1.0;
        for (int i = loss.node_id; i >= 0; --i) entries_[static_cast<std::size_t>(i)]();
    }

    void clear() {
        entries_.clear();
        consumed_ = false;
    }

    std::size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

private:
    std::vector<std::function<void()>> entries_;
    bool consumed_ = false;
};

inline Tape*& ambient_tape() {
    static thread_local Tape* t = nullptr;
    return t;
}

struct TapeScope {
    Tape* prev;
    explicit TapeScope(Tape& t) : prev(ambient_tape()) { ambient_tape() = &t; }
    ~TapeScope() { ambient_tape() = prev; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

inline void backward(Tensor& loss) {
    Tape* t = ambient_tape();
    if (!t) throw TapeError("backward: no active tape");
    t->backward(loss);
}

namespace detail {

inline bool wants_grad(std::initializer_list<const Tensor*> ins) {
    if (!ambient_tape()) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad) return true;
    return false;
}

inline void mark(Tensor& out) {
    out.requires_grad = true;
    out.ensure_grad();
}

inline int push(std::function<void()> bw) { return ambient_tape()->record(std::move(bw)); }

inline void check_finite(const Tensor& t, const char* op) {
    for (double v : *t.data)
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced a non-finite value");
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    detail::check_finite(out, "add");
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc]() mutable {
            const auto& g = *oc.grad;
            if (ac.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) (*ac.grad)[i] += g[i];
            if (bc.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) (*bc.grad)[i] += g[i];
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    detail::check_finite(out, "sub");
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc]() mutable {
            const auto& g = *oc.grad;
            if (ac.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) (*ac.grad)[i] += g[i];
            if (bc.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) (*bc.grad)[i] -= g[i];
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    detail::check_finite(out, "mul");
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc]() mutable {
            const auto& g = *oc.grad;
            if (ac.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) (*ac.grad)[i] += g[i] * (*bc.data)[i];
            if (bc.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) (*bc.grad)[i] += g[i] * (*ac.data)[i];
        });
    }
    return out;
}

inline Tensor divide(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "divide");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] / (*b.data)[i];
    detail::check_finite(out, "divide");
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double bi = (*bc.data)[i];
                if (ac.requires_grad) (*ac.grad)[i] += g[i] / bi;
                if (bc.requires_grad) (*bc.grad)[i] -= g[i] * (*ac.data)[i] / (bi * bi);
            }
        });
    }
    return out;
}

// out = a*x + b
inline Tensor affine_scalar(const Tensor& x, double a, double b) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = a * (*x.data)[i] + b;
    detail::check_finite(out, "affine_scalar");
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc, a]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) (*xc.grad)[i] += a * g[i];
        });
    }
    return out;
}

inline Tensor scale(const Tensor& x, double a) { return affine_scalar(x, a, 0.0); }
inline Tensor neg(const Tensor& x) { return affine_scalar(x, -1.0, 0.0); }

inline Tensor minimum(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "minimum");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.data->size();
    // ties route the gradient to the first argument
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::min((*a.data)[i], (*b.data)[i]);
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const bool first = (*ac.data)[i] <= (*bc.data)[i];
                if (first && ac.requires_grad) (*ac.grad)[i] += g[i];
                if (!first && bc.requires_grad) (*bc.grad)[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor maximum(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "maximum");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::max((*a.data)[i], (*b.data)[i]);
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const bool first = (*ac.data)[i] >= (*bc.data)[i];
                if (first && ac.requires_grad) (*ac.grad)[i] += g[i];
                if (!first && bc.requires_grad) (*bc.grad)[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] > 0.0 ? (*x.data)[i] : 0.0;
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                if ((*xc.data)[i] > 0.0) (*xc.grad)[i] += g[i];
        });
    }
    return out;
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.data->size();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = (*x.data)[i];
        (*out.data)[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    detail::check_finite(out, "sigmoid");
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double o = (*oc.data)[i];
                (*xc.grad)[i] += g[i] * o * (1.0 - o);
            }
        });
    }
    return out;
}

// Exact erf form: gelu(x) = x * Phi(x).
inline Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.data->size();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = (*x.data)[i];
        (*out.data)[i] = v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    }
    detail::check_finite(out, "gelu");
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = (*xc.data)[i];
                const double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
                (*xc.grad)[i] += g[i] * (phi + v * pdf);
            }
        });
    }
    return out;
}

inline Tensor exp_t(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::exp((*x.data)[i]);
    detail::check_finite(out, "exp");
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) (*xc.grad)[i] += g[i] * (*oc.data)[i];
        });
    }
    return out;
}

inline Tensor log_t(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::log((*x.data)[i]);
    detail::check_finite(out, "log");
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) (*xc.grad)[i] += g[i] / (*xc.data)[i];
        });
    }
    return out;
}

inline Tensor pow_const(const Tensor& x, double p) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::pow((*x.data)[i], p);
    detail::check_finite(out, "pow");
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc, p]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                (*xc.grad)[i] += g[i] * p * std::pow((*xc.data)[i], p - 1.0);
        });
    }
    return out;
}

// Gradient passes only where the value was not clamped.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.data->size();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::min(hi, std::max(lo, (*x.data)[i]));
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc, lo, hi]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = (*xc.data)[i];
                if (v > lo && v < hi) (*xc.grad)[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : *x.data) s += v;
    Tensor out = Tensor::scalar(s);
    detail::check_finite(out, "sum");
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc]() mutable {
            const double g = (*oc.grad)[0];
            for (std::size_t i = 0; i < xc.grad->size(); ++i) (*xc.grad)[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

inline Tensor transpose(const Tensor& x) {
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) (*out.data)[static_cast<std::size_t>(j) * r + i] = x.at2(i, j);
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc, r, c]() mutable {
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    (*xc.grad)[static_cast<std::size_t>(i) * c + j] +=
                        (*oc.grad)[static_cast<std::size_t>(j) * r + i];
        });
    }
    return out;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw ShapeError("concat_rows: column mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int ra = a.rows(), rb = b.rows(), c = a.cols();
    Tensor out = Tensor::zeros({ra + rb, c});
    std::copy(a.data->begin(), a.data->end(), out.data->begin());
    std::copy(b.data->begin(), b.data->end(), out.data->begin() + a.data->size());
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc, ra, rb, c]() mutable {
            const auto& g = *oc.grad;
            const std::size_t na = static_cast<std::size_t>(ra) * c;
            if (ac.requires_grad)
                for (std::size_t i = 0; i < na; ++i) (*ac.grad)[i] += g[i];
            if (bc.requires_grad)
                for (std::size_t i = 0; i < static_cast<std::size_t>(rb) * c; ++i) (*bc.grad)[i] += g[na + i];
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
    const int r = x.rows(), c = x.cols();
    if (r0 < 0 || r1 > r || r0 >= r1)
        throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) + ") for " + shape_str(x.shape));
    Tensor out = Tensor::zeros({r1 - r0, c});
    std::copy(x.data->begin() + static_cast<std::size_t>(r0) * c,
              x.data->begin() + static_cast<std::size_t>(r1) * c, out.data->begin());
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc, r0, c]() mutable {
            const auto& g = *oc.grad;
            const std::size_t base = static_cast<std::size_t>(r0) * c;
            for (std::size_t i = 0; i < g.size(); ++i) (*xc.grad)[base + i] += g[i];
        });
    }
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int r = a.rows(), ca = a.cols(), cb = b.cols();
    Tensor out = Tensor::zeros({r, ca + cb});
    for (int i = 0; i < r; ++i) {
        std::copy(a.data->begin() + static_cast<std::size_t>(i) * ca,
                  a.data->begin() + static_cast<std::size_t>(i + 1) * ca,
                  out.data->begin() + static_cast<std::size_t>(i) * (ca + cb));
        std::copy(b.data->begin() + static_cast<std::size_t>(i) * cb,
                  b.data->begin() + static_cast<std::size_t>(i + 1) * cb,
                  out.data->begin() + static_cast<std::size_t>(i) * (ca + cb) + ca);
    }
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc, r, ca, cb]() mutable {
            const auto& g = *oc.grad;
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < ca + cb; ++j) {
                    const double gv = g[static_cast<std::size_t>(i) * (ca + cb) + j];
                    if (j < ca) {
                        if (ac.requires_grad) (*ac.grad)[static_cast<std::size_t>(i) * ca + j] += gv;
                    } else {
                        if (bc.requires_grad) (*bc.grad)[static_cast<std::size_t>(i) * cb + (j - ca)] += gv;
                    }
                }
        });
    }
    return out;
}

// Broadcast a length-c vector (shape {c} or {1,c}) to n identical rows.
inline Tensor tile_rows(const Tensor& v, int n) {
    int c;
    if (v.ndim() == 1)
        c = v.shape[0];
    else if (v.ndim() == 2 && v.shape[0] == 1)
        c = v.shape[1];
    else
        throw ShapeError("tile_rows: expected a vector, got " + shape_str(v.shape));
    Tensor out = Tensor::zeros({n, c});
    for (int i = 0; i < n; ++i)
        std::copy(v.data->begin(), v.data->end(), out.data->begin() + static_cast<std::size_t>(i) * c);
    if (detail::wants_grad({&v})) {
        detail::mark(out);
        Tensor vc = v, oc = out;
        out.node_id = detail::push([vc, oc, n, c]() mutable {
            const auto& g = *oc.grad;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) (*vc.grad)[j] += g[static_cast<std::size_t>(i) * c + j];
        });
    }
    return out;
}

// out[i] = x[idx[i]]; backward scatter-adds. idx entries must be in range.
inline Tensor gather(const Tensor& x, std::shared_ptr<std::vector<std::int64_t>> idx, Shape out_shape) {
    Tensor out = Tensor::zeros(std::move(out_shape));
    if (static_cast<std::int64_t>(idx->size()) != out.numel())
        throw ShapeError("gather: index count does not match output shape");
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::int64_t s = (*idx)[i];
        if (s < 0 || s >= x.numel()) throw ShapeError("gather: index out of range");
        (*out.data)[i] = (*x.data)[static_cast<std::size_t>(s)];
    }
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc, idx]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < idx->size(); ++i)
                (*xc.grad)[static_cast<std::size_t>((*idx)[i])] += g[i];
        });
    }
    return out;
}

inline Tensor pick(const Tensor& x, std::int64_t flat_index) {
    auto idx = std::make_shared<std::vector<std::int64_t>>(1, flat_index);
    return gather(x, std::move(idx), {1});
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({m, n});
    {
        const double* A = a.data->data();
        const double* B = b.data->data();
        double* O = out.data->data();
        for (int i = 0; i < m; ++i) {
            double* Or = O + static_cast<std::size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = A[static_cast<std::size_t>(i) * k + kk];
                const double* Br = B + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) Or[j] += av * Br[j];
            }
        }
    }
    detail::check_finite(out, "matmul");
    if (detail::wants_grad({&a, &b})) {
        detail::mark(out);
        Tensor ac = a, bc = b, oc = out;
        out.node_id = detail::push([ac, bc, oc, m, k, n]() mutable {
            const double* G = oc.grad->data();
            if (ac.requires_grad) {
                // dA = G * B^T
                double* dA = ac.grad->data();
                const double* B = bc.data->data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const double* Gr = G + static_cast<std::size_t>(i) * n;
                        const double* Br = B + static_cast<std::size_t>(kk) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += Gr[j] * Br[j];
                        dA[static_cast<std::size_t>(i) * k + kk] += acc;
                    }
            }
            if (bc.requires_grad) {
                // dB = A^T * G
                double* dB = bc.grad->data();
                const double* A = ac.data->data();
                for (int i = 0; i < m; ++i) {
                    const double* Gr = G + static_cast<std::size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const double av = A[static_cast<std::size_t>(i) * k + kk];
                        double* dBr = dB + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dBr[j] += av * Gr[j];
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    const int r = x.rows(), c = x.cols();
    const int bc_len = b.ndim() == 1 ? b.shape[0] : (b.ndim() == 2 && b.shape[0] == 1 ? b.shape[1] : -1);
    if (bc_len != c)
        throw ShapeError("add_rowvec: bias " + shape_str(b.shape) + " does not match columns of " + shape_str(x.shape));
    Tensor out = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at2(i, j) = x.at2(i, j) + (*b.data)[j];
    detail::check_finite(out, "add_rowvec");
    if (detail::wants_grad({&x, &b})) {
        detail::mark(out);
        Tensor xc = x, bc = b, oc = out;
        out.node_id = detail::push([xc, bc, oc, r, c]() mutable {
            const auto& g = *oc.grad;
            if (xc.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) (*xc.grad)[i] += g[i];
            if (bc.requires_grad)
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) (*bc.grad)[j] += g[static_cast<std::size_t>(i) * c + j];
        });
    }
    return out;
}

// x[n x cin] * W[cin x cout] + b
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// softmax / normalization
// ---------------------------------------------------------------------------

// Per row: out_j = m_j * exp(l_j - c) / sum_k m_k * exp(l_k - c), with the
// stabilizing max c taken over entries with m > 0 only. Entries with m == 0
// come out exactly zero. Differentiable in both logits and mask (the mask may
// carry straight-through values); exponents are clipped at 700 so a blocked
// logit far above the admissible maximum cannot overflow.
inline Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
    detail::check_same_shape(logits, mask, "masked_softmax");
    const int r = logits.rows(), c = logits.cols();
    Tensor out = Tensor::zeros({r, c});
    auto unit = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r) * c);  // e_j / S
    for (int i = 0; i < r; ++i) {
        const double* L = logits.data->data() + static_cast<std::size_t>(i) * c;
        const double* M = mask.data->data() + static_cast<std::size_t>(i) * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j)
            if (M[j] > 0.0) mx = std::max(mx, L[j]);
        if (!std::isfinite(mx))
            throw DegenerateRowError("masked_softmax: row " + std::to_string(i) + " has no admissible entries");
        double s = 0.0;
        double* U = unit->data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            U[j] = std::exp(std::min(L[j] - mx, 700.0));
            s += M[j] * U[j];
        }
        double* O = out.data->data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            O[j] = (M[j] * U[j]) / s;
            U[j] /= s;
        }
    }
    detail::check_finite(out, "masked_softmax");
    if (detail::wants_grad({&logits, &mask})) {
        detail::mark(out);
        Tensor lc = logits, mc = mask, oc = out;
        out.node_id = detail::push([lc, mc, oc, unit, r, c]() mutable {
            for (int i = 0; i < r; ++i) {
                const double* g = oc.grad->data() + static_cast<std::size_t>(i) * c;
                const double* o = oc.data->data() + static_cast<std::size_t>(i) * c;
                const double* u = unit->data() + static_cast<std::size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[j] * o[j];
                if (lc.requires_grad) {
                    double* dl = lc.grad->data() + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) dl[j] += o[j] * (g[j] - dot);
                }
                if (mc.requires_grad) {
                    double* dm = mc.grad->data() + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) dm[j] += u[j] * (g[j] - dot);
                }
            }
        });
    }
    return out;
}

inline Tensor softmax_rows(const Tensor& logits) {
    return masked_softmax(logits, Tensor::full(logits.shape, 1.0));
}

inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("layernorm: eps must be positive");
    const int n = x.rows(), c = x.cols();
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("layernorm: gamma/beta length must equal columns of " + shape_str(x.shape));
    Tensor out = Tensor::zeros({n, c});
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * c);
    auto inv = std::make_shared<std::vector<double>>(n);
    for (int i = 0; i < n; ++i) {
        const double* X = x.data->data() + static_cast<std::size_t>(i) * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += X[j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (X[j] - mu) * (X[j] - mu);
        var /= c;
        const double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[i] = iv;
        double* H = xhat->data() + static_cast<std::size_t>(i) * c;
        double* O = out.data->data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            H[j] = (X[j] - mu) * iv;
            O[j] = (*gamma.data)[j] * H[j] + (*beta.data)[j];
        }
    }
    detail::check_finite(out, "layernorm");
    if (detail::wants_grad({&x, &gamma, &beta})) {
        detail::mark(out);
        Tensor xc = x, gc = gamma, bc = beta, oc = out;
        out.node_id = detail::push([xc, gc, bc, oc, xhat, inv, n, c]() mutable {
            for (int i = 0; i < n; ++i) {
                const double* g = oc.grad->data() + static_cast<std::size_t>(i) * c;
                const double* h = xhat->data() + static_cast<std::size_t>(i) * c;
                if (gc.requires_grad)
                    for (int j = 0; j < c; ++j) (*gc.grad)[j] += g[j] * h[j];
                if (bc.requires_grad)
                    for (int j = 0; j < c; ++j) (*bc.grad)[j] += g[j];
                if (xc.requires_grad) {
                    double mean_dh = 0.0, mean_dhh = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double dh = g[j] * (*gc.data)[j];
                        mean_dh += dh;
                        mean_dhh += dh * h[j];
                    }
                    mean_dh /= c;
                    mean_dhh /= c;
                    double* dx = xc.grad->data() + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) {
                        const double dh = g[j] * (*gc.data)[j];
                        dx[j] += (*inv)[i] * (dh - mean_dh - h[j] * mean_dhh);
                    }
                }
            }
        });
    }
    return out;
}

// Per-channel normalization over spatial positions for feature maps of shape
// {c, h, w} (or any shape with channels first): each channel row is
// standardized over its spatial extent, then scaled/shifted by gamma[ch],
// beta[ch]. Batch-free counterpart of the usual conv-norm stage.
inline Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("channel_norm: eps must be positive");
    if (x.ndim() < 2) throw ShapeError("channel_norm: need at least 2 dims, got " + shape_str(x.shape));
    const int ch = x.shape[0];
    const std::int64_t s = x.numel() / ch;
    if (gamma.numel() != ch || beta.numel() != ch)
        throw ShapeError("channel_norm: gamma/beta length must equal channel count");
    Tensor out = Tensor::zeros(x.shape);
    auto xhat = std::make_shared<std::vector<double>>(x.data->size());
    auto inv = std::make_shared<std::vector<double>>(ch);
    for (int i = 0; i < ch; ++i) {
        const double* X = x.data->data() + static_cast<std::size_t>(i) * s;
        double mu = 0.0;
        for (std::int64_t j = 0; j < s; ++j) mu += X[j];
        mu /= static_cast<double>(s);
        double var = 0.0;
        for (std::int64_t j = 0; j < s; ++j) var += (X[j] - mu) * (X[j] - mu);
        var /= static_cast<double>(s);
        const double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[i] = iv;
        double* H = xhat->data() + static_cast<std::size_t>(i) * s;
        double* O = out.data->data() + static_cast<std::size_t>(i) * s;
        for (std::int64_t j = 0; j < s; ++j) {
            H[j] = (X[j] - mu) * iv;
            O[j] = (*gamma.data)[i] * H[j] + (*beta.data)[i];
        }
    }
    detail::check_finite(out, "channel_norm");
    if (detail::wants_grad({&x, &gamma, &beta})) {
        detail::mark(out);
        Tensor xc = x, gc = gamma, bc = beta, oc = out;
        out.node_id = detail::push([xc, gc, bc, oc, xhat, inv, ch, s]() mutable {
            for (int i = 0; i < ch; ++i) {
                const double* g = oc.grad->data() + static_cast<std::size_t>(i) * s;
                const double* h = xhat->data() + static_cast<std::size_t>(i) * s;
                if (gc.requires_grad) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < s; ++j) acc += g[j] * h[j];
                    (*gc.grad)[i] += acc;
                }
                if (bc.requires_grad) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < s; ++j) acc += g[j];
                    (*bc.grad)[i] += acc;
                }
                if (xc.requires_grad) {
                    const double gv = (*gc.data)[i];
                    double mean_dh = 0.0, mean_dhh = 0.0;
                    for (std::int64_t j = 0; j < s; ++j) {
                        const double dh = g[j] * gv;
                        mean_dh += dh;
                        mean_dhh += dh * h[j];
                    }
                    mean_dh /= static_cast<double>(s);
                    mean_dhh /= static_cast<double>(s);
                    double* dx = xc.grad->data() + static_cast<std::size_t>(i) * s;
                    for (std::int64_t j = 0; j < s; ++j) {
                        const double dh = g[j] * gv;
                        dx[j] += (*inv)[i] * (dh - mean_dh - h[j] * mean_dhh);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution and pooling
// ---------------------------------------------------------------------------

// Cross-correlation. x: {cin, h, w}, kernels: {cout, cin, k, k}, k odd.
inline Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int pad) {
    if (x.ndim() != 3 || kernels.ndim() != 4)
        throw ShapeError("conv2d: expected x{c,h,w} and kernels{co,ci,k,k}, got " + shape_str(x.shape) +
                         " and " + shape_str(kernels.shape));
    const int cin = x.shape[0], h = x.shape[1], w = x.shape[2];
    const int cout = kernels.shape[0], kci = kernels.shape[1], kh = kernels.shape[2], kw = kernels.shape[3];
    if (kci != cin) throw ShapeError("conv2d: kernel cin mismatch");
    if (kh != kw || kh % 2 == 0) throw ShapeError("conv2d: kernels must be square with odd size");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0)
        throw ShapeError("conv2d: nonpositive output size for input " + shape_str(x.shape));
    Tensor out = Tensor::zeros({cout, oh, ow});
    const double* X = x.data->data();
    const double* K = kernels.data->data();
    double* O = out.data->data();
    auto xat = [&](int c, int y, int xx) -> double {
        return X[(static_cast<std::size_t>(c) * h + y) * w + xx];
    };
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int y = oy * stride - pad + ky;
                        if (y < 0 || y >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int xx = ox * stride - pad + kx;
                            if (xx < 0 || xx >= w) continue;
                            acc += xat(ci, y, xx) *
                                   K[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                O[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] = acc;
            }
    detail::check_finite(out, "conv2d");
    if (detail::wants_grad({&x, &kernels})) {
        detail::mark(out);
        Tensor xc = x, kc = kernels, oc = out;
        out.node_id = detail::push([xc, kc, oc, cin, h, w, cout, kh, kw, oh, ow, stride, pad]() mutable {
            const double* G = oc.grad->data();
            const double* X2 = xc.data->data();
            const double* K2 = kc.data->data();
            for (int co = 0; co < cout; ++co)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const double g = G[(static_cast<std::size_t>(co) * oh + oy) * ow + ox];
                        if (g == 0.0) continue;
                        for (int ci = 0; ci < cin; ++ci)
                            for (int ky = 0; ky < kh; ++ky) {
                                const int y = oy * stride - pad + ky;
                                if (y < 0 || y >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int xx = ox * stride - pad + kx;
                                    if (xx < 0 || xx >= w) continue;
                                    const std::size_t xi = (static_cast<std::size_t>(ci) * h + y) * w + xx;
                                    const std::size_t ki =
                                        ((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx;
                                    if (xc.requires_grad) (*xc.grad)[xi] += g * K2[ki];
                                    if (kc.requires_grad) (*kc.grad)[ki] += g * X2[xi];
                                }
                            }
                    }
        });
    }
    return out;
}

inline Tensor bias_channels(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 3 || b.numel() != x.shape[0])
        throw ShapeError("bias_channels: bias length must equal channel count");
    const int ch = x.shape[0];
    const std::int64_t s = x.numel() / ch;
    Tensor out = Tensor::zeros(x.shape);
    for (int i = 0; i < ch; ++i)
        for (std::int64_t j = 0; j < s; ++j)
            (*out.data)[static_cast<std::size_t>(i) * s + j] = (*x.data)[static_cast<std::size_t>(i) * s + j] + (*b.data)[i];
    detail::check_finite(out, "bias_channels");
    if (detail::wants_grad({&x, &b})) {
        detail::mark(out);
        Tensor xc = x, bc = b, oc = out;
        out.node_id = detail::push([xc, bc, oc, ch, s]() mutable {
            const auto& g = *oc.grad;
            if (xc.requires_grad)
                for (std::size_t i = 0; i < g.size(); ++i) (*xc.grad)[i] += g[i];
            if (bc.requires_grad)
                for (int i = 0; i < ch; ++i)
                    for (std::int64_t j = 0; j < s; ++j) (*bc.grad)[i] += g[static_cast<std::size_t>(i) * s + j];
        });
    }
    return out;
}

// Columnwise max over rows; ties route the gradient to the lowest row index.
inline Tensor global_maxpool(const Tensor& x) {
    const int n = x.rows(), c = x.cols();
    if (n < 1) throw ShapeError("global_maxpool: empty input");
    Tensor out = Tensor::zeros({c});
    auto arg = std::make_shared<std::vector<int>>(c, 0);
    for (int j = 0; j < c; ++j) {
        double best = x.at2(0, j);
        int bi = 0;
        for (int i = 1; i < n; ++i)
            if (x.at2(i, j) > best) {
                best = x.at2(i, j);
                bi = i;
            }
        (*out.data)[j] = best;
        (*arg)[j] = bi;
    }
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc, arg, c]() mutable {
            for (int j = 0; j < c; ++j)
                (*xc.grad)[static_cast<std::size_t>((*arg)[j]) * c + j] += (*oc.grad)[j];
        });
    }
    return out;
}

inline Tensor global_avgpool(const Tensor& x) {
    const int n = x.rows(), c = x.cols();
    if (n < 1) throw ShapeError("global_avgpool: empty input");
    Tensor out = Tensor::zeros({c});
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += x.at2(i, j);
        (*out.data)[j] = s / n;
    }
    detail::check_finite(out, "global_avgpool");
    if (detail::wants_grad({&x})) {
        detail::mark(out);
        Tensor xc = x, oc = out;
        out.node_id = detail::push([xc, oc, n, c]() mutable {
            for (int j = 0; j < c; ++j) {
                const double g = (*oc.grad)[j] / n;
                for (int i = 0; i < n; ++i) (*xc.grad)[static_cast<std::size_t>(i) * c + j] += g;
            }
        });
    }
    return out;
}

// Forward takes the hard one-hot values verbatim; backward passes the
// gradient to the soft relaxation unchanged.
inline Tensor straight_through(const Tensor& soft, const Tensor& hard) {
    detail::check_same_shape(soft, hard, "straight_through");
    Tensor out = Tensor::zeros(soft.shape);
    std::copy(hard.data->begin(), hard.data->end(), out.data->begin());
    if (detail::wants_grad({&soft})) {
        detail::mark(out);
        Tensor sc = soft, oc = out;
        out.node_id = detail::push([sc, oc]() mutable {
            const auto& g = *oc.grad;
            for (std::size_t i = 0; i < g.size(); ++i) (*sc.grad)[i] += g[i];
        });
    }
    return out;
}

}  // namespace grm
