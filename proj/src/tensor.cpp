#include "saconv/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <utility>

namespace saconv {

namespace {

std::int64_t checked_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
    }
}

// exp over a buffer of non-positive values (softmax after max subtraction).
// Argument reduction plus a degree-11 polynomial; no libm call in the loop so
// the compiler can vectorize it. Inputs below -708 clamp to exp(-708)≈3e-308,
// which is zero for softmax purposes.
void exp_inplace(double* p, std::int64_t n) {
    constexpr double kLog2e = 1.4426950408889634;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    constexpr double kRoundMagic = 6755399441055744.0;  // 1.5 * 2^52
    for (std::int64_t i = 0; i < n; ++i) {
        double x = std::max(p[i], -708.0);
        double kd = (x * kLog2e + kRoundMagic) - kRoundMagic;
        double r = x - kd * kLn2Hi;
        r -= kd * kLn2Lo;
        double q = 1.0 / 39916800.0;
        q = q * r + 1.0 / 3628800.0;
        q = q * r + 1.0 / 362880.0;
        q = q * r + 1.0 / 40320.0;
        q = q * r + 1.0 / 5040.0;
        q = q * r + 1.0 / 720.0;
        q = q * r + 1.0 / 120.0;
        q = q * r + 1.0 / 24.0;
        q = q * r + 1.0 / 6.0;
        q = q * r + 0.5;
        q = q * r + 1.0;
        q = q * r + 1.0;
        auto ki = static_cast<std::int64_t>(kd);
        auto bits = static_cast<std::uint64_t>(ki + 1023) << 52;
        p[i] = q * std::bit_cast<double>(bits);
    }
}

// C[m,n] += A[m,k] * B[k,n]
void matmul_acc(double* c, const double* a, const double* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            double aik = arow[kk];
            const double* brow = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// dA[m,k] += dC[m,n] * B^T  (B is [k,n])
void matmul_acc_nt(double* da, const double* dc, const double* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* dcrow = dc + static_cast<std::size_t>(i) * n;
        double* darow = da + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double* brow = b + static_cast<std::size_t>(kk) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
            darow[kk] += acc;
        }
    }
}

// dB[k,n] += A^T * dC  (A is [m,k])
void matmul_acc_tn(double* db, const double* a, const double* dc, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        const double* dcrow = dc + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            double aik = arow[kk];
            double* dbrow = db + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) dbrow[j] += aik * dcrow[j];
        }
    }
}

struct ConcatDims {
    std::int64_t outer, a_slab, b_slab;
};

ConcatDims concat_dims(const Tensor& a, const Tensor& b, int axis) {
    if (a.rank() != b.rank() || axis < 0 || axis >= a.rank()) {
        throw DimensionError("concat: rank/axis mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape) + " axis " + std::to_string(axis));
    }
    for (int d = 0; d < a.rank(); ++d) {
        if (d != axis && a.shape[d] != b.shape[d]) {
            throw DimensionError("concat: shapes " + shape_str(a.shape) + " and " +
                                 shape_str(b.shape) + " differ on non-concat axis " +
                                 std::to_string(d));
        }
    }
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.shape[d];
    for (int d = axis + 1; d < a.rank(); ++d) inner *= a.shape[d];
    return {outer, a.shape[axis] * inner, b.shape[axis] * inner};
}

struct ConvDims {
    int h, w, din, k, dout, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    if (x.rank() != 3 || kernel.rank() != 4 || bias.rank() != 1) {
        throw DimensionError("conv2d: expected x[H,W,D], kernel[K,K,D,F], bias[F]; got " +
                             shape_str(x.shape) + ", " + shape_str(kernel.shape) + ", " +
                             shape_str(bias.shape));
    }
    ConvDims d{x.shape[0], x.shape[1], x.shape[2], kernel.shape[0], kernel.shape[3], 0};
    if (kernel.shape[1] != d.k) {
        throw DimensionError("conv2d: non-square kernel " + shape_str(kernel.shape));
    }
    if (d.k % 2 == 0) {
        throw DimensionError("conv2d: kernel size must be odd for same padding, got " +
                             std::to_string(d.k));
    }
    if (kernel.shape[2] != d.din) {
        throw DimensionError("conv2d: kernel depth " + shape_str(kernel.shape) +
                             " does not match input depth " + shape_str(x.shape));
    }
    if (bias.shape[0] != d.dout) {
        throw DimensionError("conv2d: bias " + shape_str(bias.shape) +
                             " does not match kernel filters " + shape_str(kernel.shape));
    }
    d.pad = d.k / 2;
    return d;
}

}  // namespace

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(checked_numel(shape)), 0.0);
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(checked_numel(shape)), fill);
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw DimensionError("tensor: " + std::to_string(data.size()) +
                             " values do not fill shape " + shape_str(shape));
    }
}

Tensor Tensor::identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::int64_t shape_numel(const std::vector<int>& shape) { return checked_numel(shape); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    }
    Tensor c({a.shape[0], b.shape[1]});
    matmul_acc(c.data.data(), a.data.data(), b.data.data(), a.shape[0], a.shape[1],
               b.shape[1]);
    return c;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: expected 2-D, got " + shape_str(a.shape));
    Tensor t({a.shape[1], a.shape[0]});
    for (int i = 0; i < a.shape[0]; ++i)
        for (int j = 0; j < a.shape[1]; ++j) t(j, i) = a(i, j);
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 1 || b.shape[0] != a.shape[1]) {
        throw DimensionError("add_rowvec: shapes " + shape_str(a.shape) + " and " +
                             shape_str(b.shape));
    }
    Tensor c = a;
    for (int i = 0; i < a.shape[0]; ++i)
        for (int j = 0; j < a.shape[1]; ++j) c(i, j) += b(j);
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

Tensor scale_shift(const Tensor& a, double s, double c) {
    Tensor out = a;
    for (double& v : out.data) v = s * v + c;
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor tanh_act(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.data) v = std::tanh(v);
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return out;
}

Tensor softmax(const Tensor& a) {
    if (a.rank() == 0 || a.shape.back() == 0) {
        throw DimensionError("softmax: empty axis in shape " + shape_str(a.shape));
    }
    int n = a.shape.back();
    std::int64_t rows = a.numel() / n;
    Tensor out = a;
    for (std::int64_t r = 0; r < rows; ++r) {
        double* row = out.data.data() + r * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        for (int j = 0; j < n; ++j) row[j] -= mx;
        exp_inplace(row, n);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += row[j];
        double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) row[j] *= inv;
    }
    return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    ConcatDims d = concat_dims(a, b, axis);
    std::vector<int> shape = a.shape;
    shape[axis] += b.shape[axis];
    Tensor out(std::move(shape));
    for (std::int64_t o = 0; o < d.outer; ++o) {
        double* dst = out.data.data() + o * (d.a_slab + d.b_slab);
        std::memcpy(dst, a.data.data() + o * d.a_slab, sizeof(double) * d.a_slab);
        std::memcpy(dst + d.a_slab, b.data.data() + o * d.b_slab, sizeof(double) * d.b_slab);
    }
    return out;
}

Tensor slice(const Tensor& a, int axis, int lo, int hi) {
    if (axis < 0 || axis >= a.rank() || lo < 0 || hi > a.shape[axis] || lo > hi) {
        throw DimensionError("slice: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                             ") invalid for axis " + std::to_string(axis) + " of " +
                             shape_str(a.shape));
    }
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.shape[d];
    for (int d = axis + 1; d < a.rank(); ++d) inner *= a.shape[d];
    std::vector<int> shape = a.shape;
    shape[axis] = hi - lo;
    Tensor out(std::move(shape));
    std::int64_t src_slab = a.shape[axis] * inner;
    std::int64_t dst_slab = (hi - lo) * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data.data() + o * dst_slab, a.data.data() + o * src_slab + lo * inner,
                    sizeof(double) * dst_slab);
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (checked_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape) + " to " + shape_str(shape));
    }
    Tensor out = a;
    out.shape = std::move(shape);
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    ConvDims d = conv_dims(x, kernel, bias);
    Tensor y({d.h, d.w, d.dout});
    for (int i = 0; i < d.h; ++i) {
        for (int j = 0; j < d.w; ++j) {
            double* yrow = &y(i, j, 0);
            for (int o = 0; o < d.dout; ++o) yrow[o] = bias(o);
            for (int di = 0; di < d.k; ++di) {
                int ii = i + di - d.pad;
                if (ii < 0 || ii >= d.h) continue;
                for (int dj = 0; dj < d.k; ++dj) {
                    int jj = j + dj - d.pad;
                    if (jj < 0 || jj >= d.w) continue;
                    const double* xrow = &x(ii, jj, 0);
                    const double* kslab = &kernel(di, dj, 0, 0);
                    for (int c = 0; c < d.din; ++c) {
                        double xc = xrow[c];
                        const double* krow = kslab + static_cast<std::size_t>(c) * d.dout;
                        for (int o = 0; o < d.dout; ++o) yrow[o] += xc * krow[o];
                    }
                }
            }
        }
    }
    return y;
}

Tensor maxpool(const Tensor& x, int p) {
    if (x.rank() != 3) throw DimensionError("maxpool: expected [H,W,D], got " + shape_str(x.shape));
    if (p < 1 || p > x.shape[0] || p > x.shape[1]) {
        throw DimensionError("maxpool: window " + std::to_string(p) + " invalid for " +
                             shape_str(x.shape));
    }
    int oh = x.shape[0] / p, ow = x.shape[1] / p, dch = x.shape[2];
    Tensor y({oh, ow, dch});
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
            for (int c = 0; c < dch; ++c) {
                double best = x(i * p, j * p, c);
                for (int di = 0; di < p; ++di)
                    for (int dj = 0; dj < p; ++dj)
                        best = std::max(best, x(i * p + di, j * p + dj, c));
                y(i, j, c) = best;
            }
    return y;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v;
    return Tensor({1}, {s});
}

namespace {

double ce_term(const Tensor& pred, const std::vector<int>& targets,
               const std::vector<double>& w, int i) {
    double p = pred(i, targets[static_cast<std::size_t>(i)]);
    p = std::min(std::max(p, 1e-12), 1.0);
    return -w[static_cast<std::size_t>(targets[static_cast<std::size_t>(i)])] * std::log(p);
}

void ce_validate(const Tensor& pred, const std::vector<int>& targets,
                 const std::vector<double>& w) {
    if (pred.rank() != 2 || pred.shape[0] == 0) {
        throw DimensionError("cross_entropy: expected pred[B,C], got " + shape_str(pred.shape));
    }
    int b = pred.shape[0], c = pred.shape[1];
    if (static_cast<int>(targets.size()) != b) {
        throw InputError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(b));
    }
    if (static_cast<int>(w.size()) != c) {
        throw InputError("cross_entropy: " + std::to_string(w.size()) + " class weights for " +
                         std::to_string(c) + " classes");
    }
    for (int i = 0; i < b; ++i) {
        int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= c) {
            throw InputError("cross_entropy: target " + std::to_string(t) + " outside [0," +
                             std::to_string(c) + ") at row " + std::to_string(i));
        }
        double row_sum = 0.0;
        for (int j = 0; j < c; ++j) row_sum += pred(i, j);
        if (std::abs(row_sum - 1.0) > 1e-9) {
            throw InputError("cross_entropy: pred row " + std::to_string(i) +
                             " sums to " + std::to_string(row_sum) + ", not 1");
        }
    }
}

}  // namespace

double cross_entropy_value(const Tensor& pred, const std::vector<int>& targets,
                           const std::vector<double>& class_weights) {
    ce_validate(pred, targets, class_weights);
    double total = 0.0;
    for (int i = 0; i < pred.shape[0]; ++i) total += ce_term(pred, targets, class_weights, i);
    return total / pred.shape[0];
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

int Tape::check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw ContractError("tape: variable handle " + std::to_string(v.id) +
                            " is not on this tape");
    }
    return v.id;
}

Tape::Var Tape::push(Tensor value, std::function<void(Tape&)> back) {
    Node n;
    n.owned = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Var Tape::leaf(Tensor value) { return push(std::move(value), nullptr); }

Tape::Var Tape::leaf_ref(const Tensor& external) {
    Node n;
    n.external = &external;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::grad(Var v) const {
    int id = check(v);
    if (!backward_run_) throw ContractError("tape: grad() before backward()");
    return nodes_[static_cast<std::size_t>(id)].grad;
}

Tape::Var Tape::matmul(Var a, Var b) {
    int ia = check(a), ib = check(b);
    Tensor c = saconv::matmul(val(ia), val(ib));
    return push(std::move(c), [ia, ib](Tape& t) {
        int self = t.cursor_;
        const Tensor& dc = t.grad_mut(self);
        const Tensor& av = t.val(ia);
        const Tensor& bv = t.val(ib);
        int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
        matmul_acc_nt(t.grad_mut(ia).data.data(), dc.data.data(), bv.data.data(), m, k, n);
        matmul_acc_tn(t.grad_mut(ib).data.data(), av.data.data(), dc.data.data(), m, k, n);
    });
}

Tape::Var Tape::transpose(Var a) {
    int ia = check(a);
    return push(saconv::transpose(val(ia)), [ia](Tape& t) {
        const Tensor& dc = t.grad_mut(t.cursor_);
        Tensor& da = t.grad_mut(ia);
        int rows = dc.shape[0], cols = dc.shape[1];
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) da(j, i) += dc(i, j);
    });
}

Tape::Var Tape::add(Var a, Var b) {
    int ia = check(a), ib = check(b);
    return push(saconv::add(val(ia), val(ib)), [ia, ib](Tape& t) {
        const Tensor& dc = t.grad_mut(t.cursor_);
        Tensor& da = t.grad_mut(ia);
        Tensor& db = t.grad_mut(ib);
        for (std::size_t i = 0; i < dc.data.size(); ++i) {
            da.data[i] += dc.data[i];
            db.data[i] += dc.data[i];
        }
    });
}

Tape::Var Tape::add_rowvec(Var a, Var b) {
    int ia = check(a), ib = check(b);
    return push(saconv::add_rowvec(val(ia), val(ib)), [ia, ib](Tape& t) {
        const Tensor& dc = t.grad_mut(t.cursor_);
        Tensor& da = t.grad_mut(ia);
        Tensor& db = t.grad_mut(ib);
        int m = dc.shape[0], n = dc.shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                da(i, j) += dc(i, j);
                db(j) += dc(i, j);
            }
    });
}

Tape::Var Tape::mul(Var a, Var b) {
    int ia = check(a), ib = check(b);
    return push(saconv::mul(val(ia), val(ib)), [ia, ib](Tape& t) {
        const Tensor& dc = t.grad_mut(t.cursor_);
        const Tensor& av = t.val(ia);
        const Tensor& bv = t.val(ib);
        Tensor& da = t.grad_mut(ia);
        Tensor& db = t.grad_mut(ib);
        for (std::size_t i = 0; i < dc.data.size(); ++i) {
            da.data[i] += dc.data[i] * bv.data[i];
            db.data[i] += dc.data[i] * av.data[i];
        }
    });
}

Tape::Var Tape::scale_shift(Var a, double s, double c) {
    int ia = check(a);
    return push(saconv::scale_shift(val(ia), s, c), [ia, s](Tape& t) {
        const Tensor& dc = t.grad_mut(t.cursor_);
        Tensor& da = t.grad_mut(ia);
        for (std::size_t i = 0; i < dc.data.size(); ++i) da.data[i] += s * dc.data[i];
    });
}

Tape::Var Tape::relu(Var a) {
    int ia = check(a);
    return push(saconv::relu(val(ia)), [ia](Tape& t) {
        const Tensor& dc = t.grad_mut(t.cursor_);
        const Tensor& av = t.val(ia);
        Tensor& da = t.grad_mut(ia);
        for (std::size_t i = 0; i < dc.data.size(); ++i) {
            if (av.data[i] > 0.0) da.data[i] += dc.data[i];
        }
    });
}

Tape::Var Tape::tanh_act(Var a) {
    int ia = check(a);
    return push(saconv::tanh_act(val(ia)), [ia](Tape& t) {
        int self = t.cursor_;
        const Tensor& dc = t.grad_mut(self);
        const Tensor& y = t.val(self);
        Tensor& da = t.grad_mut(ia);
        for (std::size_t i = 0; i < dc.data.size(); ++i) {
            da.data[i] += dc.data[i] * (1.0 - y.data[i] * y.data[i]);
        }
    });
}

Tape::Var Tape::sigmoid(Var a) {
    int ia = check(a);
    return push(saconv::sigmoid(val(ia)), [ia](Tape& t) {
        int self = t.cursor_;
        const Tensor& dc = t.grad_mut(self);
        const Tensor& y = t.val(self);
        Tensor& da = t.grad_mut(ia);
        for (std::size_t i = 0; i < dc.data.size(); ++i) {
            da.data[i] += dc.data[i] * y.data[i] * (1.0 - y.data[i]);
        }
    });
}

Tape::Var Tape::softmax(Var a) {
    int ia = check(a);
    return push(saconv::softmax(val(ia)), [ia](Tape& t) {
        int self = t.cursor_;
        const Tensor& dc = t.grad_mut(self);
        const Tensor& y = t.val(self);
        Tensor& da = t.grad_mut(ia);
        int n = y.shape.back();
        std::int64_t rows = y.numel() / n;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* yr = y.data.data() + r * n;
            const double* gr = dc.data.data() + r * n;
            double* dr = da.data.data() + r * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += gr[j] * yr[j];
            for (int j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
    });
}

Tape::Var Tape::concat(Var a, Var b, int axis) {
    int ia = check(a), ib = check(b);
    ConcatDims d = concat_dims(val(ia), val(ib), axis);
    return push(saconv::concat(val(ia), val(ib), axis), [ia, ib, d](Tape& t) {
        const Tensor& dc = t.grad_mut(t.cursor_);
        Tensor& da = t.grad_mut(ia);
        Tensor& db = t.grad_mut(ib);
        for (std::int64_t o = 0; o < d.outer; ++o) {
            const double* src = dc.data.data() + o * (d.a_slab + d.b_slab);
            double* pa = da.data.data() + o * d.a_slab;
            double* pb = db.data.data() + o * d.b_slab;
            for (std::int64_t i = 0; i < d.a_slab; ++i) pa[i] += src[i];
            for (std::int64_t i = 0; i < d.b_slab; ++i) pb[i] += src[d.a_slab + i];
        }
    });
}

Tape::Var Tape::reshape(Var a, std::vector<int> shape) {
    int ia = check(a);
    return push(saconv::reshape(val(ia), std::move(shape)), [ia](Tape& t) {
        const Tensor& dc = t.grad_mut(t.cursor_);
        Tensor& da = t.grad_mut(ia);
        for (std::size_t i = 0; i < dc.data.size(); ++i) da.data[i] += dc.data[i];
    });
}

Tape::Var Tape::conv2d(Var x, Var kernel, Var bias) {
    int ix = check(x), ik = check(kernel), ib = check(bias);
    ConvDims d = conv_dims(val(ix), val(ik), val(ib));
    return push(saconv::conv2d(val(ix), val(ik), val(ib)), [ix, ik, ib, d](Tape& t) {
        const Tensor& dy = t.grad_mut(t.cursor_);
        const Tensor& xv = t.val(ix);
        const Tensor& kv = t.val(ik);
        Tensor& dx = t.grad_mut(ix);
        Tensor& dk = t.grad_mut(ik);
        Tensor& db = t.grad_mut(ib);
        for (int i = 0; i < d.h; ++i) {
            for (int j = 0; j < d.w; ++j) {
                const double* dyrow = &dy(i, j, 0);
                for (int o = 0; o < d.dout; ++o) db(o) += dyrow[o];
                for (int di = 0; di < d.k; ++di) {
                    int ii = i + di - d.pad;
                    if (ii < 0 || ii >= d.h) continue;
                    for (int dj = 0; dj < d.k; ++dj) {
                        int jj = j + dj - d.pad;
                        if (jj < 0 || jj >= d.w) continue;
                        const double* xrow = &xv(ii, jj, 0);
                        double* dxrow = &dx(ii, jj, 0);
                        for (int c = 0; c < d.din; ++c) {
                            const double* krow = &kv(di, dj, c, 0);
                            double* dkrow = &dk(di, dj, c, 0);
                            double xc = xrow[c];
                            double acc = 0.0;
                            for (int o = 0; o < d.dout; ++o) {
                                dkrow[o] += xc * dyrow[o];
                                acc += krow[o] * dyrow[o];
                            }
                            dxrow[c] += acc;
                        }
                    }
                }
            }
        }
    });
}

Tape::Var Tape::maxpool(Var x, int p) {
    int ix = check(x);
    const Tensor& xv = val(ix);
    Tensor y = saconv::maxpool(xv, p);
    // record winner positions for the backward scatter
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(y.numel()));
    int oh = y.shape[0], ow = y.shape[1], dch = y.shape[2];
    std::size_t out_idx = 0;
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
            for (int c = 0; c < dch; ++c) {
                double best = xv(i * p, j * p, c);
                std::int64_t best_at =
                    (static_cast<std::int64_t>(i) * p * xv.shape[1] + j * p) * dch + c;
                for (int di = 0; di < p; ++di)
                    for (int dj = 0; dj < p; ++dj) {
                        double v = xv(i * p + di, j * p + dj, c);
                        if (v > best) {
                            best = v;
                            best_at = (static_cast<std::int64_t>(i * p + di) * xv.shape[1] +
                                       (j * p + dj)) * dch + c;
                        }
                    }
                argmax[out_idx++] = best_at;
            }
    return push(std::move(y), [ix, argmax = std::move(argmax)](Tape& t) {
        const Tensor& dy = t.grad_mut(t.cursor_);
        Tensor& dx = t.grad_mut(ix);
        for (std::size_t i = 0; i < argmax.size(); ++i) {
            dx.data[static_cast<std::size_t>(argmax[i])] += dy.data[i];
        }
    });
}

Tape::Var Tape::dropout_mask(Var x, std::vector<double> mask) {
    int ix = check(x);
    const Tensor& xv = val(ix);
    if (mask.size() != xv.data.size()) {
        throw DimensionError("dropout: mask of " + std::to_string(mask.size()) +
                             " for tensor " + shape_str(xv.shape));
    }
    Tensor y = xv;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= mask[i];
    return push(std::move(y), [ix, mask = std::move(mask)](Tape& t) {
        const Tensor& dy = t.grad_mut(t.cursor_);
        Tensor& dx = t.grad_mut(ix);
        for (std::size_t i = 0; i < mask.size(); ++i) dx.data[i] += dy.data[i] * mask[i];
    });
}

Tape::Var Tape::cross_entropy(Var pred, std::vector<int> targets,
                              std::vector<double> class_weights) {
    int ip = check(pred);
    double loss = cross_entropy_value(val(ip), targets, class_weights);
    return push(Tensor({1}, {loss}),
                [ip, targets = std::move(targets), w = std::move(class_weights)](Tape& t) {
        double g = t.grad_mut(t.cursor_)(0);
        const Tensor& pv = t.val(ip);
        Tensor& dp = t.grad_mut(ip);
        int b = pv.shape[0];
        double inv_b = 1.0 / b;
        for (int i = 0; i < b; ++i) {
            int y = targets[static_cast<std::size_t>(i)];
            double p = pv(i, y);
            if (p > 1e-12 && p < 1.0) {
                dp(i, y) -= g * inv_b * w[static_cast<std::size_t>(y)] / p;
            }
        }
    });
}

Tape::Var Tape::sum_all(Var a) {
    int ia = check(a);
    return push(saconv::sum_all(val(ia)), [ia](Tape& t) {
        double g = t.grad_mut(t.cursor_)(0);
        Tensor& da = t.grad_mut(ia);
        for (double& v : da.data) v += g;
    });
}

void Tape::backward(Var loss) {
    int il = check(loss);
    if (backward_run_) {
        throw ContractError("tape: backward() called twice without reset()");
    }
    if (val(il).numel() != 1) {
        throw ContractError("tape: backward() needs a scalar loss, got " +
                            shape_str(val(il).shape));
    }
    backward_run_ = true;
    for (int id = 0; id <= il; ++id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        n.grad = Tensor(val(id).shape);
    }
    grad_mut(il)(0) = 1.0;
    for (int id = il; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.back) {
            cursor_ = id;
            n.back(*this);
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_run_ = false;
}

}  // namespace saconv
