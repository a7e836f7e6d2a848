#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "saconv/common.hpp"

namespace saconv {

// Dense row-major float64 tensor. Plain value type: copy freely, share
// read-only across threads.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, double fill);
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
    static Tensor from(std::vector<int> s, std::initializer_list<double> d) {
        return Tensor(std::move(s), std::vector<double>(d));
    }
    static Tensor identity(int n);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

    double& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
    const double& operator()(int i) const { return data[static_cast<std::size_t>(i)]; }
    double& operator()(int i, int j) {
        return data[static_cast<std::size_t>(i) * shape[1] + j];
    }
    const double& operator()(int i, int j) const {
        return data[static_cast<std::size_t>(i) * shape[1] + j];
    }
    double& operator()(int i, int j, int k) {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    const double& operator()(int i, int j, int k) const {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    double& operator()(int i, int j, int k, int l) {
        return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const double& operator()(int i, int j, int k, int l) const {
        return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

std::int64_t shape_numel(const std::vector<int>& shape);

// ---------------------------------------------------------------------------
// Pure forward kernels. These carry the numeric definitions; the Tape ops
// below call the same kernels and add backward closures.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-D
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& b);  // a[m,n] + b[n] per row
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale_shift(const Tensor& a, double s, double c);
Tensor relu(const Tensor& a);
Tensor tanh_act(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a);  // along the last axis, max-stabilized
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& a, int axis, int lo, int hi);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias);
Tensor maxpool(const Tensor& x, int p);
Tensor sum_all(const Tensor& a);  // -> shape [1]
double cross_entropy_value(const Tensor& pred, const std::vector<int>& targets,
                           const std::vector<double>& class_weights);

// ---------------------------------------------------------------------------
// Reverse-mode gradient tape. One tape per worker; values are owned by the
// tape (or referenced for long-lived leaves), gradients are materialized by
// backward(). Nodes are recorded in topological order by construction.
// ---------------------------------------------------------------------------

class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf holding its own copy of the value.
    Var leaf(Tensor value);
    // Leaf referencing an external tensor; it must outlive the tape's use.
    // Avoids copying large parameter tensors on every recorded step.
    Var leaf_ref(const Tensor& external);

    const Tensor& value(Var v) const { return val(check(v)); }
    // Valid after backward(); same shape as the value.
    const Tensor& grad(Var v) const;

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var add_rowvec(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale_shift(Var a, double s, double c);
    Var relu(Var a);
    Var tanh_act(Var a);
    Var sigmoid(Var a);
    Var softmax(Var a);
    Var concat(Var a, Var b, int axis);
    Var reshape(Var a, std::vector<int> shape);
    Var conv2d(Var x, Var kernel, Var bias);
    Var maxpool(Var x, int p);
    // mask entries are 0 or the survivor scale; recorded as a constant factor
    Var dropout_mask(Var x, std::vector<double> mask);
    Var cross_entropy(Var pred, std::vector<int> targets, std::vector<double> class_weights);
    Var sum_all(Var a);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. loss must be
    // scalar (numel == 1). A second call without reset() is rejected.
    void backward(Var loss);
    bool backward_run() const { return backward_run_; }

    // Clears all nodes; the tape can be reused for the next step.
    void reset();
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        std::function<void(Tape&)> back;  // null for leaves
    };
    std::vector<Node> nodes_;
    bool backward_run_ = false;
    int cursor_ = -1;  // node whose backward closure is currently running

    int check(Var v) const;
    const Tensor& val(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        return n.external ? *n.external : n.owned;
    }
    Tensor& grad_mut(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    Var push(Tensor value, std::function<void(Tape&)> back);
};

}  // namespace saconv
