#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "saconv/common.hpp"
#include "saconv/gradcheck.hpp"
#include "saconv/tensor.hpp"

namespace testutil {

inline saconv::Tensor random_tensor(std::vector<int> shape, saconv::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
    saconv::Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Builds a scalar loss from an op under test: loss = sum(out .* projection)
// with a fixed random projection, and checks every input gradient against
// central finite differences computed by re-running the forward pass.
using OpBuilder =
    std::function<saconv::Tape::Var(saconv::Tape&, const std::vector<saconv::Tape::Var>&)>;

struct GradProbe {
    double worst_rel = 0.0;
    int worst_input = -1;
};

inline GradProbe check_op_gradients(const OpBuilder& build, std::vector<saconv::Tensor> inputs,
                                    std::uint64_t proj_seed = 99, double eps = 1e-6) {
    using saconv::Tape;
    using saconv::Tensor;

    auto eval = [&](const std::vector<Tensor>& ins) {
        Tape t;
        std::vector<Tape::Var> vars;
        for (const Tensor& x : ins) vars.push_back(t.leaf(x));
        Tape::Var out = build(t, vars);
        saconv::Rng prng(proj_seed);
        Tensor proj = random_tensor(t.value(out).shape, prng);
        Tape::Var loss = t.sum_all(t.mul(out, t.leaf(proj)));
        return t.value(loss)(0);
    };

    // analytic gradients
    Tape tape;
    std::vector<Tape::Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.leaf(x));
    Tape::Var out = build(tape, vars);
    saconv::Rng prng(proj_seed);
    Tensor proj = random_tensor(tape.value(out).shape, prng);
    Tape::Var loss = tape.sum_all(tape.mul(out, tape.leaf(proj)));
    tape.backward(loss);

    GradProbe probe;
    for (std::size_t vi = 0; vi < inputs.size(); ++vi) {
        const Tensor& analytic = tape.grad(vars[vi]);
        for (std::size_t i = 0; i < inputs[vi].data.size(); ++i) {
            double saved = inputs[vi].data[i];
            inputs[vi].data[i] = saved + eps;
            double up = eval(inputs);
            inputs[vi].data[i] = saved - eps;
            double down = eval(inputs);
            inputs[vi].data[i] = saved;
            double numeric = (up - down) / (2.0 * eps);
            double rel = saconv::gradcheck_rel_err(analytic.data[i], numeric);
            if (rel > probe.worst_rel) {
                probe.worst_rel = rel;
                probe.worst_input = static_cast<int>(vi);
            }
        }
    }
    return probe;
}

inline bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

}  // namespace testutil
