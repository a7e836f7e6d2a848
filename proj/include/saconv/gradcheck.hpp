#pragma once

#include <string>
#include <vector>

#include "saconv/layers.hpp"
#include "saconv/tensor.hpp"

namespace saconv {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;  // one per parameter tensor
    double worst = 0.0;
    std::string worst_name;

    bool passed(double tolerance) const { return worst < tolerance; }
};

// rel = |a - f| / max(1, |a|, |f|); degrades to an absolute comparison for
// near-zero gradients where central differences are dominated by roundoff.
double gradcheck_rel_err(double analytic, double numeric);

// The training default zero-initializes the dense layer, which blocks
// gradient flow to everything upstream and would make the comparison
// vacuous there. This init randomizes every tensor, biases included.
ModelParams init_params_for_gradcheck(const ModelConfig& cfg, std::uint64_t seed);

// Reverse-mode gradients of the weighted cross-entropy loss of one sample,
// in ModelParams::for_each order. Evaluation mode (no dropout).
std::vector<Tensor> analytic_gradients(const ModelParams& mp, const Tensor& x, int label,
                                       const std::vector<double>& class_weights);

// Central finite differences (eps) per parameter element against the supplied
// gradients. Stages before a perturbed parameter's block are reused from a
// cached forward pass; the recomputed suffix is bit-identical to a full pass.
GradCheckReport compare_to_finite_differences(ModelParams& mp, const Tensor& x, int label,
                                              const std::vector<double>& class_weights,
                                              const std::vector<Tensor>& analytic,
                                              double eps);

// analytic_gradients + compare_to_finite_differences in one call.
GradCheckReport grad_check(ModelParams& mp, const Tensor& x, int label,
                           const std::vector<double>& class_weights, double eps = 1e-5);

}  // namespace saconv
