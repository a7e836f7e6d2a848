#include "saconv/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace saconv {

double gradcheck_rel_err(double analytic, double numeric) {
    double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

ModelParams init_params_for_gradcheck(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams mp = ModelParams::init(cfg, seed);
    Rng rng(derive_seed(seed, 0x6c));
    mp.for_each([&](const std::string& name, Tensor& t) {
        if (name.find(".wv") != std::string::npos ||
            name.find("attn.proj") != std::string::npos) {
            // positive value/projection weights keep the attention branch on
            // the live side of the ReLU for non-negative block inputs
            for (double& v : t.data) v = rng.uniform(0.05, 0.35);
        } else if (name.find("bias") != std::string::npos) {
            for (double& v : t.data) v = rng.uniform(0.02, 0.2);
        } else if (name == "dense.weight") {
            for (double& v : t.data) v = rng.uniform(-0.3, 0.3);
        }
    });
    return mp;
}

std::vector<Tensor> analytic_gradients(const ModelParams& mp, const Tensor& x, int label,
                                       const std::vector<double>& class_weights) {
    Tape tape;
    TracedParams tp = watch_params(tape, mp);
    Tape::Var in = tape.leaf_ref(x);
    Tape::Var probs = traced_model_forward(tape, tp, mp.config, in, false, nullptr);
    Tape::Var pred = tape.reshape(probs, {1, mp.config.num_classes});
    Tape::Var loss = tape.cross_entropy(pred, {label}, class_weights);
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(tp.ordered.size());
    for (Tape::Var v : tp.ordered) grads.push_back(tape.grad(v));
    return grads;
}

GradCheckReport compare_to_finite_differences(ModelParams& mp, const Tensor& x, int label,
                                              const std::vector<double>& class_weights,
                                              const std::vector<Tensor>& analytic,
                                              double eps) {
    const int n_blocks = mp.config.blocks;
    ForwardStages cache = forward_stages(mp, x);

    // parameter tensors in canonical order, each mapped to its stage
    std::vector<Tensor*> tensors;
    std::vector<std::string> names;
    std::vector<int> stage;
    mp.for_each([&](const std::string& name, Tensor& t) {
        tensors.push_back(&t);
        names.push_back(name);
        int s = n_blocks;  // highway / dense
        if (name.rfind("block", 0) == 0) s = std::stoi(name.substr(5));
        stage.push_back(s);
    });
    if (analytic.size() != tensors.size()) {
        throw ContractError("gradcheck: " + std::to_string(analytic.size()) +
                            " gradient tensors for " + std::to_string(tensors.size()) +
                            " parameters");
    }

    auto loss_from = [&](int s) {
        Tensor probs = forward_from_stage(mp, cache, s);
        return cross_entropy_value(reshape(probs, {1, mp.config.num_classes}), {label},
                                   class_weights);
    };

    GradCheckReport report;
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        Tensor& t = *tensors[ti];
        const Tensor& g = analytic[ti];
        if (!g.same_shape(t)) {
            throw ContractError("gradcheck: gradient shape " + shape_str(g.shape) +
                                " for parameter " + names[ti] + " " + shape_str(t.shape));
        }
        GradCheckEntry entry;
        entry.name = names[ti];
        int s = stage[ti];
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            double saved = t.data[i];
            t.data[i] = saved + eps;
            double up = loss_from(s);
            t.data[i] = saved - eps;
            double down = loss_from(s);
            t.data[i] = saved;
            double numeric = (up - down) / (2.0 * eps);
            double rel = gradcheck_rel_err(g.data[i], numeric);
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = static_cast<std::int64_t>(i);
                entry.analytic = g.data[i];
                entry.numeric = numeric;
            }
        }
        if (entry.max_rel_err > report.worst) {
            report.worst = entry.max_rel_err;
            report.worst_name = entry.name;
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

GradCheckReport grad_check(ModelParams& mp, const Tensor& x, int label,
                           const std::vector<double>& class_weights, double eps) {
    std::vector<Tensor> grads = analytic_gradients(mp, x, label, class_weights);
    return compare_to_finite_differences(mp, x, label, class_weights, grads, eps);
}

}  // namespace saconv
