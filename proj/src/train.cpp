#include "saconv/train.hpp"

#include <algorithm>
#include <cmath>

namespace saconv {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) {
        throw ConfigError("batch size must be >= 1, got " + std::to_string(batch_size));
    }
    if (!(lr_min <= lr_max)) {
        throw ConfigError("lr_min " + std::to_string(lr_min) + " exceeds lr_max " +
                          std::to_string(lr_max));
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || epsilon <= 0.0) {
        throw ConfigError("invalid Adam hyperparameters");
    }
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch > cfg.epochs) {
        throw ContractError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0," +
                            std::to_string(cfg.epochs) + "]");
    }
    double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
    double lr = cfg.lr_max + (cfg.lr_min - cfg.lr_max) * frac;
    return std::min(cfg.lr_max, std::max(cfg.lr_min, lr));
}

std::vector<double> class_weights_for(const std::vector<GridSample>& train_set,
                                      ClassWeighting cw, int num_classes) {
    std::vector<double> w(static_cast<std::size_t>(num_classes), 1.0);
    if (cw == ClassWeighting::None) return w;
    std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (const GridSample& s : train_set) ++counts[static_cast<std::size_t>(s.label)];
    for (int c = 0; c < num_classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            throw ContractError("class " + std::to_string(c) +
                                " absent from the training split; inverse-frequency weights "
                                "are undefined");
        }
        w[static_cast<std::size_t>(c)] =
            static_cast<double>(train_set.size()) /
            (static_cast<double>(num_classes) *
             static_cast<double>(counts[static_cast<std::size_t>(c)]));
    }
    return w;
}

AdamState AdamState::like(const ModelParams& params) {
    AdamState st;
    params.for_each([&](const std::string&, const Tensor& t) {
        st.m.emplace_back(t.shape);
        st.v.emplace_back(t.shape);
    });
    return st;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr, const TrainConfig& cfg) {
    std::size_t idx = 0;
    ++state.step;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    params.for_each([&](const std::string& name, Tensor& t) {
        const Tensor& g = grads[idx];
        if (!g.same_shape(t)) {
            throw ContractError("adam: gradient " + shape_str(g.shape) + " for parameter " +
                                name + " " + shape_str(t.shape));
        }
        for (double gv : g.data) {
            if (!std::isfinite(gv)) {
                throw ContractError("adam: non-finite gradient for parameter " + name);
            }
        }
        Tensor& m = state.m[idx];
        Tensor& v = state.v[idx];
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            double gv = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gv;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gv * gv;
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            t.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
        ++idx;
    });
    if (idx != grads.size()) {
        throw ContractError("adam: " + std::to_string(grads.size()) + " gradients for " +
                            std::to_string(idx) + " parameters");
    }
}

namespace {

int argmax2(const Tensor& probs) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(probs.data.size()); ++c) {
        if (probs.data[static_cast<std::size_t>(c)] > probs.data[static_cast<std::size_t>(best)])
            best = c;
    }
    return best;
}

}  // namespace

EvalResult evaluate_model(const ModelParams& params, const std::vector<GridSample>& samples,
                          const std::vector<double>& class_weights) {
    EvalResult res;
    res.prob1.assign(samples.size(), 0.0);
    res.pred.assign(samples.size(), 0);
    std::vector<double> losses(samples.size(), 0.0);
    std::vector<int> correct(samples.size(), 0);
    parallel_for(samples.size(), [&](std::size_t i) {
        const GridSample& s = samples[i];
        Tensor probs = model_forward(params, s.anomalies, false, nullptr);
        res.prob1[i] = probs(1);
        res.pred[i] = probs(1) > 0.5 ? 1 : 0;
        losses[i] = cross_entropy_value(reshape(probs, {1, static_cast<int>(probs.numel())}),
                                        {s.label}, class_weights);
        correct[i] = argmax2(probs) == s.label ? 1 : 0;
    });
    for (std::size_t i = 0; i < samples.size(); ++i) {
        res.loss += losses[i];
        res.accuracy += correct[i];
    }
    if (!samples.empty()) {
        res.loss /= static_cast<double>(samples.size());
        res.accuracy /= static_cast<double>(samples.size());
    }
    return res;
}

TrainResult train(const ModelConfig& mcfg, const Dataset& data, const TrainConfig& cfg) {
    mcfg.validate();
    cfg.validate();
    const std::vector<GridSample>& train_set = data.train;
    if (train_set.empty()) throw ContractError("train: empty training split");
    int pos = Dataset::count_positives(train_set);
    if (pos == 0 || pos == static_cast<int>(train_set.size())) {
        throw ContractError(
            "train: training split contains a single class; refusing to fit (class weights "
            "and the decision boundary are undefined)");
    }
    std::vector<double> weights =
        class_weights_for(train_set, cfg.class_weighting, mcfg.num_classes);

    TrainResult result;
    result.params = ModelParams::init(mcfg, derive_seed(cfg.seed, 0));
    ModelParams& params = result.params;
    std::vector<std::string> names = params.tensor_names();
    AdamState adam = AdamState::like(params);
    Rng shuffle_rng(derive_seed(cfg.seed, 1));
    std::uint64_t dropout_root = derive_seed(cfg.seed, 2);

    std::size_t n = train_set.size();
    auto batch = static_cast<std::size_t>(cfg.batch_size);

    // per-sample gradient slots; reduced in sample order so the result does
    // not depend on thread count
    std::vector<std::vector<Tensor>> slots(batch);
    std::vector<double> slot_loss(batch, 0.0);
    std::vector<int> slot_correct(batch, 0);
    std::vector<Tensor> batch_grads;
    params.for_each(
        [&](const std::string&, const Tensor& t) { batch_grads.emplace_back(t.shape); });

    {
        EvalResult ev = evaluate_model(params, train_set, weights);
        result.log.push_back({0, lr_schedule(0, cfg), ev.loss, ev.accuracy});
    }

    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;

    std::uint64_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = lr_schedule(epoch, cfg);
        shuffle_rng.shuffle(indices);
        double epoch_loss = 0.0;
        std::int64_t epoch_correct = 0;

        for (std::size_t start = 0; start < n; start += batch) {
            std::size_t b = std::min(batch, n - start);
            std::uint64_t step_seed = derive_seed(dropout_root, global_step);
            parallel_for(b, [&](std::size_t bi) {
                const GridSample& s = train_set[indices[start + bi]];
                Rng drng(derive_seed(step_seed, bi));
                Tape tape;
                TracedParams tp = watch_params(tape, params);
                Tape::Var in = tape.leaf_ref(s.anomalies);
                Tape::Var probs = traced_model_forward(tape, tp, mcfg, in, true, &drng);
                Tape::Var pred = tape.reshape(probs, {1, mcfg.num_classes});
                Tape::Var loss = tape.cross_entropy(pred, {s.label}, weights);
                tape.backward(loss);
                slot_loss[bi] = tape.value(loss)(0);
                slot_correct[bi] = argmax2(tape.value(probs)) == s.label ? 1 : 0;
                auto& slot = slots[bi];
                slot.resize(tp.ordered.size());
                for (std::size_t p = 0; p < tp.ordered.size(); ++p) {
                    slot[p] = tape.grad(tp.ordered[p]);
                }
            });

            double inv_b = 1.0 / static_cast<double>(b);
            for (std::size_t p = 0; p < batch_grads.size(); ++p) {
                Tensor& acc = batch_grads[p];
                std::fill(acc.data.begin(), acc.data.end(), 0.0);
                for (std::size_t bi = 0; bi < b; ++bi) {
                    const Tensor& g = slots[bi][p];
                    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
                }
                for (double& v : acc.data) v *= inv_b;
            }
            for (std::size_t bi = 0; bi < b; ++bi) {
                epoch_loss += slot_loss[bi];
                epoch_correct += slot_correct[bi];
            }
            try {
                adam_step(params, batch_grads, adam, lr, cfg);
            } catch (const ContractError& e) {
                throw ContractError(std::string(e.what()) + " (epoch " +
                                    std::to_string(epoch + 1) + ", step " +
                                    std::to_string(global_step) + ")");
            }
            ++global_step;
        }
        result.log.push_back({epoch + 1, lr, epoch_loss / static_cast<double>(n),
                              static_cast<double>(epoch_correct) / static_cast<double>(n)});
    }

    EvalResult final_ev = evaluate_model(params, train_set, weights);
    result.final_train_loss = final_ev.loss;
    result.final_train_accuracy = final_ev.accuracy;
    return result;
}

}  // namespace saconv
