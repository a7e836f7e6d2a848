#pragma once

#include <cstdint>
#include <vector>

#include "saconv/climate.hpp"
#include "saconv/layers.hpp"

namespace saconv {

enum class ClassWeighting { None, InverseFrequency };

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double lr_max = 1e-2;
    double lr_min = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 42;
    ClassWeighting class_weighting = ClassWeighting::InverseFrequency;

    void validate() const;
};

// Linear decay from lr_max at epoch 0 to lr_min at epoch == epochs.
double lr_schedule(int epoch, const TrainConfig& cfg);

// none -> all ones; inverse-frequency -> n_total / (num_classes * n_c).
std::vector<double> class_weights_for(const std::vector<GridSample>& train_set,
                                      ClassWeighting cw, int num_classes);

struct AdamState {
    std::int64_t step = 0;
    std::vector<Tensor> m, v;  // aligned with ModelParams::for_each order

    static AdamState like(const ModelParams& params);
};

// Bias-corrected Adam update in place. Throws ContractError naming the
// parameter if a gradient contains a non-finite value.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr, const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;  // 0 = state before training
    double lr = 0.0;
    double loss = 0.0;            // mean weighted cross-entropy
    double train_accuracy = 0.0;  // argmax agreement on the training pass
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> log;
    // evaluation-mode pass over the training split after the last epoch
    double final_train_loss = 0.0;
    double final_train_accuracy = 0.0;
};

struct EvalResult {
    std::vector<double> prob1;  // class-1 probability per sample
    std::vector<int> pred;      // prob1 > 0.5
    double loss = 0.0;
    double accuracy = 0.0;
};

EvalResult evaluate_model(const ModelParams& params, const std::vector<GridSample>& samples,
                          const std::vector<double>& class_weights);

// Seeded mini-batch training over data.train. Deterministic for a fixed
// (seed, data, config): shuffling, init and dropout streams derive from
// cfg.seed, and per-sample gradients are reduced in sample order.
TrainResult train(const ModelConfig& mcfg, const Dataset& data, const TrainConfig& cfg);

}  // namespace saconv
