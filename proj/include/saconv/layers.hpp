#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "saconv/common.hpp"
#include "saconv/tensor.hpp"

namespace saconv {

// Architecture hyperparameters. Defaults reproduce the full two-block
// attention-augmented network with a highway head on 15x35x2 inputs.
struct ModelConfig {
    int input_h = 15;
    int input_w = 35;
    int input_d = 2;
    int blocks = 2;
    int total_filters_per_block = 16;
    int attn_channels = 4;  // of total_filters_per_block; 0 disables attention
    int num_heads = 2;
    int d_k = 4;
    int kernel_size = 3;
    int pool_size = 2;
    double dropout_rate = 0.25;
    int num_classes = 2;
    bool use_highway = true;

    int d_v() const { return num_heads > 0 ? attn_channels / num_heads : 0; }
    int conv_channels() const { return total_filters_per_block - attn_channels; }
    int block_input_depth(int block) const {
        return block == 0 ? input_d : total_filters_per_block;
    }
    // spatial dims after `blocks_done` pool stages (floor division)
    std::pair<int, int> spatial_after(int blocks_done) const;
    int flattened_features() const;  // the highway layer width

    void validate() const;  // throws ConfigError
};

struct AttentionParams {
    std::vector<Tensor> w_q, w_k, w_v;  // one [D,d_k] / [D,d_k] / [D,d_v] per head
    Tensor w_mh;                        // [attn_channels, attn_channels]
};

struct BlockParams {
    Tensor conv_kernel;  // [K,K,D_in,conv_channels]
    Tensor conv_bias;    // [conv_channels]
    AttentionParams attn;
};

struct HighwayParams {
    Tensor w_transform, b_transform;  // [F,F], [F]
    Tensor w_gate, b_gate;
};

struct DenseParams {
    Tensor w, b;  // [F,num_classes], [num_classes]
};

struct ModelParams {
    ModelConfig config;
    std::vector<BlockParams> blocks;
    HighwayParams highway;  // present only when config.use_highway
    DenseParams dense;

    // Weights drawn uniform with He-style fan-in scaling; biases zero except
    // the highway gate bias at -1 (carry-biased start); dense layer zeroed.
    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    // Canonical named traversal; fixes the ordering used by the optimizer,
    // checkpoints and gradient checking.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    std::vector<std::string> tensor_names() const;
    std::int64_t total_parameters() const;
};

// ---------------------------------------------------------------------------
// Pure layers (forward only; shared by inference and the finite-difference
// oracle path).
// ---------------------------------------------------------------------------

// Scaled dot-product attention for one head over token rows.
Tensor attention_head(const Tensor& tokens, const Tensor& w_q, const Tensor& w_k,
                      const Tensor& w_v);
// The [T,T] softmax weight matrix of one head (row t = weights over tokens).
Tensor attention_weights(const Tensor& tokens, const Tensor& w_q, const Tensor& w_k);
// Tokens are the H*W spatial positions with D-dimensional features.
Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, int num_heads);
// Channel concat of the convolution and attention branches.
Tensor aaconv(const Tensor& x, const BlockParams& p, const ModelConfig& cfg);
// y = T(x) .* H(x) + (1 - T(x)) .* x on a flat feature vector [F].
Tensor highway(const Tensor& x, const HighwayParams& p);
// Inverted dropout; identity when !training. rate in [0,1).
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);
std::vector<double> make_dropout_mask(std::size_t n, double rate, Rng& rng);

// Full forward pass -> class probabilities [num_classes]. rng is required
// only when training with a nonzero dropout rate.
Tensor model_forward(const ModelParams& mp, const Tensor& x, bool training,
                     Rng* rng = nullptr);

// Evaluation-mode forward split at block boundaries so a perturbation in a
// late parameter does not force recomputing earlier stages. Stage values are
// bit-identical to a plain eval forward.
struct ForwardStages {
    std::vector<Tensor> stage_inputs;  // [0]=x, [b+1]=output after block b
};
ForwardStages forward_stages(const ModelParams& mp, const Tensor& x);
// Recompute from `first_block` (0-based; == config.blocks means head only),
// returning class probabilities.
Tensor forward_from_stage(const ModelParams& mp, const ForwardStages& cache, int first_block);

// ---------------------------------------------------------------------------
// Traced layers (recorded on a Tape for training).
// ---------------------------------------------------------------------------

struct TracedParams {
    std::vector<Tape::Var> ordered;  // for_each order, aligned with ModelParams
    struct Block {
        Tape::Var conv_kernel, conv_bias;
        std::vector<Tape::Var> w_q, w_k, w_v;
        Tape::Var w_mh;
    };
    std::vector<Block> blocks;
    Tape::Var hw_wt, hw_bt, hw_wg, hw_bg;
    Tape::Var dense_w, dense_b;
};

// Registers every parameter tensor as a tape leaf (by reference; params must
// outlive the tape's backward pass).
TracedParams watch_params(Tape& tape, const ModelParams& mp);

Tape::Var traced_attention_head(Tape& t, Tape::Var tokens, Tape::Var w_q, Tape::Var w_k,
                                Tape::Var w_v);
Tape::Var traced_model_forward(Tape& t, const TracedParams& tp, const ModelConfig& cfg,
                               Tape::Var x, bool training, Rng* rng);

}  // namespace saconv
