#include "saconv/layers.hpp"

#include <cmath>
#include <utility>

namespace saconv {

std::pair<int, int> ModelConfig::spatial_after(int blocks_done) const {
    int h = input_h, w = input_w;
    for (int b = 0; b < blocks_done; ++b) {
        h /= pool_size;
        w /= pool_size;
    }
    return {h, w};
}

int ModelConfig::flattened_features() const {
    auto [h, w] = spatial_after(blocks);
    return h * w * total_filters_per_block;
}

void ModelConfig::validate() const {
    if (input_h < 1 || input_w < 1 || input_d < 1) {
        throw ConfigError("input dims must be positive, got " +
                          shape_str({input_h, input_w, input_d}));
    }
    if (blocks < 1) throw ConfigError("at least one block required");
    if (total_filters_per_block < 1) throw ConfigError("total filters must be positive");
    if (attn_channels < 0 || attn_channels >= total_filters_per_block) {
        throw ConfigError("attention channels " + std::to_string(attn_channels) +
                          " must lie in [0, " + std::to_string(total_filters_per_block) + ")");
    }
    if (attn_channels > 0) {
        if (num_heads < 1) throw ConfigError("num_heads must be positive");
        if (attn_channels % num_heads != 0) {
            throw ConfigError("attention channels " + std::to_string(attn_channels) +
                              " not divisible by " + std::to_string(num_heads) + " heads");
        }
        if (d_k < 1) throw ConfigError("d_k must be positive");
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        throw ConfigError("kernel size must be odd, got " + std::to_string(kernel_size));
    }
    if (pool_size < 1) throw ConfigError("pool size must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout rate " + std::to_string(dropout_rate) + " outside [0,1)");
    }
    if (num_classes < 2) throw ConfigError("need at least two classes");
    auto [h, w] = std::pair<int, int>{input_h, input_w};
    for (int b = 0; b < blocks; ++b) {
        if (pool_size > h || pool_size > w) {
            throw ConfigError("pool size " + std::to_string(pool_size) +
                              " exceeds block " + std::to_string(b) + " spatial dims " +
                              shape_str({h, w}));
        }
        h /= pool_size;
        w /= pool_size;
    }
}

namespace {

Tensor he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    double limit = std::sqrt(6.0 / fan_in);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams mp;
    mp.config = cfg;
    for (int b = 0; b < cfg.blocks; ++b) {
        int din = cfg.block_input_depth(b);
        int k = cfg.kernel_size;
        BlockParams bp;
        bp.conv_kernel = he_uniform({k, k, din, cfg.conv_channels()}, k * k * din, rng);
        bp.conv_bias = Tensor({cfg.conv_channels()});
        if (cfg.attn_channels > 0) {
            for (int h = 0; h < cfg.num_heads; ++h) {
                bp.attn.w_q.push_back(he_uniform({din, cfg.d_k}, din, rng));
                bp.attn.w_k.push_back(he_uniform({din, cfg.d_k}, din, rng));
                bp.attn.w_v.push_back(he_uniform({din, cfg.d_v()}, din, rng));
            }
            bp.attn.w_mh =
                he_uniform({cfg.attn_channels, cfg.attn_channels}, cfg.attn_channels, rng);
        }
        mp.blocks.push_back(std::move(bp));
    }
    int f = cfg.flattened_features();
    if (cfg.use_highway) {
        mp.highway.w_transform = he_uniform({f, f}, f, rng);
        mp.highway.b_transform = Tensor({f});
        mp.highway.w_gate = he_uniform({f, f}, f, rng);
        mp.highway.b_gate = Tensor({f}, -1.0);
    }
    mp.dense.w = Tensor({f, cfg.num_classes});
    mp.dense.b = Tensor({cfg.num_classes});
    return mp;
}

namespace {

template <typename Self, typename Fn>
void for_each_impl(Self& mp, const Fn& fn) {
    for (std::size_t b = 0; b < mp.blocks.size(); ++b) {
        auto& bp = mp.blocks[b];
        std::string prefix = "block" + std::to_string(b) + ".";
        fn(prefix + "conv.kernel", bp.conv_kernel);
        fn(prefix + "conv.bias", bp.conv_bias);
        for (std::size_t h = 0; h < bp.attn.w_q.size(); ++h) {
            std::string head = prefix + "attn.head" + std::to_string(h) + ".";
            fn(head + "wq", bp.attn.w_q[h]);
            fn(head + "wk", bp.attn.w_k[h]);
            fn(head + "wv", bp.attn.w_v[h]);
        }
        if (!bp.attn.w_q.empty()) fn(prefix + "attn.proj", bp.attn.w_mh);
    }
    if (mp.config.use_highway) {
        fn("highway.transform.weight", mp.highway.w_transform);
        fn("highway.transform.bias", mp.highway.b_transform);
        fn("highway.gate.weight", mp.highway.w_gate);
        fn("highway.gate.bias", mp.highway.b_gate);
    }
    fn("dense.weight", mp.dense.w);
    fn("dense.bias", mp.dense.b);
}

}  // namespace

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    for_each_impl(*this, fn);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    for_each_impl(*this, fn);
}

std::vector<std::string> ModelParams::tensor_names() const {
    std::vector<std::string> names;
    for_each([&](const std::string& n, const Tensor&) { names.push_back(n); });
    return names;
}

std::int64_t ModelParams::total_parameters() const {
    std::int64_t n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

// ---------------------------------------------------------------------------
// Pure layers
// ---------------------------------------------------------------------------

Tensor attention_head(const Tensor& tokens, const Tensor& w_q, const Tensor& w_k,
                      const Tensor& w_v) {
    Tensor q = matmul(tokens, w_q);
    Tensor k = matmul(tokens, w_k);
    Tensor v = matmul(tokens, w_v);
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(w_k.shape[1]));
    Tensor scores = scale_shift(matmul(q, transpose(k)), inv_sqrt_dk, 0.0);
    return matmul(softmax(scores), v);
}

Tensor attention_weights(const Tensor& tokens, const Tensor& w_q, const Tensor& w_k) {
    Tensor q = matmul(tokens, w_q);
    Tensor k = matmul(tokens, w_k);
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(w_k.shape[1]));
    return softmax(scale_shift(matmul(q, transpose(k)), inv_sqrt_dk, 0.0));
}

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, int num_heads) {
    if (x.rank() != 3) {
        throw DimensionError("multi_head_attention: expected [H,W,D], got " +
                             shape_str(x.shape));
    }
    int h = x.shape[0], w = x.shape[1], d = x.shape[2];
    Tensor tokens = reshape(x, {h * w, d});
    Tensor heads;
    for (int i = 0; i < num_heads; ++i) {
        Tensor out = attention_head(tokens, p.w_q[static_cast<std::size_t>(i)],
                                    p.w_k[static_cast<std::size_t>(i)],
                                    p.w_v[static_cast<std::size_t>(i)]);
        heads = i == 0 ? std::move(out) : concat(heads, out, 1);
    }
    Tensor projected = matmul(heads, p.w_mh);
    return reshape(projected, {h, w, projected.shape[1]});
}

Tensor aaconv(const Tensor& x, const BlockParams& p, const ModelConfig& cfg) {
    int conv_ch = p.conv_kernel.shape[3];
    int attn_ch = cfg.attn_channels;
    if (conv_ch + attn_ch != cfg.total_filters_per_block) {
        throw ConfigError("aaconv: conv " + std::to_string(conv_ch) + " + attention " +
                          std::to_string(attn_ch) + " channels != " +
                          std::to_string(cfg.total_filters_per_block));
    }
    Tensor conv_out = conv2d(x, p.conv_kernel, p.conv_bias);
    if (attn_ch == 0) return conv_out;
    Tensor attn_out = multi_head_attention(x, p.attn, cfg.num_heads);
    return concat(conv_out, attn_out, 2);
}

Tensor highway(const Tensor& x, const HighwayParams& p) {
    if (x.rank() != 1) throw DimensionError("highway: expected [F], got " + shape_str(x.shape));
    int f = x.shape[0];
    if (p.w_transform.rank() != 2 || p.w_transform.shape[0] != f ||
        p.w_transform.shape[1] != f || p.w_gate.shape != p.w_transform.shape) {
        throw ConfigError("highway: weights must be square [" + std::to_string(f) + "," +
                          std::to_string(f) + "], got " + shape_str(p.w_transform.shape) +
                          " and " + shape_str(p.w_gate.shape));
    }
    Tensor row = reshape(x, {1, f});
    Tensor h = tanh_act(add_rowvec(matmul(row, p.w_transform), p.b_transform));
    Tensor t = sigmoid(add_rowvec(matmul(row, p.w_gate), p.b_gate));
    Tensor carry = mul(scale_shift(t, -1.0, 1.0), row);
    return reshape(add(mul(t, h), carry), {f});
}

std::vector<double> make_dropout_mask(std::size_t n, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate " + std::to_string(rate) + " outside [0,1)");
    }
    std::vector<double> mask(n, 1.0);
    if (rate == 0.0) return mask;
    double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    }
    return mask;
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate " + std::to_string(rate) + " outside [0,1)");
    }
    if (!training || rate == 0.0) return x;
    std::vector<double> mask = make_dropout_mask(x.data.size(), rate, rng);
    Tensor y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= mask[i];
    return y;
}

namespace {

Tensor head_forward(const ModelParams& mp, const Tensor& flat) {
    const ModelConfig& cfg = mp.config;
    Tensor features = cfg.use_highway ? highway(flat, mp.highway) : flat;
    Tensor row = reshape(features, {1, features.shape[0]});
    Tensor logits = add_rowvec(matmul(row, mp.dense.w), mp.dense.b);
    return reshape(softmax(logits), {cfg.num_classes});
}

Tensor block_forward(const ModelParams& mp, int b, const Tensor& in, bool training,
                     Rng* rng) {
    const ModelConfig& cfg = mp.config;
    Tensor t = maxpool(relu(aaconv(in, mp.blocks[static_cast<std::size_t>(b)], cfg)),
                       cfg.pool_size);
    if (training && cfg.dropout_rate > 0.0) {
        if (!rng) throw ContractError("model_forward: training dropout needs an rng");
        t = dropout(t, cfg.dropout_rate, true, *rng);
    }
    return t;
}

}  // namespace

Tensor model_forward(const ModelParams& mp, const Tensor& x, bool training, Rng* rng) {
    const ModelConfig& cfg = mp.config;
    if (x.shape != std::vector<int>{cfg.input_h, cfg.input_w, cfg.input_d}) {
        throw DimensionError("model_forward: input " + shape_str(x.shape) + ", expected " +
                             shape_str({cfg.input_h, cfg.input_w, cfg.input_d}));
    }
    Tensor t = x;
    for (int b = 0; b < cfg.blocks; ++b) t = block_forward(mp, b, t, training, rng);
    return head_forward(mp, reshape(t, {static_cast<int>(t.numel())}));
}

ForwardStages forward_stages(const ModelParams& mp, const Tensor& x) {
    ForwardStages fs;
    fs.stage_inputs.push_back(x);
    Tensor t = x;
    for (int b = 0; b < mp.config.blocks; ++b) {
        t = block_forward(mp, b, t, false, nullptr);
        fs.stage_inputs.push_back(t);
    }
    return fs;
}

Tensor forward_from_stage(const ModelParams& mp, const ForwardStages& cache, int first_block) {
    const ModelConfig& cfg = mp.config;
    Tensor t = cache.stage_inputs[static_cast<std::size_t>(first_block)];
    for (int b = first_block; b < cfg.blocks; ++b) t = block_forward(mp, b, t, false, nullptr);
    return head_forward(mp, reshape(t, {static_cast<int>(t.numel())}));
}

// ---------------------------------------------------------------------------
// Traced layers
// ---------------------------------------------------------------------------

TracedParams watch_params(Tape& tape, const ModelParams& mp) {
    TracedParams tp;
    auto track = [&](const Tensor& t) {
        Tape::Var v = tape.leaf_ref(t);
        tp.ordered.push_back(v);
        return v;
    };
    for (const BlockParams& bp : mp.blocks) {
        TracedParams::Block b;
        b.conv_kernel = track(bp.conv_kernel);
        b.conv_bias = track(bp.conv_bias);
        for (std::size_t h = 0; h < bp.attn.w_q.size(); ++h) {
            b.w_q.push_back(track(bp.attn.w_q[h]));
            b.w_k.push_back(track(bp.attn.w_k[h]));
            b.w_v.push_back(track(bp.attn.w_v[h]));
        }
        if (!bp.attn.w_q.empty()) b.w_mh = track(bp.attn.w_mh);
        tp.blocks.push_back(std::move(b));
    }
    if (mp.config.use_highway) {
        tp.hw_wt = track(mp.highway.w_transform);
        tp.hw_bt = track(mp.highway.b_transform);
        tp.hw_wg = track(mp.highway.w_gate);
        tp.hw_bg = track(mp.highway.b_gate);
    }
    tp.dense_w = track(mp.dense.w);
    tp.dense_b = track(mp.dense.b);
    return tp;
}

Tape::Var traced_attention_head(Tape& t, Tape::Var tokens, Tape::Var w_q, Tape::Var w_k,
                                Tape::Var w_v) {
    Tape::Var q = t.matmul(tokens, w_q);
    Tape::Var k = t.matmul(tokens, w_k);
    Tape::Var v = t.matmul(tokens, w_v);
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(t.value(w_k).shape[1]));
    Tape::Var scores = t.scale_shift(t.matmul(q, t.transpose(k)), inv_sqrt_dk, 0.0);
    return t.matmul(t.softmax(scores), v);
}

namespace {

Tape::Var traced_block(Tape& t, const TracedParams& tp, const ModelConfig& cfg, int b,
                       Tape::Var in, bool training, Rng* rng) {
    const TracedParams::Block& blk = tp.blocks[static_cast<std::size_t>(b)];
    Tape::Var out = t.conv2d(in, blk.conv_kernel, blk.conv_bias);
    if (cfg.attn_channels > 0) {
        const Tensor& xv = t.value(in);
        int h = xv.shape[0], w = xv.shape[1], d = xv.shape[2];
        Tape::Var tokens = t.reshape(in, {h * w, d});
        Tape::Var heads;
        for (int i = 0; i < cfg.num_heads; ++i) {
            Tape::Var ho = traced_attention_head(t, tokens, blk.w_q[static_cast<std::size_t>(i)],
                                                 blk.w_k[static_cast<std::size_t>(i)],
                                                 blk.w_v[static_cast<std::size_t>(i)]);
            heads = i == 0 ? ho : t.concat(heads, ho, 1);
        }
        Tape::Var attn = t.reshape(t.matmul(heads, blk.w_mh), {h, w, cfg.attn_channels});
        out = t.concat(out, attn, 2);
    }
    out = t.maxpool(t.relu(out), cfg.pool_size);
    if (training && cfg.dropout_rate > 0.0) {
        if (!rng) throw ContractError("traced_model_forward: training dropout needs an rng");
        out = t.dropout_mask(
            out, make_dropout_mask(t.value(out).data.size(), cfg.dropout_rate, *rng));
    }
    return out;
}

}  // namespace

Tape::Var traced_model_forward(Tape& t, const TracedParams& tp, const ModelConfig& cfg,
                               Tape::Var x, bool training, Rng* rng) {
    Tape::Var cur = x;
    for (int b = 0; b < cfg.blocks; ++b) {
        cur = traced_block(t, tp, cfg, b, cur, training, rng);
    }
    int f = static_cast<int>(t.value(cur).numel());
    Tape::Var flat = t.reshape(cur, {1, f});
    if (cfg.use_highway) {
        Tape::Var h = t.tanh_act(t.add_rowvec(t.matmul(flat, tp.hw_wt), tp.hw_bt));
        Tape::Var gate = t.sigmoid(t.add_rowvec(t.matmul(flat, tp.hw_wg), tp.hw_bg));
        Tape::Var carry = t.mul(t.scale_shift(gate, -1.0, 1.0), flat);
        flat = t.add(t.mul(gate, h), carry);
    }
    Tape::Var logits = t.add_rowvec(t.matmul(flat, tp.dense_w), tp.dense_b);
    return t.reshape(t.softmax(logits), {cfg.num_classes});
}

}  // namespace saconv
