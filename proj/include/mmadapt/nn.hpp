#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmadapt/tensor.hpp"

namespace mmadapt::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct AttentionParams {
    Tensor wq, wk, wv, wo;  // [D x D]
    int num_heads = 1;

    static AttentionParams init(int dim, int num_heads, Rng& rng);
    void collect(NamedTensors& out, const std::string& prefix) const;
};

// Scaled dot-product attention per head, heads concatenated, output projected.
// mask, when present, is [Lq x Lk]; masked positions get zero weight.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& params, const AttnMask* mask = nullptr);

struct LayerNormParams {
    Tensor gain, bias;

    static LayerNormParams init(int dim);
    Tensor operator()(const Tensor& x) const { return layernorm(x, gain, bias); }
    void collect(NamedTensors& out, const std::string& prefix) const;
};

struct FeedForward {
    Tensor w1, b1, w2, b2;

    static FeedForward init(int dim, int hidden, Rng& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

// Residual bottleneck adapter. Up-projection starts at zero, so a freshly
// initialized adapter is an exact identity.
struct BottleneckAdapter {
    Tensor w_down, b_down;  // [D1 x D2], [D2]
    Tensor w_up, b_up;      // [D2 x D1], [D1]

    static BottleneckAdapter init(int d1, int d2, Rng& rng);
    int64_t param_count() const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

// 2*D1*D2 + D1 + D2, without building the adapter.
int64_t adapter_param_count(int64_t d1, int64_t d2);

Tensor apply_adapter(const Tensor& x, const BottleneckAdapter& a);

struct MpsaGeometry {
    int kernel = 1;
    int stride = 1;
    int padding = 0;
};

// One layer of the length adapter. The pooling conv is shared: it runs once
// per input and its output feeds Q, K, V and the residual path.
struct MpsaLayer {
    MpsaGeometry geom;
    Tensor pool_w;  // depthwise [k x D]
    LayerNormParams ln_attn, ln_ffn;
    AttentionParams attn;
    FeedForward ffn;
    mutable int64_t pool_invocations = 0;  // test instrumentation

    static MpsaLayer init(int dim, int num_heads, MpsaGeometry geom, Rng& rng);
    void collect(NamedTensors& out, const std::string& prefix) const;
};

Tensor mpsa_layer_forward(const Tensor& x, const MpsaLayer& layer);
int mpsa_out_len(int in_len, const MpsaGeometry& geom);

struct ConformerLiteBlock {
    LayerNormParams ln_attn, ln_conv, ln_ffn;
    AttentionParams attn;
    Tensor conv_w;  // depthwise [3 x D], stride 1, padding 1
    FeedForward ffn;
    std::optional<BottleneckAdapter> adapter;

    static ConformerLiteBlock init(int dim, int num_heads, Rng& rng);
    void collect(NamedTensors& out, const std::string& prefix) const;
    void collect_adapter(NamedTensors& out, const std::string& prefix) const;
};

Tensor encoder_block_forward(const Tensor& h_prev, const ConformerLiteBlock& block);

// Plain pre-norm transformer block (text encoder; no adapter slot).
struct TransformerBlock {
    LayerNormParams ln_attn, ln_ffn;
    AttentionParams attn;
    FeedForward ffn;

    static TransformerBlock init(int dim, int num_heads, Rng& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

struct DecoderBlock {
    LayerNormParams ln_self, ln_cross, ln_ffn;
    AttentionParams self_attn, cross_attn;
    FeedForward ffn;
    std::optional<BottleneckAdapter> adapter;
    bool causal = true;

    static DecoderBlock init(int dim, int num_heads, Rng& rng);
    void collect(NamedTensors& out, const std::string& prefix) const;
    void collect_adapter(NamedTensors& out, const std::string& prefix) const;
};

Tensor decoder_block_forward(const Tensor& d_prev, const Tensor& enc_out, const DecoderBlock& block);

}  // namespace mmadapt::nn
