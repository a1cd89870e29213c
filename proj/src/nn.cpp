#include "mmadapt/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mmadapt::nn {

AttentionParams AttentionParams::init(int dim, int num_heads, Rng& rng) {
    if (num_heads < 1 || dim % num_heads != 0)
        throw std::invalid_argument("attention: dim " + std::to_string(dim) +
                                    " not divisible by heads " + std::to_string(num_heads));
    AttentionParams p;
    p.wq = Tensor::xavier(dim, dim, rng);
    p.wk = Tensor::xavier(dim, dim, rng);
    p.wv = Tensor::xavier(dim, dim, rng);
    p.wo = Tensor::xavier(dim, dim, rng);
    p.num_heads = num_heads;
    return p;
}

void AttentionParams::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".wo", wo);
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& params, const AttnMask* mask) {
    const int dim = params.wq.rows();
    if (q_in.rank() != 2 || k_in.rank() != 2 || v_in.rank() != 2 || q_in.cols() != dim ||
        k_in.cols() != dim || v_in.cols() != dim || k_in.rows() != v_in.rows())
        throw std::invalid_argument("multi_head_attention: inputs " + shape_str(q_in.shape()) + ", " +
                                    shape_str(k_in.shape()) + ", " + shape_str(v_in.shape()) +
                                    " incompatible with dim " + std::to_string(dim));
    if (mask && (mask->rows != q_in.rows() || mask->cols != k_in.rows()))
        throw std::invalid_argument("multi_head_attention: mask must be Lq x Lk");

    Tensor q = matmul(q_in, params.wq);
    Tensor k = matmul(k_in, params.wk);
    Tensor v = matmul(v_in, params.wv);
    const int h = params.num_heads;
    const int dh = dim / h;
    const Real scaling = 1.0 / std::sqrt(Real(dh));
    std::vector<Tensor> heads;
    heads.reserve(size_t(h));
    for (int i = 0; i < h; ++i) {
        Tensor qh = col_slice(q, i * dh, dh);
        Tensor kh = col_slice(k, i * dh, dh);
        Tensor vh = col_slice(v, i * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), scaling);
        Tensor weights = softmax_rows(scores, mask);
        heads.push_back(matmul(weights, vh));
    }
    return matmul(concat_cols(heads), params.wo);
}

LayerNormParams LayerNormParams::init(int dim) {
    return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

void LayerNormParams::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

FeedForward FeedForward::init(int dim, int hidden, Rng& rng) {
    FeedForward f;
    f.w1 = Tensor::xavier(dim, hidden, rng);
    f.b1 = Tensor::zeros({hidden}, true);
    f.w2 = Tensor::xavier(hidden, dim, rng);
    f.b2 = Tensor::zeros({dim}, true);
    return f;
}

Tensor FeedForward::operator()(const Tensor& x) const {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, w1), b1)), w2), b2);
}

void FeedForward::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w2", w2);
    out.emplace_back(prefix + ".b2", b2);
}

int64_t adapter_param_count(int64_t d1, int64_t d2) { return 2 * d1 * d2 + d1 + d2; }

BottleneckAdapter BottleneckAdapter::init(int d1, int d2, Rng& rng) {
    if (d1 < 1 || d2 < 1) throw std::invalid_argument("adapter: dims must be positive");
    BottleneckAdapter a;
    a.w_down = Tensor::xavier(d1, d2, rng);
    a.b_down = Tensor::zeros({d2}, true);
    a.w_up = Tensor::zeros({d2, d1}, true);  // identity at init
    a.b_up = Tensor::zeros({d1}, true);
    return a;
}

int64_t BottleneckAdapter::param_count() const {
    return w_down.size() + b_down.size() + w_up.size() + b_up.size();
}

void BottleneckAdapter::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w_down", w_down);
    out.emplace_back(prefix + ".b_down", b_down);
    out.emplace_back(prefix + ".w_up", w_up);
    out.emplace_back(prefix + ".b_up", b_up);
}

Tensor apply_adapter(const Tensor& x, const BottleneckAdapter& a) {
    if (x.rank() != 2 || x.cols() != a.w_down.rows())
        throw std::invalid_argument("apply_adapter: input " + shape_str(x.shape()) +
                                    " does not match adapter dim " + std::to_string(a.w_down.rows()));
    Tensor mid = gelu(add_rowvec(matmul(x, a.w_down), a.b_down));
    return add(x, add_rowvec(matmul(mid, a.w_up), a.b_up));
}

int mpsa_out_len(int in_len, const MpsaGeometry& geom) {
    return conv1d_out_len(in_len, geom.kernel, geom.stride, geom.padding);
}

MpsaLayer MpsaLayer::init(int dim, int num_heads, MpsaGeometry geom, Rng& rng) {
    if (geom.kernel < 1 || geom.stride < 1 || geom.padding < 0)
        throw std::invalid_argument("mpsa: invalid geometry");
    MpsaLayer l;
    l.geom = geom;
    // Average-pool start; identity for kernel 1.
    l.pool_w = Tensor::full({geom.kernel, dim}, 1.0 / geom.kernel, true);
    l.ln_attn = LayerNormParams::init(dim);
    l.ln_ffn = LayerNormParams::init(dim);
    l.attn = AttentionParams::init(dim, num_heads, rng);
    l.ffn = FeedForward::init(dim, 4 * dim, rng);
    return l;
}

void MpsaLayer::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".pool_w", pool_w);
    ln_attn.collect(out, prefix + ".ln_attn");
    ln_ffn.collect(out, prefix + ".ln_ffn");
    attn.collect(out, prefix + ".attn");
    ffn.collect(out, prefix + ".ffn");
}

Tensor mpsa_layer_forward(const Tensor& x, const MpsaLayer& layer) {
    // Shared pooling: one conv per input, reused for Q/K/V and the residual.
    Tensor pooled = conv1d(x, layer.pool_w, layer.geom.stride, layer.geom.padding);
    ++layer.pool_invocations;
    Tensor normed = layer.ln_attn(pooled);
    Tensor attended = add(pooled, multi_head_attention(normed, normed, normed, layer.attn));
    return add(attended, layer.ffn(layer.ln_ffn(attended)));
}

ConformerLiteBlock ConformerLiteBlock::init(int dim, int num_heads, Rng& rng) {
    ConformerLiteBlock b;
    b.ln_attn = LayerNormParams::init(dim);
    b.ln_conv = LayerNormParams::init(dim);
    b.ln_ffn = LayerNormParams::init(dim);
    b.attn = AttentionParams::init(dim, num_heads, rng);
    b.conv_w = Tensor::xavier(3, dim, rng);
    b.ffn = FeedForward::init(dim, 4 * dim, rng);
    return b;
}

void ConformerLiteBlock::collect(NamedTensors& out, const std::string& prefix) const {
    ln_attn.collect(out, prefix + ".ln_attn");
    ln_conv.collect(out, prefix + ".ln_conv");
    ln_ffn.collect(out, prefix + ".ln_ffn");
    attn.collect(out, prefix + ".attn");
    out.emplace_back(prefix + ".conv_w", conv_w);
    ffn.collect(out, prefix + ".ffn");
}

void ConformerLiteBlock::collect_adapter(NamedTensors& out, const std::string& prefix) const {
    if (adapter) adapter->collect(out, prefix + ".adapter");
}

Tensor encoder_block_forward(const Tensor& h_prev, const ConformerLiteBlock& block) {
    Tensor n1 = block.ln_attn(h_prev);
    Tensor h = add(h_prev, multi_head_attention(n1, n1, n1, block.attn));
    h = add(h, conv1d(block.ln_conv(h), block.conv_w, 1, 1));
    h = add(h, block.ffn(block.ln_ffn(h)));
    if (block.adapter) h = apply_adapter(h, *block.adapter);
    return h;
}

TransformerBlock TransformerBlock::init(int dim, int num_heads, Rng& rng) {
    TransformerBlock b;
    b.ln_attn = LayerNormParams::init(dim);
    b.ln_ffn = LayerNormParams::init(dim);
    b.attn = AttentionParams::init(dim, num_heads, rng);
    b.ffn = FeedForward::init(dim, 4 * dim, rng);
    return b;
}

Tensor TransformerBlock::operator()(const Tensor& x) const {
    Tensor n1 = ln_attn(x);
    Tensor h = add(x, multi_head_attention(n1, n1, n1, attn));
    return add(h, ffn(ln_ffn(h)));
}

void TransformerBlock::collect(NamedTensors& out, const std::string& prefix) const {
    ln_attn.collect(out, prefix + ".ln_attn");
    ln_ffn.collect(out, prefix + ".ln_ffn");
    attn.collect(out, prefix + ".attn");
    ffn.collect(out, prefix + ".ffn");
}

DecoderBlock DecoderBlock::init(int dim, int num_heads, Rng& rng) {
    DecoderBlock b;
    b.ln_self = LayerNormParams::init(dim);
    b.ln_cross = LayerNormParams::init(dim);
    b.ln_ffn = LayerNormParams::init(dim);
    b.self_attn = AttentionParams::init(dim, num_heads, rng);
    b.cross_attn = AttentionParams::init(dim, num_heads, rng);
    b.ffn = FeedForward::init(dim, 4 * dim, rng);
    return b;
}

void DecoderBlock::collect(NamedTensors& out, const std::string& prefix) const {
    ln_self.collect(out, prefix + ".ln_self");
    ln_cross.collect(out, prefix + ".ln_cross");
    ln_ffn.collect(out, prefix + ".ln_ffn");
    self_attn.collect(out, prefix + ".self_attn");
    cross_attn.collect(out, prefix + ".cross_attn");
    ffn.collect(out, prefix + ".ffn");
}

void DecoderBlock::collect_adapter(NamedTensors& out, const std::string& prefix) const {
    if (adapter) adapter->collect(out, prefix + ".adapter");
}

Tensor decoder_block_forward(const Tensor& d_prev, const Tensor& enc_out, const DecoderBlock& block) {
    Tensor d = d_prev;
    if (block.causal) {
        AttnMask mask = AttnMask::causal(d.rows());
        Tensor n1 = block.ln_self(d);
        d = add(d, multi_head_attention(n1, n1, n1, block.self_attn, &mask));
    } else {
        Tensor n1 = block.ln_self(d);
        d = add(d, multi_head_attention(n1, n1, n1, block.self_attn));
    }
    d = add(d, multi_head_attention(block.ln_cross(d), enc_out, enc_out, block.cross_attn));
    d = add(d, block.ffn(block.ln_ffn(d)));
    if (block.adapter) d = apply_adapter(d, *block.adapter);
    return d;
}

}  // namespace mmadapt::nn
