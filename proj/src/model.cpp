#include "mmadapt/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mmadapt::model {

Vocab::Vocab(std::string alphabet) : alphabet_(std::move(alphabet)) {
    for (size_t i = 0; i < alphabet_.size(); ++i) index_[alphabet_[i]] = 4 + int(i);
}

int Vocab::id(char c) const {
    auto it = index_.find(c);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(id(c));
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int t : ids) {
        if (t == kEos) break;
        if (t >= 4 && t < size()) out.push_back(alphabet_[size_t(t - 4)]);
    }
    return out;
}

void ModelConfig::validate() const {
    if (model_dim < 1 || num_heads < 1 || model_dim % num_heads != 0)
        throw std::invalid_argument("model_dim " + std::to_string(model_dim) +
                                    " must be a positive multiple of num_heads " +
                                    std::to_string(num_heads));
    if (adapter_dim < 1) throw std::invalid_argument("adapter_dim must be >= 1");
    if (vocab_size < 4) throw std::invalid_argument("vocab_size must be >= 4 (specials)");
    if (feature_dim < 1 || num_encoder_layers < 1 || num_decoder_layers < 1 ||
        num_text_encoder_layers < 1)
        throw std::invalid_argument("layer counts and feature_dim must be positive");
    for (auto& g : length_adapter)
        if (g.kernel < 1 || g.stride < 1 || g.padding < 0)
            throw std::invalid_argument("invalid length-adapter geometry");
}

MultimodalModel build_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    MultimodalModel m;
    m.cfg = cfg;
    const int D = cfg.model_dim;

    m.frontend_w = Tensor::xavier(cfg.feature_dim, D, rng);
    m.frontend_b = Tensor::zeros({D}, true);
    for (int i = 0; i < cfg.num_encoder_layers; ++i)
        m.speech_blocks.push_back(nn::ConformerLiteBlock::init(D, cfg.num_heads, rng));
    for (auto& g : cfg.length_adapter)
        m.length_adapter.push_back(nn::MpsaLayer::init(D, cfg.num_heads, g, rng));
    m.enc_out_ln = nn::LayerNormParams::init(D);

    // Small-scale init keeps the tied head near-uniform at start.
    m.embedding = Tensor::zeros({cfg.vocab_size, D}, true);
    for (auto& v : m.embedding.value()) v = rng.normal(0.0, 0.02);
    for (int i = 0; i < cfg.num_text_encoder_layers; ++i)
        m.text_blocks.push_back(nn::TransformerBlock::init(D, cfg.num_heads, rng));
    m.text_out_ln = nn::LayerNormParams::init(D);

    for (int i = 0; i < cfg.num_decoder_layers; ++i)
        m.decoder_blocks.push_back(nn::DecoderBlock::init(D, cfg.num_heads, rng));
    m.dec_out_ln = nn::LayerNormParams::init(D);
    m.out_bias = Tensor::zeros({cfg.vocab_size}, true);

    if (cfg.with_adapters) insert_adapters(m, seed ^ 0xADA77E5ull);

    for (auto& name : group_names()) m.trainable.insert(name);
    return m;
}

void insert_adapters(MultimodalModel& m, uint64_t seed) {
    Rng rng(seed);
    for (auto& b : m.speech_blocks)
        b.adapter = nn::BottleneckAdapter::init(m.cfg.model_dim, m.cfg.adapter_dim, rng);
    for (auto& b : m.decoder_blocks)
        b.adapter = nn::BottleneckAdapter::init(m.cfg.model_dim, m.cfg.adapter_dim, rng);
    m.cfg.with_adapters = true;
}

std::map<std::string, nn::NamedTensors> MultimodalModel::parameter_groups() const {
    std::map<std::string, nn::NamedTensors> g;
    auto& se = g["speech_encoder"];
    se.emplace_back("frontend.w", frontend_w);
    se.emplace_back("frontend.b", frontend_b);
    for (size_t i = 0; i < speech_blocks.size(); ++i)
        speech_blocks[i].collect(se, "speech." + std::to_string(i));

    auto& la = g["length_adapter"];
    for (size_t i = 0; i < length_adapter.size(); ++i)
        length_adapter[i].collect(la, "mpsa." + std::to_string(i));
    enc_out_ln.collect(la, "enc_out_ln");

    auto& te = g["text_encoder"];
    for (size_t i = 0; i < text_blocks.size(); ++i)
        text_blocks[i].collect(te, "text." + std::to_string(i));
    text_out_ln.collect(te, "text_out_ln");

    auto& td = g["text_decoder"];
    for (size_t i = 0; i < decoder_blocks.size(); ++i)
        decoder_blocks[i].collect(td, "decoder." + std::to_string(i));
    dec_out_ln.collect(td, "dec_out_ln");

    auto& ea = g["encoder_adapters"];
    for (size_t i = 0; i < speech_blocks.size(); ++i)
        speech_blocks[i].collect_adapter(ea, "speech." + std::to_string(i));

    auto& da = g["decoder_adapters"];
    for (size_t i = 0; i < decoder_blocks.size(); ++i)
        decoder_blocks[i].collect_adapter(da, "decoder." + std::to_string(i));

    g["embeddings"].emplace_back("embedding", embedding);
    g["output_head"].emplace_back("out_bias", out_bias);
    return g;
}

nn::NamedTensors MultimodalModel::all_parameters() const {
    nn::NamedTensors out;
    for (auto& [group, tensors] : parameter_groups())
        for (auto& [name, t] : tensors) out.emplace_back(group + "/" + name, t);
    return out;
}

void MultimodalModel::zero_grad() const {
    for (auto& [name, t] : all_parameters()) t.zero_grad();
}

void set_trainable(MultimodalModel& m, const std::set<std::string>& groups) {
    const auto& valid = group_names();
    for (auto& name : groups)
        if (std::find(valid.begin(), valid.end(), name) == valid.end())
            throw std::invalid_argument("unknown parameter group: " + name);
    m.trainable = groups;
    for (auto& [group, tensors] : m.parameter_groups()) {
        bool on = groups.count(group) > 0;
        for (auto& [name, t] : tensors) const_cast<Tensor&>(t).set_requires_grad(on);
    }
}

std::map<std::string, int64_t> count_parameters(const MultimodalModel& m) {
    std::map<std::string, int64_t> counts;
    for (auto& [group, tensors] : m.parameter_groups()) {
        int64_t n = 0;
        for (auto& [name, t] : tensors) n += t.size();
        counts[group] = n;
    }
    return counts;
}

std::map<std::string, int64_t> predicted_parameter_counts(const ModelConfig& cfg) {
    const int64_t D = cfg.model_dim, V = cfg.vocab_size, F = cfg.feature_dim;
    const int64_t ln = 2 * D;
    const int64_t attn = 4 * D * D;
    const int64_t ffn = D * 4 * D + 4 * D + 4 * D * D + D;
    std::map<std::string, int64_t> c;
    c["speech_encoder"] = F * D + D + cfg.num_encoder_layers * (3 * ln + attn + 3 * D + ffn);
    int64_t la = ln;  // output norm
    for (auto& g : cfg.length_adapter) la += int64_t(g.kernel) * D + 2 * ln + attn + ffn;
    c["length_adapter"] = la;
    c["text_encoder"] = cfg.num_text_encoder_layers * (2 * ln + attn + ffn) + ln;
    c["text_decoder"] = cfg.num_decoder_layers * (3 * ln + 2 * attn + ffn) + ln;
    int64_t per_adapter = cfg.with_adapters ? nn::adapter_param_count(D, cfg.adapter_dim) : 0;
    c["encoder_adapters"] = cfg.num_encoder_layers * per_adapter;
    c["decoder_adapters"] = cfg.num_decoder_layers * per_adapter;
    c["embeddings"] = V * D;
    c["output_head"] = V;
    return c;
}

Tensor positional_encoding(int len, int dim) {
    Tensor pe = Tensor::zeros({len, dim});
    for (int pos = 0; pos < len; ++pos)
        for (int i = 0; i < dim; i += 2) {
            Real angle = pos / std::pow(10000.0, Real(i) / dim);
            pe.at(pos, i) = std::sin(angle);
            if (i + 1 < dim) pe.at(pos, i + 1) = std::cos(angle);
        }
    return pe;
}

Tensor encode_speech(const MultimodalModel& m, const Tensor& frames) {
    if (frames.rank() != 2 || frames.cols() != m.cfg.feature_dim)
        throw std::invalid_argument("encode_speech: frames " + shape_str(frames.shape()) +
                                    " need feature dim " + std::to_string(m.cfg.feature_dim));
    if (frames.rows() > m.cfg.max_source_len)
        throw std::invalid_argument("encode_speech: input longer than max_source_len");
    Tensor h = add_rowvec(matmul(frames, m.frontend_w), m.frontend_b);
    h = add(h, positional_encoding(h.rows(), m.cfg.model_dim));
    for (auto& b : m.speech_blocks) h = nn::encoder_block_forward(h, b);
    for (auto& l : m.length_adapter) h = nn::mpsa_layer_forward(h, l);
    return m.enc_out_ln(h);
}

Tensor encode_text(const MultimodalModel& m, const std::vector<int>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("encode_text: empty input");
    if (int(tokens.size()) > m.cfg.max_source_len)
        throw std::invalid_argument("encode_text: input longer than max_source_len");
    Tensor h = gather_rows(m.embedding, tokens);
    h = add(h, positional_encoding(h.rows(), m.cfg.model_dim));
    for (auto& b : m.text_blocks) h = b(h);
    return m.text_out_ln(h);
}

Tensor decoder_logits(const MultimodalModel& m, const std::vector<int>& decoder_input,
                      const Tensor& memory) {
    if (decoder_input.empty()) throw std::invalid_argument("decoder_logits: empty input");
    if (int(decoder_input.size()) > m.cfg.max_target_len)
        throw std::invalid_argument("decoder_logits: target longer than max_target_len");
    Tensor h = gather_rows(m.embedding, decoder_input);
    h = add(h, positional_encoding(h.rows(), m.cfg.model_dim));
    for (auto& b : m.decoder_blocks) h = nn::decoder_block_forward(h, memory, b);
    h = m.dec_out_ln(h);
    // Tied head: logits against the embedding table.
    return add_rowvec(matmul(h, transpose(m.embedding)), m.out_bias);
}

namespace {

Tensor teacher_forced_loss(const MultimodalModel& m, const Tensor& memory,
                           const std::vector<int>& target_tokens) {
    if (target_tokens.empty()) throw std::invalid_argument("loss: empty target");
    std::vector<int> dec_in;
    dec_in.reserve(target_tokens.size() + 1);
    dec_in.push_back(Vocab::kBos);
    dec_in.insert(dec_in.end(), target_tokens.begin(), target_tokens.end());
    std::vector<int> labels(target_tokens.begin(), target_tokens.end());
    labels.push_back(Vocab::kEos);
    Tensor logits = decoder_logits(m, dec_in, memory);
    return cross_entropy_rows(logits, labels, Vocab::kPad);
}

}  // namespace

Tensor asr_forward_loss(const MultimodalModel& m, const Tensor& frames,
                        const std::vector<int>& target_tokens) {
    if (frames.rows() == 0) throw std::invalid_argument("asr_forward_loss: empty frames");
    return teacher_forced_loss(m, encode_speech(m, frames), target_tokens);
}

Tensor mt_forward_loss(const MultimodalModel& m, const std::vector<int>& source_tokens,
                       const std::vector<int>& target_tokens) {
    return teacher_forced_loss(m, encode_text(m, source_tokens), target_tokens);
}

}  // namespace mmadapt::model
