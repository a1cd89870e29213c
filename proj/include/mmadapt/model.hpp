#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mmadapt/nn.hpp"

namespace mmadapt::model {

// Character-level vocabulary with fixed specials.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    explicit Vocab(std::string alphabet = "abcdefghijklmnopqrstuvwxyz ");

    int size() const { return 4 + int(alphabet_.size()); }
    int id(char c) const;
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;  // stops at eos, skips specials
    const std::string& alphabet() const { return alphabet_; }

private:
    std::string alphabet_;
    std::map<char, int> index_;
};

struct ModelConfig {
    int model_dim = 64;    // D1
    int adapter_dim = 16;  // D2
    int num_encoder_layers = 4;
    int num_decoder_layers = 4;
    int num_text_encoder_layers = 2;
    int num_heads = 4;
    int feature_dim = 16;  // speech frame width F
    int vocab_size = 31;
    std::vector<nn::MpsaGeometry> length_adapter = {{3, 2, 1}, {3, 2, 1}};
    int max_source_len = 2048;
    int max_target_len = 256;
    bool with_adapters = true;

    void validate() const;
};

inline const std::vector<std::string>& group_names() {
    static const std::vector<std::string> names = {
        "speech_encoder", "length_adapter", "text_encoder",    "text_decoder",
        "encoder_adapters", "decoder_adapters", "embeddings",  "output_head"};
    return names;
}

struct MultimodalModel {
    ModelConfig cfg;

    // Speech path.
    Tensor frontend_w, frontend_b;  // F -> D1
    std::vector<nn::ConformerLiteBlock> speech_blocks;
    std::vector<nn::MpsaLayer> length_adapter;
    nn::LayerNormParams enc_out_ln;

    // Text path; embedding table is shared by source, target, and the tied head.
    Tensor embedding;  // [V x D1]
    std::vector<nn::TransformerBlock> text_blocks;
    nn::LayerNormParams text_out_ln;

    // Shared decoder.
    std::vector<nn::DecoderBlock> decoder_blocks;
    nn::LayerNormParams dec_out_ln;
    Tensor out_bias;  // [V]

    std::set<std::string> trainable;

    // Every parameter, keyed by group; each tensor appears in exactly one group.
    std::map<std::string, nn::NamedTensors> parameter_groups() const;
    nn::NamedTensors all_parameters() const;
    void zero_grad() const;
};

MultimodalModel build_model(const ModelConfig& cfg, uint64_t seed);

// Adds identity-initialized adapters to a model built with with_adapters=false.
void insert_adapters(MultimodalModel& m, uint64_t seed);

// Marks exactly the named groups trainable (requires_grad on their tensors).
void set_trainable(MultimodalModel& m, const std::set<std::string>& groups);

std::map<std::string, int64_t> count_parameters(const MultimodalModel& m);

// Same counts computed arithmetically from the config, without allocating the
// model; usable at full-scale dimensions.
std::map<std::string, int64_t> predicted_parameter_counts(const ModelConfig& cfg);

// Sinusoidal position encoding, [len x dim], constant.
Tensor positional_encoding(int len, int dim);

Tensor encode_speech(const MultimodalModel& m, const Tensor& frames);
Tensor encode_text(const MultimodalModel& m, const std::vector<int>& tokens);
// Teacher-forced decoder logits over `decoder_input` given encoder memory.
Tensor decoder_logits(const MultimodalModel& m, const std::vector<int>& decoder_input,
                      const Tensor& memory);

Tensor asr_forward_loss(const MultimodalModel& m, const Tensor& frames,
                        const std::vector<int>& target_tokens);
Tensor mt_forward_loss(const MultimodalModel& m, const std::vector<int>& source_tokens,
                       const std::vector<int>& target_tokens);

}  // namespace mmadapt::model
