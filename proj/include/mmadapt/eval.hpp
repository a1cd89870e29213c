#pragma once

#include <string>
#include <vector>

#include "mmadapt/model.hpp"
#include "mmadapt/synthlang.hpp"

namespace mmadapt::eval {

struct EditDistanceResult {
    int substitutions = 0;
    int insertions = 0;
    int deletions = 0;
    int reference_length = 0;

    int total() const { return substitutions + insertions + deletions; }
    Real rate() const { return Real(total()) / Real(reference_length); }
};

// Minimal unit-cost alignment; ties broken substitution > insertion > deletion.
EditDistanceResult levenshtein(const std::vector<std::string>& ref,
                               const std::vector<std::string>& hyp);
EditDistanceResult levenshtein_chars(const std::string& ref, const std::string& hyp);

std::vector<std::string> split_words(const std::string& text);

// Corpus-level rates: pooled edits over pooled reference length, x100.
Real wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps);
Real cer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps);

enum class OovMode { token, type };

Real oov_rate(const std::vector<std::string>& train_transcripts,
              const std::vector<std::string>& test_transcripts, OovMode mode = OovMode::token);

// (base - sys) / base, x100. Negative when the system is worse.
Real relative_wer_reduction(Real wer_base, Real wer_sys);

struct DecodeResult {
    std::vector<int> tokens;  // emitted tokens, bos/eos stripped
    Real score = 0.0;         // length-normalized log-probability
};

DecodeResult greedy_decode(const model::MultimodalModel& m, const Tensor& frames, int max_len);
DecodeResult beam_decode(const model::MultimodalModel& m, const Tensor& frames, int beam,
                         int max_len);

struct MetricsReport {
    Real wer = 0.0;
    Real cer = 0.0;
    Real oov = 0.0;
    int n_utterances = 0;
    Real relative_wer_reduction = 0.0;
    std::string baseline_name;
};

// Decodes every utterance in the split and scores it against the transcripts.
MetricsReport evaluate_asr(const model::MultimodalModel& m,
                           const std::vector<lang::Utterance>& split,
                           const std::vector<std::string>& train_transcripts, int beam = 1,
                           int max_len = 64);

}  // namespace mmadapt::eval
