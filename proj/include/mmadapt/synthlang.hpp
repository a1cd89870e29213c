#pragma once

#include <string>
#include <vector>

#include "mmadapt/tensor.hpp"

namespace mmadapt::lang {

struct Phoneme {
    std::vector<Real> prototype;  // R^F emission center
    Real mean_duration = 5.0;     // frames
    Real duration_jitter = 0.7;
    char letter = '?';  // orthographic symbol, tied to the universal slot
};

struct LangParams {
    int num_phonemes = 24;
    int lexicon_size = 120;
    int feature_dim = 16;
    Real dur_min = 3.0;
    Real dur_max = 9.0;
    Real jitter_min = 0.3;
    Real jitter_max = 1.0;
    int word_len_min = 2;
    int word_len_max = 5;
};

struct LanguageSpec {
    std::string language_id;
    int feature_dim = 16;
    std::vector<Phoneme> phonemes;
    std::vector<std::vector<int>> lexicon;  // concept id -> phoneme indices
    std::vector<int> ordering;              // rank per sentence position (simple grammar)

    std::string word_text(int concept_id) const;
};

LanguageSpec make_base_language(const LangParams& params, uint64_t seed);

// Shares exactly round(r * |lexicon|) lexicon entries and round(r * P)
// phoneme parameter sets with `base`; the rest is resampled from `seed`.
LanguageSpec derive_language(const LanguageSpec& base, Real r, uint64_t seed);

// Number of identical concept -> word entries; round(r*|lexicon|) by construction.
int shared_lexicon_count(const LanguageSpec& a, const LanguageSpec& b);

// Genetic-distance analog of a relatedness score.
inline Real genetic_distance(Real r) { return 1.0 - r; }

// Word order after the language's ordering permutation.
std::vector<int> apply_ordering(const LanguageSpec& spec, const std::vector<int>& concepts);

std::string render_text(const LanguageSpec& spec, const std::vector<int>& concepts);

// Duration draw: max(1, round(Normal(mean, jitter))).
int sample_duration(Real mean, Real jitter, Rng& rng);

struct Rendered {
    Tensor frames;  // [L x F]
    std::string transcript;
};

Rendered render_utterance(const LanguageSpec& spec, const std::vector<int>& concepts,
                          Real noise_sigma, uint64_t seed);

struct Utterance {
    Tensor frames;
    std::string transcript;
    std::string source_text;  // paired language-0 text
    std::vector<int> concepts;
};

struct CorpusParams {
    int n_train = 200;
    int n_valid = 20;
    int n_test = 50;
    int min_sentence_len = 3;
    int max_sentence_len = 10;
    Real noise_sigma = 0.1;
    // Fraction of concepts reserved for valid/test, modelling test-train
    // domain mismatch; drives the corpus OOV rate.
    Real oov_fraction = 0.4;
};

struct Corpus {
    std::string language_id;
    uint64_t seed = 0;
    CorpusParams params;
    std::vector<Utterance> train, valid, test;

    std::vector<std::string> transcripts(const std::vector<Utterance>& split) const;
};

Corpus generate_corpus(const LanguageSpec& target, const LanguageSpec& source,
                       const CorpusParams& params, uint64_t seed);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace mmadapt::lang
