#include "mmadapt/synthlang.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "mmadapt/checkpoint.hpp"

namespace mmadapt::lang {

namespace {

constexpr int kMaxOrdering = 16;

void validate_lang_params(const LangParams& p) {
    if (p.num_phonemes < 2 || p.num_phonemes > 26)
        throw std::invalid_argument("num_phonemes must be in [2, 26] (one letter each)");
    if (p.lexicon_size < 1) throw std::invalid_argument("lexicon_size must be positive");
    if (p.feature_dim < 1) throw std::invalid_argument("feature_dim must be positive");
    if (p.dur_min < 1.0 || p.dur_max < p.dur_min)
        throw std::invalid_argument("duration range must satisfy 1 <= dur_min <= dur_max");
    if (p.jitter_min < 0.0 || p.jitter_max < p.jitter_min)
        throw std::invalid_argument("jitter range must satisfy 0 <= jitter_min <= jitter_max");
    if (p.word_len_min < 1 || p.word_len_max < p.word_len_min)
        throw std::invalid_argument("word length range must satisfy 1 <= min <= max");
}

std::vector<int> draw_word(int num_phonemes, int len_min, int len_max, Rng& rng) {
    int len = len_min + int(rng.below(uint64_t(len_max - len_min + 1)));
    std::vector<int> word(size_t(len), 0);
    for (auto& ph : word) ph = int(rng.below(uint64_t(num_phonemes)));
    return word;
}

std::vector<int> draw_unique_word(int num_phonemes, int len_min, int len_max, Rng& rng,
                                  const std::set<std::vector<int>>& taken,
                                  const std::vector<int>* avoid) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        auto w = draw_word(num_phonemes, len_min, len_max, rng);
        if (taken.count(w)) continue;
        if (avoid && w == *avoid) continue;
        return w;
    }
    throw std::runtime_error("lexicon too dense: cannot draw a fresh word");
}

Phoneme draw_phoneme(const LangParams& p, char letter, Rng& rng) {
    Phoneme ph;
    ph.letter = letter;
    ph.prototype.resize(size_t(p.feature_dim));
    for (auto& v : ph.prototype) v = rng.normal(0.0, 1.0);
    ph.mean_duration = rng.uniform(p.dur_min, p.dur_max);
    ph.duration_jitter = rng.uniform(p.jitter_min, p.jitter_max);
    return ph;
}

LangParams params_of(const LanguageSpec& spec) {
    // Ranges used when resampling during derivation; the structural fields
    // are taken from the base spec itself.
    LangParams p;
    p.num_phonemes = int(spec.phonemes.size());
    p.feature_dim = spec.feature_dim;
    int wmin = int(spec.lexicon.front().size()), wmax = wmin;
    for (auto& w : spec.lexicon) {
        wmin = std::min(wmin, int(w.size()));
        wmax = std::max(wmax, int(w.size()));
    }
    p.word_len_min = wmin;
    p.word_len_max = wmax;
    Real dmin = spec.phonemes.front().mean_duration, dmax = dmin;
    Real jmin = spec.phonemes.front().duration_jitter, jmax = jmin;
    for (auto& ph : spec.phonemes) {
        dmin = std::min(dmin, ph.mean_duration);
        dmax = std::max(dmax, ph.mean_duration);
        jmin = std::min(jmin, ph.duration_jitter);
        jmax = std::max(jmax, ph.duration_jitter);
    }
    p.dur_min = dmin;
    p.dur_max = dmax;
    p.jitter_min = jmin;
    p.jitter_max = jmax;
    return p;
}

void check_concepts(const LanguageSpec& spec, const std::vector<int>& concepts) {
    if (concepts.empty()) throw std::invalid_argument("empty concept sequence");
    for (int c : concepts)
        if (c < 0 || c >= int(spec.lexicon.size()))
            throw std::invalid_argument("concept id " + std::to_string(c) +
                                        " outside lexicon of size " +
                                        std::to_string(spec.lexicon.size()));
}

}  // namespace

std::string LanguageSpec::word_text(int concept_id) const {
    if (concept_id < 0 || concept_id >= int(lexicon.size()))
        throw std::invalid_argument("concept id out of range: " + std::to_string(concept_id));
    std::string out;
    for (int ph : lexicon[size_t(concept_id)]) out.push_back(phonemes[size_t(ph)].letter);
    return out;
}

LanguageSpec make_base_language(const LangParams& params, uint64_t seed) {
    validate_lang_params(params);
    Rng rng(seed);
    LanguageSpec spec;
    spec.language_id = "lang-" + std::to_string(seed);
    spec.feature_dim = params.feature_dim;
    for (int i = 0; i < params.num_phonemes; ++i)
        spec.phonemes.push_back(draw_phoneme(params, char('a' + i), rng));
    std::set<std::vector<int>> taken;
    for (int c = 0; c < params.lexicon_size; ++c) {
        auto w = draw_unique_word(params.num_phonemes, params.word_len_min, params.word_len_max,
                                  rng, taken, nullptr);
        taken.insert(w);
        spec.lexicon.push_back(std::move(w));
    }
    spec.ordering.resize(kMaxOrdering);
    std::iota(spec.ordering.begin(), spec.ordering.end(), 0);
    rng.shuffle(spec.ordering);
    return spec;
}

LanguageSpec derive_language(const LanguageSpec& base, Real r, uint64_t seed) {
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("relatedness must be in [0, 1]");
    const int L = int(base.lexicon.size());
    const int P = int(base.phonemes.size());
    const LangParams ranges = params_of(base);

    LanguageSpec spec;
    spec.language_id = base.language_id + "+r" + std::to_string(seed);
    spec.feature_dim = base.feature_dim;
    spec.ordering = base.ordering;

    Rng rng(seed);
    const int shared_lex = int(std::lround(r * L));
    const int shared_phon = int(std::lround(r * P));

    std::vector<int> ids(size_t(L), 0);
    std::iota(ids.begin(), ids.end(), 0);
    Rng lex_pick = rng.split(1);
    lex_pick.shuffle(ids);
    std::set<int> lex_shared(ids.begin(), ids.begin() + shared_lex);

    ids.resize(size_t(P));
    std::iota(ids.begin(), ids.end(), 0);
    Rng phon_pick = rng.split(2);
    phon_pick.shuffle(ids);
    std::set<int> phon_shared(ids.begin(), ids.begin() + shared_phon);

    Rng phon_rng = rng.split(3);
    for (int i = 0; i < P; ++i) {
        if (phon_shared.count(i)) {
            spec.phonemes.push_back(base.phonemes[size_t(i)]);
        } else {
            // Fresh sound, same letter: the orthographic slot is universal.
            spec.phonemes.push_back(draw_phoneme(ranges, base.phonemes[size_t(i)].letter, phon_rng));
        }
    }

    Rng word_rng = rng.split(4);
    std::set<std::vector<int>> taken;
    for (int c = 0; c < L; ++c)
        if (lex_shared.count(c)) taken.insert(base.lexicon[size_t(c)]);
    for (int c = 0; c < L; ++c) {
        if (lex_shared.count(c)) {
            spec.lexicon.push_back(base.lexicon[size_t(c)]);
        } else {
            auto w = draw_unique_word(P, ranges.word_len_min, ranges.word_len_max, word_rng, taken,
                                      &base.lexicon[size_t(c)]);
            taken.insert(w);
            spec.lexicon.push_back(std::move(w));
        }
    }
    return spec;
}

int shared_lexicon_count(const LanguageSpec& a, const LanguageSpec& b) {
    if (a.lexicon.size() != b.lexicon.size())
        throw std::invalid_argument("lexicon sizes differ");
    int n = 0;
    for (size_t c = 0; c < a.lexicon.size(); ++c)
        if (a.lexicon[c] == b.lexicon[c]) ++n;
    return n;
}

std::vector<int> apply_ordering(const LanguageSpec& spec, const std::vector<int>& concepts) {
    check_concepts(spec, concepts);
    std::vector<int> pos(concepts.size());
    std::iota(pos.begin(), pos.end(), 0);
    auto rank = [&](int p) { return p < int(spec.ordering.size()) ? spec.ordering[size_t(p)] : p; };
    std::stable_sort(pos.begin(), pos.end(), [&](int a, int b) { return rank(a) < rank(b); });
    std::vector<int> out;
    out.reserve(concepts.size());
    for (int p : pos) out.push_back(concepts[size_t(p)]);
    return out;
}

std::string render_text(const LanguageSpec& spec, const std::vector<int>& concepts) {
    std::string out;
    for (int c : apply_ordering(spec, concepts)) {
        if (!out.empty()) out.push_back(' ');
        out += spec.word_text(c);
    }
    return out;
}

int sample_duration(Real mean, Real jitter, Rng& rng) {
    return std::max(1, int(std::lround(rng.normal(mean, jitter))));
}

Rendered render_utterance(const LanguageSpec& spec, const std::vector<int>& concepts,
                          Real noise_sigma, uint64_t seed) {
    if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
    auto ordered = apply_ordering(spec, concepts);
    Rng rng(seed);
    const int F = spec.feature_dim;
    std::vector<Real> data;
    std::string transcript;
    for (size_t w = 0; w < ordered.size(); ++w) {
        if (w > 0) transcript.push_back(' ');
        for (int ph_id : spec.lexicon[size_t(ordered[w])]) {
            const Phoneme& ph = spec.phonemes[size_t(ph_id)];
            transcript.push_back(ph.letter);
            int d = sample_duration(ph.mean_duration, ph.duration_jitter, rng);
            for (int t = 0; t < d; ++t)
                for (int f = 0; f < F; ++f)
                    data.push_back(ph.prototype[size_t(f)] + rng.normal(0.0, noise_sigma));
        }
    }
    int rows = int(data.size()) / F;
    return {Tensor::from({rows, F}, std::move(data)), std::move(transcript)};
}

std::vector<std::string> Corpus::transcripts(const std::vector<Utterance>& split) const {
    std::vector<std::string> out;
    out.reserve(split.size());
    for (auto& u : split) out.push_back(u.transcript);
    return out;
}

Corpus generate_corpus(const LanguageSpec& target, const LanguageSpec& source,
                       const CorpusParams& params, uint64_t seed) {
    if (target.lexicon.size() != source.lexicon.size())
        throw std::invalid_argument("target and source must share a concept inventory");
    if (params.n_train < 0 || params.n_valid < 0 || params.n_test < 0)
        throw std::invalid_argument("split sizes must be non-negative");
    if (params.min_sentence_len < 1 || params.max_sentence_len < params.min_sentence_len)
        throw std::invalid_argument("sentence length range must satisfy 1 <= min <= max");
    if (params.oov_fraction < 0.0 || params.oov_fraction >= 1.0)
        throw std::invalid_argument("oov_fraction must be in [0, 1)");

    const int L = int(target.lexicon.size());
    Rng rng(seed);

    // Domain shift: a fraction of concepts never appears in training, so
    // held-out transcripts contain genuinely unseen words.
    std::vector<int> ids(size_t(L), 0);
    std::iota(ids.begin(), ids.end(), 0);
    Rng reserve_rng = rng.split(1);
    reserve_rng.shuffle(ids);
    const int n_reserved = int(std::lround(params.oov_fraction * L));
    std::vector<int> train_pool(ids.begin() + n_reserved, ids.end());
    std::sort(train_pool.begin(), train_pool.end());
    std::vector<int> full_pool(size_t(L), 0);
    std::iota(full_pool.begin(), full_pool.end(), 0);
    if (params.n_train > 0 && train_pool.empty())
        throw std::invalid_argument("oov_fraction leaves no training concepts");

    Rng sent_rng = rng.split(2);
    Rng render_seeds = rng.split(3);
    std::set<std::vector<int>> seen;
    uint64_t index = 0;

    auto draw_sentence = [&](const std::vector<int>& pool) {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            int len = params.min_sentence_len +
                      int(sent_rng.below(
                          uint64_t(params.max_sentence_len - params.min_sentence_len + 1)));
            std::vector<int> s(size_t(len), 0);
            for (auto& c : s) c = pool[sent_rng.below(pool.size())];
            if (seen.insert(s).second) return s;
        }
        throw std::runtime_error("cannot draw a fresh sentence; corpus too large for lexicon");
    };

    auto fill = [&](std::vector<Utterance>& split, int n, const std::vector<int>& pool) {
        for (int i = 0; i < n; ++i) {
            Utterance u;
            u.concepts = draw_sentence(pool);
            auto rendered = render_utterance(target, u.concepts, params.noise_sigma,
                                            render_seeds.split(index++).next_u64());
            u.frames = std::move(rendered.frames);
            u.transcript = std::move(rendered.transcript);
            u.source_text = render_text(source, u.concepts);
            split.push_back(std::move(u));
        }
    };

    Corpus corpus;
    corpus.language_id = target.language_id;
    corpus.seed = seed;
    corpus.params = params;
    fill(corpus.train, params.n_train, train_pool);
    fill(corpus.valid, params.n_valid, full_pool);
    fill(corpus.test, params.n_test, full_pool);
    return corpus;
}

namespace {

void save_split(const std::vector<Utterance>& split, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write corpus split: " + path);
    io::write_u32(os, uint32_t(split.size()));
    for (auto& u : split) {
        io::write_tensor_payload(os, u.frames);
        io::write_string(os, u.transcript);
        io::write_string(os, u.source_text);
        io::write_u32(os, uint32_t(u.concepts.size()));
        for (int c : u.concepts) io::write_u32(os, uint32_t(c));
    }
    if (!os) throw std::runtime_error("write failure: " + path);
}

std::vector<Utterance> load_split(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open corpus split: " + path);
    uint32_t n = io::read_u32(is);
    std::vector<Utterance> split;
    split.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        Utterance u;
        u.frames = io::read_tensor_payload(is);
        u.transcript = io::read_string(is);
        u.source_text = io::read_string(is);
        uint32_t nc = io::read_u32(is);
        for (uint32_t j = 0; j < nc; ++j) u.concepts.push_back(int(io::read_u32(is)));
        split.push_back(std::move(u));
    }
    return split;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest = {
        {"format_version", 1},
        {"language_id", corpus.language_id},
        {"seed", corpus.seed},
        {"params",
         {{"n_train", corpus.params.n_train},
          {"n_valid", corpus.params.n_valid},
          {"n_test", corpus.params.n_test},
          {"min_sentence_len", corpus.params.min_sentence_len},
          {"max_sentence_len", corpus.params.max_sentence_len},
          {"noise_sigma", corpus.params.noise_sigma},
          {"oov_fraction", corpus.params.oov_fraction}}},
    };
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("cannot write corpus manifest in " + dir);
    mf << manifest.dump(2) << "\n";
    save_split(corpus.train, (fs::path(dir) / "train.bin").string());
    save_split(corpus.valid, (fs::path(dir) / "valid.bin").string());
    save_split(corpus.test, (fs::path(dir) / "test.bin").string());
}

Corpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("cannot open corpus manifest in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt corpus manifest in " + dir + ": " + e.what());
    }
    if (manifest.value("format_version", -1) != 1)
        throw std::runtime_error("unsupported corpus format in " + dir);
    Corpus corpus;
    corpus.language_id = manifest.at("language_id").get<std::string>();
    corpus.seed = manifest.at("seed").get<uint64_t>();
    const auto& p = manifest.at("params");
    corpus.params.n_train = p.at("n_train").get<int>();
    corpus.params.n_valid = p.at("n_valid").get<int>();
    corpus.params.n_test = p.at("n_test").get<int>();
    corpus.params.min_sentence_len = p.at("min_sentence_len").get<int>();
    corpus.params.max_sentence_len = p.at("max_sentence_len").get<int>();
    corpus.params.noise_sigma = p.at("noise_sigma").get<Real>();
    corpus.params.oov_fraction = p.at("oov_fraction").get<Real>();
    corpus.train = load_split((fs::path(dir) / "train.bin").string());
    corpus.valid = load_split((fs::path(dir) / "valid.bin").string());
    corpus.test = load_split((fs::path(dir) / "test.bin").string());
    if (int(corpus.train.size()) != corpus.params.n_train)
        throw std::runtime_error("corpus train split size disagrees with manifest");
    return corpus;
}

}  // namespace mmadapt::lang
