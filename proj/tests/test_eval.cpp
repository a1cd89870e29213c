#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmadapt/eval.hpp"

using namespace mmadapt;
using namespace mmadapt::eval;

namespace {

// Independent quadratic-space cost-only DP.
int lev_cost_oracle(const std::string& a, const std::string& b) {
    const size_t m = a.size(), n = b.size();
    std::vector<std::vector<int>> d(m + 1, std::vector<int>(n + 1, 0));
    for (size_t i = 0; i <= m; ++i) d[i][0] = int(i);
    for (size_t j = 0; j <= n; ++j) d[0][j] = int(j);
    for (size_t i = 1; i <= m; ++i)
        for (size_t j = 1; j <= n; ++j)
            d[i][j] = std::min({d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1),
                                d[i][j - 1] + 1, d[i - 1][j] + 1});
    return d[m][n];
}

// Exhaustive minimum over all edit scripts, for short strings.
int lev_exhaustive(const std::string& a, const std::string& b) {
    if (a.empty()) return int(b.size());
    if (b.empty()) return int(a.size());
    int sub = lev_exhaustive(a.substr(1), b.substr(1)) + (a[0] == b[0] ? 0 : 1);
    int ins = lev_exhaustive(a, b.substr(1)) + 1;
    int del = lev_exhaustive(a.substr(1), b) + 1;
    return std::min({sub, ins, del});
}

std::string random_string(Rng& rng, int max_len, int alphabet) {
    int len = int(rng.below(uint64_t(max_len + 1)));
    std::string s;
    for (int i = 0; i < len; ++i) s.push_back(char('a' + int(rng.below(uint64_t(alphabet)))));
    return s;
}

model::ModelConfig decode_config(int vocab_size = 31) {
    model::ModelConfig cfg;
    cfg.model_dim = 16;
    cfg.adapter_dim = 4;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.num_text_encoder_layers = 1;
    cfg.num_heads = 2;
    cfg.feature_dim = 4;
    cfg.vocab_size = vocab_size;
    cfg.length_adapter = {{3, 2, 1}};
    return cfg;
}

Tensor random_frames(int len, int dim, Rng& rng) {
    Tensor t = Tensor::zeros({len, dim});
    for (auto& v : t.value()) v = rng.normal(0.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("levenshtein spec cases") {
    auto eq = levenshtein({"a", "b"}, {"a", "b"});
    CHECK(eq.total() == 0);

    auto r = levenshtein(split_words("a b c d"), split_words("a x c"));
    CHECK(r.substitutions == 1);
    CHECK(r.deletions == 1);
    CHECK(r.insertions == 0);
    CHECK(r.reference_length == 4);
    CHECK(100.0 * r.rate() == doctest::Approx(50.0));

    auto k = levenshtein_chars("kitten", "sitting");
    CHECK(k.total() == 3);
    CHECK(k.total() == lev_exhaustive("kitten", "sitting"));
    CHECK(100.0 * k.rate() == doctest::Approx(50.0));

    CHECK_THROWS_AS(levenshtein({}, {"a"}), std::invalid_argument);
    auto all_del = levenshtein_chars("abc", "");
    CHECK(all_del.deletions == 3);
}

TEST_CASE("levenshtein matches oracles on random pairs") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        std::string a = random_string(rng, 12, 4);
        std::string b = random_string(rng, 12, 4);
        if (a.empty()) a = "x";
        if (b.empty()) b = "y";
        auto r = levenshtein_chars(a, b);
        CHECK(r.total() == lev_cost_oracle(a, b));
        // Symmetry: total cost equal, insertions and deletions swap.
        auto rev = levenshtein_chars(b, a);
        CHECK(rev.total() == r.total());
        CHECK(rev.insertions == r.deletions);
        CHECK(rev.deletions == r.insertions);
    }
}

TEST_CASE("levenshtein triangle inequality on random triples") {
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        std::string a = random_string(rng, 8, 3), b = random_string(rng, 8, 3),
                    c = random_string(rng, 8, 3);
        if (a.empty()) a = "q";
        if (b.empty()) b = "q";
        if (c.empty()) c = "q";
        int ab = levenshtein_chars(a, b).total();
        int bc = levenshtein_chars(b, c).total();
        int ac = levenshtein_chars(a, c).total();
        CHECK(ac <= ab + bc);
    }
}

TEST_CASE("corpus wer/cer aggregation is pooled, not mean of rates") {
    CHECK(wer({"a b", "c"}, {"a b", "c"}) == 0.0);
    CHECK(wer({"a b c d"}, {"a x c"}) == doctest::Approx(50.0));

    // Refs of lengths 1 and 9 with 1 and 0 errors: pooled 10%, mean-of-rates 50%.
    std::vector<std::string> refs = {"a", "b b b b b b b b b"};
    std::vector<std::string> hyps = {"x", "b b b b b b b b b"};
    CHECK(wer(refs, hyps) == doctest::Approx(10.0));
    CHECK(cer(refs, hyps) == doctest::Approx(100.0 * 1.0 / 18.0));

    CHECK_THROWS_AS(wer({"a"}, {}), std::invalid_argument);
    CHECK_THROWS_AS(cer({"a"}, {}), std::invalid_argument);
}

TEST_CASE("oov rate arithmetic") {
    CHECK(oov_rate({"a b c"}, {"a b", "c a"}) == 0.0);
    CHECK(oov_rate({}, {"a b"}) == 100.0);
    CHECK(oov_rate({"a b"}, {"a c c"}) == doctest::Approx(100.0 * 2.0 / 3.0));
    // Same case type-level: {a, c} with c unseen -> 50%.
    CHECK(oov_rate({"a b"}, {"a c c"}, OovMode::type) == doctest::Approx(50.0));
    CHECK_THROWS_AS(oov_rate({"a"}, {}), std::invalid_argument);
}

TEST_CASE("relative wer reduction") {
    CHECK(relative_wer_reduction(80.0, 80.0) == 0.0);
    CHECK(relative_wer_reduction(80.0, 66.4) == doctest::Approx(17.0));
    // Scale invariance.
    CHECK(relative_wer_reduction(8.0, 6.64) == doctest::Approx(17.0));
    CHECK(relative_wer_reduction(50.0, 60.0) < 0.0);
    CHECK_THROWS_AS(relative_wer_reduction(0.0, 10.0), std::invalid_argument);
}

TEST_CASE("greedy decode basics") {
    model::MultimodalModel m = model::build_model(decode_config(), 8);
    Rng rng(9);
    Tensor frames = random_frames(12, 4, rng);
    CHECK(greedy_decode(m, frames, 0).tokens.empty());
    auto a = greedy_decode(m, frames, 10);
    auto b = greedy_decode(m, frames, 10);
    CHECK(a.tokens == b.tokens);
    CHECK(a.score == b.score);
    CHECK(int(a.tokens.size()) <= 10);
    CHECK_THROWS_AS(greedy_decode(m, frames, -1), std::invalid_argument);
}

TEST_CASE("beam=1 equals greedy on 50 random inputs") {
    model::MultimodalModel m = model::build_model(decode_config(), 10);
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        Tensor frames = random_frames(6 + int(rng.below(12)), 4, rng);
        auto g = greedy_decode(m, frames, 8);
        auto b = beam_decode(m, frames, 1, 8);
        CHECK(g.tokens == b.tokens);
        CHECK(g.score == doctest::Approx(b.score).epsilon(1e-12));
    }
    CHECK_THROWS_AS(beam_decode(m, random_frames(6, 4, rng), 0, 8), std::invalid_argument);
}

TEST_CASE("beam=4 never scores below greedy") {
    model::MultimodalModel m = model::build_model(decode_config(), 12);
    Rng rng(13);
    for (int i = 0; i < 10; ++i) {
        Tensor frames = random_frames(10, 4, rng);
        auto g = greedy_decode(m, frames, 6);
        auto b = beam_decode(m, frames, 4, 6);
        CHECK(b.score >= g.score - 1e-12);
    }
}

TEST_CASE("exhaustive beam matches brute-force enumeration on a tiny vocab") {
    const int V = 6, max_len = 3;
    model::MultimodalModel m = model::build_model(decode_config(V), 14);
    Rng rng(15);
    Tensor frames = random_frames(8, 4, rng);
    NoGradGuard ng;
    Tensor memory = model::encode_speech(m, frames);

    auto logprobs = [&](const std::vector<int>& prefix) {
        Tensor logits = model::decoder_logits(m, prefix, memory);
        const int r = logits.rows() - 1;
        Real mx = logits.at(r, 0);
        for (int v = 1; v < V; ++v) mx = std::max(mx, logits.at(r, v));
        Real lse = 0.0;
        for (int v = 0; v < V; ++v) lse += std::exp(logits.at(r, v) - mx);
        lse = mx + std::log(lse);
        std::vector<Real> lp(V);
        for (int v = 0; v < V; ++v) lp[size_t(v)] = logits.at(r, v) - lse;
        return lp;
    };

    // Enumerate every complete hypothesis: stops at eos or at max_len.
    Real best_score = -1e300;
    std::vector<int> best_tokens;
    auto recurse = [&](auto&& self, std::vector<int>& prefix, Real logp, int steps) -> void {
        if (steps == max_len) {
            Real norm = logp / Real(steps);
            if (norm > best_score) {
                best_score = norm;
                best_tokens.assign(prefix.begin() + 1, prefix.end());
            }
            return;
        }
        auto lp = logprobs(prefix);
        for (int v = 0; v < V; ++v) {
            if (v == model::Vocab::kEos) {
                Real norm = (logp + lp[size_t(v)]) / Real(steps + 1);
                if (norm > best_score) {
                    best_score = norm;
                    best_tokens.assign(prefix.begin() + 1, prefix.end());
                }
                continue;
            }
            prefix.push_back(v);
            self(self, prefix, logp + lp[size_t(v)], steps + 1);
            prefix.pop_back();
        }
    };
    std::vector<int> prefix = {model::Vocab::kBos};
    recurse(recurse, prefix, 0.0, 0);

    int beam = 1;
    for (int i = 0; i < max_len; ++i) beam *= V;  // V^max_len: nothing pruned
    auto b = beam_decode(m, frames, beam, max_len);
    CHECK(b.tokens == best_tokens);
    CHECK(b.score == doctest::Approx(best_score).epsilon(1e-12));
}
