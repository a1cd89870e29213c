#include "mmadapt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mmadapt::eval {

namespace {

// DP with backtrace; op codes: 0 = match/substitution, 1 = insertion, 2 = deletion.
template <typename T>
EditDistanceResult lev_core(const std::vector<T>& ref, const std::vector<T>& hyp) {
    const size_t m = ref.size(), n = hyp.size();
    std::vector<int> cost((m + 1) * (n + 1), 0);
    std::vector<uint8_t> op((m + 1) * (n + 1), 0);
    auto idx = [n](size_t i, size_t j) { return i * (n + 1) + j; };
    for (size_t i = 1; i <= m; ++i) {
        cost[idx(i, 0)] = int(i);
        op[idx(i, 0)] = 2;
    }
    for (size_t j = 1; j <= n; ++j) {
        cost[idx(0, j)] = int(j);
        op[idx(0, j)] = 1;
    }
    for (size_t i = 1; i <= m; ++i)
        for (size_t j = 1; j <= n; ++j) {
            int sub = cost[idx(i - 1, j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            int ins = cost[idx(i, j - 1)] + 1;
            int del = cost[idx(i - 1, j)] + 1;
            int best = std::min({sub, ins, del});
            cost[idx(i, j)] = best;
            op[idx(i, j)] = best == sub ? 0 : (best == ins ? 1 : 2);
        }
    EditDistanceResult r;
    r.reference_length = int(m);
    size_t i = m, j = n;
    while (i > 0 || j > 0) {
        switch (op[idx(i, j)]) {
            case 0:
                if (ref[i - 1] != hyp[j - 1]) ++r.substitutions;
                --i;
                --j;
                break;
            case 1:
                ++r.insertions;
                --j;
                break;
            default:
                ++r.deletions;
                --i;
                break;
        }
    }
    return r;
}

// Tie-breaking alone is not symmetric under argument exchange; aligning in a
// canonical orientation and swapping I/D back makes distance(a,b) and
// distance(b,a) exact mirrors while staying deterministic.
template <typename T>
EditDistanceResult lev_impl(const std::vector<T>& ref, const std::vector<T>& hyp) {
    if (ref.empty()) throw std::invalid_argument("levenshtein: empty reference");
    const bool swapped = hyp < ref;
    EditDistanceResult r = swapped ? lev_core(hyp, ref) : lev_core(ref, hyp);
    if (swapped) std::swap(r.insertions, r.deletions);
    r.reference_length = int(ref.size());
    return r;
}

Real pooled_rate(const std::vector<std::vector<std::string>>& refs,
                 const std::vector<std::vector<std::string>>& hyps) {
    int64_t edits = 0, ref_len = 0;
    for (size_t i = 0; i < refs.size(); ++i) {
        auto r = lev_impl(refs[i], hyps[i]);
        edits += r.total();
        ref_len += r.reference_length;
    }
    return 100.0 * Real(edits) / Real(ref_len);
}

std::vector<std::string> to_chars(const std::string& s) {
    std::vector<std::string> out;
    out.reserve(s.size());
    for (char c : s) out.emplace_back(1, c);
    return out;
}

// Log-softmax of the last logits row.
std::vector<Real> last_row_logprobs(const Tensor& logits) {
    const int V = logits.cols();
    const int r = logits.rows() - 1;
    Real mx = logits.at(r, 0);
    for (int v = 1; v < V; ++v) mx = std::max(mx, logits.at(r, v));
    Real lse = 0.0;
    for (int v = 0; v < V; ++v) lse += std::exp(logits.at(r, v) - mx);
    lse = mx + std::log(lse);
    std::vector<Real> lp(size_t(V), 0.0);
    for (int v = 0; v < V; ++v) lp[size_t(v)] = logits.at(r, v) - lse;
    return lp;
}

}  // namespace

EditDistanceResult levenshtein(const std::vector<std::string>& ref,
                               const std::vector<std::string>& hyp) {
    return lev_impl(ref, hyp);
}

EditDistanceResult levenshtein_chars(const std::string& ref, const std::string& hyp) {
    return lev_impl(to_chars(ref), to_chars(hyp));
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream iss(text);
    std::vector<std::string> words;
    std::string w;
    while (iss >> w) words.push_back(w);
    return words;
}

Real wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
    if (refs.size() != hyps.size())
        throw std::invalid_argument("wer: " + std::to_string(refs.size()) + " references vs " +
                                    std::to_string(hyps.size()) + " hypotheses");
    std::vector<std::vector<std::string>> r, h;
    for (auto& s : refs) r.push_back(split_words(s));
    for (auto& s : hyps) h.push_back(split_words(s));
    return pooled_rate(r, h);
}

Real cer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
    if (refs.size() != hyps.size())
        throw std::invalid_argument("cer: reference/hypothesis count mismatch");
    std::vector<std::vector<std::string>> r, h;
    for (auto& s : refs) r.push_back(to_chars(s));
    for (auto& s : hyps) h.push_back(to_chars(s));
    return pooled_rate(r, h);
}

Real oov_rate(const std::vector<std::string>& train_transcripts,
              const std::vector<std::string>& test_transcripts, OovMode mode) {
    std::set<std::string> seen;
    for (auto& t : train_transcripts)
        for (auto& w : split_words(t)) seen.insert(w);
    int64_t total = 0, unseen = 0;
    if (mode == OovMode::token) {
        for (auto& t : test_transcripts)
            for (auto& w : split_words(t)) {
                ++total;
                if (!seen.count(w)) ++unseen;
            }
    } else {
        std::set<std::string> types;
        for (auto& t : test_transcripts)
            for (auto& w : split_words(t)) types.insert(w);
        total = int64_t(types.size());
        for (auto& w : types)
            if (!seen.count(w)) ++unseen;
    }
    if (total == 0) throw std::invalid_argument("oov_rate: empty test transcripts");
    return 100.0 * Real(unseen) / Real(total);
}

Real relative_wer_reduction(Real wer_base, Real wer_sys) {
    if (wer_base <= 0.0) throw std::invalid_argument("relative_wer_reduction: baseline must be > 0");
    return 100.0 * (wer_base - wer_sys) / wer_base;
}

DecodeResult greedy_decode(const model::MultimodalModel& m, const Tensor& frames, int max_len) {
    if (max_len < 0) throw std::invalid_argument("greedy_decode: max_len must be >= 0");
    NoGradGuard ng;
    DecodeResult out;
    if (max_len == 0) return out;
    Tensor memory = model::encode_speech(m, frames);
    std::vector<int> prefix = {model::Vocab::kBos};
    Real logp = 0.0;
    int steps = 0;
    while (steps < max_len) {
        auto lp = last_row_logprobs(model::decoder_logits(m, prefix, memory));
        int best = int(std::max_element(lp.begin(), lp.end()) - lp.begin());
        logp += lp[size_t(best)];
        ++steps;
        if (best == model::Vocab::kEos) break;
        out.tokens.push_back(best);
        prefix.push_back(best);
    }
    out.score = logp / Real(steps);
    return out;
}

DecodeResult beam_decode(const model::MultimodalModel& m, const Tensor& frames, int beam,
                         int max_len) {
    if (beam < 1) throw std::invalid_argument("beam_decode: beam must be >= 1");
    if (max_len < 0) throw std::invalid_argument("beam_decode: max_len must be >= 0");
    NoGradGuard ng;
    if (max_len == 0) return {};
    Tensor memory = model::encode_speech(m, frames);

    struct Hyp {
        std::vector<int> prefix;  // includes bos; includes eos once finished
        Real logp = 0.0;
        bool finished = false;
        int steps = 0;

        Real norm() const { return steps == 0 ? 0.0 : logp / Real(steps); }
    };
    std::vector<Hyp> beams = {Hyp{{model::Vocab::kBos}, 0.0, false, 0}};
    for (int step = 0; step < max_len; ++step) {
        bool any_open = false;
        std::vector<Hyp> candidates;
        for (auto& h : beams) {
            if (h.finished) {
                candidates.push_back(h);
                continue;
            }
            any_open = true;
            auto lp = last_row_logprobs(model::decoder_logits(m, h.prefix, memory));
            for (int v = 0; v < int(lp.size()); ++v) {
                Hyp next = h;
                next.prefix.push_back(v);
                next.logp += lp[size_t(v)];
                ++next.steps;
                next.finished = (v == model::Vocab::kEos);
                candidates.push_back(std::move(next));
            }
        }
        if (!any_open) break;
        // Stable selection: ties keep the lower-token-id expansion.
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Hyp& a, const Hyp& b) { return a.norm() > b.norm(); });
        if (int(candidates.size()) > beam) candidates.resize(size_t(beam));
        beams = std::move(candidates);
    }
    const Hyp* best = &beams.front();
    for (auto& h : beams)
        if (h.norm() > best->norm()) best = &h;
    DecodeResult out;
    out.score = best->norm();
    for (size_t i = 1; i < best->prefix.size(); ++i) {
        if (best->prefix[i] == model::Vocab::kEos) break;
        out.tokens.push_back(best->prefix[i]);
    }
    return out;
}

MetricsReport evaluate_asr(const model::MultimodalModel& m,
                           const std::vector<lang::Utterance>& split,
                           const std::vector<std::string>& train_transcripts, int beam,
                           int max_len) {
    if (split.empty()) throw std::invalid_argument("evaluate_asr: empty split");
    model::Vocab vocab;
    std::vector<std::string> refs, hyps;
    for (auto& u : split) {
        refs.push_back(u.transcript);
        DecodeResult d = beam == 1 ? greedy_decode(m, u.frames, max_len)
                                   : beam_decode(m, u.frames, beam, max_len);
        hyps.push_back(vocab.decode(d.tokens));
    }
    MetricsReport r;
    r.n_utterances = int(split.size());
    r.wer = wer(refs, hyps);
    r.cer = cer(refs, hyps);
    r.oov = oov_rate(train_transcripts, refs);
    return r;
}

}  // namespace mmadapt::eval
