#include "mmadapt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace mmadapt::train {

void Adam::step(const nn::NamedTensors& params) {
    std::vector<const std::pair<std::string, Tensor>*> active;
    for (auto& p : params)
        if (p.second.requires_grad()) active.push_back(&p);
    if (active.empty()) return;
    bool any_grad = false;
    for (auto* p : active)
        if (!p->second.grad().empty()) {
            any_grad = true;
            break;
        }
    if (!any_grad)
        throw std::invalid_argument("optimizer step without gradients: run backward first");

    ++t_;
    const Real bc1 = 1.0 - std::pow(cfg_.beta1, Real(t_));
    const Real bc2 = 1.0 - std::pow(cfg_.beta2, Real(t_));
    for (auto* p : active) {
        const auto& [name, tensor] = *p;
        auto& [m, v] = moments_[name];
        const size_t n = tensor.value().size();
        if (m.size() != n) m.assign(n, 0.0);
        if (v.size() != n) v.assign(n, 0.0);
        const auto& g = tensor.grad();
        auto& w = const_cast<Tensor&>(tensor).value();
        for (size_t i = 0; i < n; ++i) {
            Real gi = g.empty() ? 0.0 : g[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            Real mhat = m[i] / bc1;
            Real vhat = v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
    for (auto& p : params) const_cast<Tensor&>(p.second).zero_grad();
}

Real clip_grad_norm(const nn::NamedTensors& params, Real max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
    Real sq = 0.0;
    for (auto& [name, t] : params)
        if (t.requires_grad())
            for (Real g : t.grad()) sq += g * g;
    Real norm = std::sqrt(sq);
    if (norm > max_norm) {
        const Real s = max_norm / norm;
        for (auto& [name, t] : params)
            if (t.requires_grad())
                for (Real& g : const_cast<Tensor&>(t).grad()) g *= s;
    }
    return norm;
}

std::string objective_name(Objective o) {
    switch (o) {
        case Objective::asr:
            return "asr";
        case Objective::mt:
            return "mt";
        default:
            return "joint";
    }
}

std::vector<std::string> recipe_names() {
    return {"none",          "system_a",         "text_only",    "system_ta",
            "cross_lingual", "cross_lingual_ta", "full_finetune"};
}

Recipe standard_recipe(const std::string& name, const RecipeOptions& opts) {
    const int pivot_epochs = opts.pivot_epochs > 0 ? opts.pivot_epochs : opts.asr_epochs;
    auto phase = [&](Objective obj, std::string corpus, std::set<std::string> groups, int epochs) {
        Phase p;
        p.objective = obj;
        p.corpus = std::move(corpus);
        p.trainable = std::move(groups);
        p.epochs = epochs;
        p.lr = obj == Objective::mt && opts.text_lr > 0.0 ? opts.text_lr : opts.adapt_lr;
        p.batch_size = opts.batch_size;
        return p;
    };
    Recipe r;
    r.name = name;
    if (name == "none") {
        return r;
    } else if (name == "system_a") {
        r.phases = {phase(Objective::asr, "target_speech", {"encoder_adapters"}, opts.asr_epochs)};
    } else if (name == "text_only") {
        r.phases = {phase(Objective::mt, "target_text", {"decoder_adapters"}, opts.text_epochs)};
    } else if (name == "system_ta") {
        r.phases = {phase(Objective::mt, "target_text", {"decoder_adapters"}, opts.text_epochs),
                    phase(Objective::asr, "target_speech", {"encoder_adapters"}, opts.asr_epochs)};
    } else if (name == "cross_lingual") {
        r.phases = {phase(Objective::asr, "pivot_speech", {"length_adapter"}, pivot_epochs)};
    } else if (name == "cross_lingual_ta") {
        r.phases = {phase(Objective::mt, "target_text", {"decoder_adapters"}, opts.text_epochs),
                    phase(Objective::asr, "pivot_speech", {"length_adapter"}, pivot_epochs)};
    } else if (name == "full_finetune") {
        std::set<std::string> all(model::group_names().begin(), model::group_names().end());
        r.phases = {phase(Objective::asr, "target_speech", std::move(all), opts.asr_epochs)};
    } else {
        throw std::invalid_argument("unknown recipe: " + name);
    }
    return r;
}

uint64_t hash_tensor(const Tensor& t) {
    uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a over the raw value bytes
    for (Real x : t.value()) {
        uint64_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xFF;
            h *= 0x100000001B3ull;
        }
    }
    return h;
}

namespace {

Tensor utterance_loss(const model::MultimodalModel& m, const lang::Utterance& u,
                      Objective objective, const model::Vocab& vocab) {
    switch (objective) {
        case Objective::asr:
            return model::asr_forward_loss(m, u.frames, vocab.encode(u.transcript));
        case Objective::mt:
            return model::mt_forward_loss(m, vocab.encode(u.source_text),
                                          vocab.encode(u.transcript));
        default: {
            Tensor a = model::asr_forward_loss(m, u.frames, vocab.encode(u.transcript));
            Tensor b = model::mt_forward_loss(m, vocab.encode(u.source_text),
                                              vocab.encode(u.transcript));
            return scale(add(a, b), 0.5);
        }
    }
}

struct Snapshot {
    std::vector<std::vector<Real>> values;

    static Snapshot take(const nn::NamedTensors& params) {
        Snapshot s;
        for (auto& [name, t] : params) s.values.push_back(t.value());
        return s;
    }

    void restore(const nn::NamedTensors& params) const {
        for (size_t i = 0; i < params.size(); ++i)
            const_cast<Tensor&>(params[i].second).value() = values[i];
    }
};

}  // namespace

PhaseLog run_phase(model::MultimodalModel& m, const Phase& phase, const lang::Corpus& corpus,
                   uint64_t seed) {
    if (phase.epochs < 0 || phase.batch_size < 1)
        throw std::invalid_argument("phase needs epochs >= 0 and batch_size >= 1");
    model::set_trainable(m, phase.trainable);
    auto counts = model::count_parameters(m);

    PhaseLog log;
    log.objective = objective_name(phase.objective);
    log.corpus = phase.corpus;
    log.trainable = phase.trainable;
    for (auto& g : phase.trainable) log.trainable_params += counts.at(g);
    if (phase.epochs == 0) return log;
    if (corpus.train.empty())
        throw std::invalid_argument("phase on corpus with empty train split");

    nn::NamedTensors frozen, trainable;
    for (auto& p : m.all_parameters())
        (p.second.requires_grad() ? trainable : frozen).push_back(p);
    std::vector<uint64_t> frozen_hashes;
    for (auto& [name, t] : frozen) frozen_hashes.push_back(hash_tensor(t));

    model::Vocab vocab;
    Adam opt(AdamConfig{phase.lr, 0.9, 0.999, 1e-8});
    Rng rng(seed);
    auto params = m.all_parameters();

    const int n = int(corpus.train.size());
    std::vector<int> order(size_t(n), 0);
    std::iota(order.begin(), order.end(), 0);

    Real best_wer = -1.0;
    Snapshot best;
    for (int epoch = 0; epoch < phase.epochs; ++epoch) {
        rng.shuffle(order);
        Real loss_sum = 0.0;
        for (int start = 0; start < n; start += phase.batch_size) {
            int bs = std::min(phase.batch_size, n - start);
            for (int k = 0; k < bs; ++k) {
                const auto& u = corpus.train[size_t(order[size_t(start + k)])];
                Tape::current().clear();
                Tensor loss = utterance_loss(m, u, phase.objective, vocab);
                loss_sum += loss.item();
                backward(scale(loss, 1.0 / Real(bs)));
                Tape::current().clear();
            }
            if (phase.clip_norm > 0.0) clip_grad_norm(params, phase.clip_norm);
            opt.step(params);
        }
        log.epoch_loss.push_back(loss_sum / Real(n));
        if (phase.eval_every > 0 && !corpus.valid.empty() &&
            (epoch + 1) % phase.eval_every == 0) {
            auto metrics = eval::evaluate_asr(m, corpus.valid, corpus.transcripts(corpus.train));
            if (best_wer < 0.0 || metrics.wer < best_wer) {
                best_wer = metrics.wer;
                best = Snapshot::take(trainable);
            }
        }
    }
    if (best_wer >= 0.0) {
        auto final_metrics = eval::evaluate_asr(m, corpus.valid, corpus.transcripts(corpus.train));
        if (best_wer < final_metrics.wer) best.restore(trainable);
    }

    for (size_t i = 0; i < frozen.size(); ++i)
        if (hash_tensor(frozen[i].second) != frozen_hashes[i])
            throw std::logic_error("frozen tensor mutated during phase: " + frozen[i].first);
    return log;
}

Report run_recipe(model::MultimodalModel& m, const Recipe& recipe,
                  const std::map<std::string, const lang::Corpus*>& corpora,
                  const EvalSpec& eval_spec, uint64_t seed) {
    for (auto& phase : recipe.phases)
        if (!corpora.count(phase.corpus) || corpora.at(phase.corpus) == nullptr)
            throw std::invalid_argument("recipe " + recipe.name + " references missing corpus: " +
                                        phase.corpus);
    Report report;
    report.recipe = recipe.name;
    if (eval_spec.split) {
        report.before = eval::evaluate_asr(m, *eval_spec.split, eval_spec.train_transcripts,
                                           eval_spec.beam, eval_spec.max_len);
        report.has_metrics = true;
    }
    Rng rng(seed);
    std::set<std::string> trained_groups;
    for (size_t i = 0; i < recipe.phases.size(); ++i) {
        const Phase& phase = recipe.phases[i];
        report.phases.push_back(
            run_phase(m, phase, *corpora.at(phase.corpus), rng.split(i).next_u64()));
        trained_groups.insert(phase.trainable.begin(), phase.trainable.end());
    }
    report.param_counts = model::count_parameters(m);
    for (auto& g : trained_groups) report.trained_params += report.param_counts.at(g);
    if (eval_spec.split) {
        report.after = eval::evaluate_asr(m, *eval_spec.split, eval_spec.train_transcripts,
                                          eval_spec.beam, eval_spec.max_len);
        report.after.baseline_name = recipe.name == "none" ? "" : "base";
        if (report.before.wer > 0.0)
            report.after.relative_wer_reduction =
                eval::relative_wer_reduction(report.before.wer, report.after.wer);
    }
    return report;
}

}  // namespace mmadapt::train
