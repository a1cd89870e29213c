#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mmadapt/eval.hpp"
#include "mmadapt/model.hpp"
#include "mmadapt/synthlang.hpp"

namespace mmadapt::train {

struct AdamConfig {
    Real lr = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
};

// Moments are allocated lazily and only for parameters that require grad.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    // Updates trainable parameters from their accumulated grads, then clears
    // all grads. No-op when nothing is trainable; throws if trainable
    // parameters exist but no backward pass populated any gradient.
    void step(const nn::NamedTensors& params);

    int64_t steps() const { return t_; }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, std::pair<std::vector<Real>, std::vector<Real>>> moments_;
};

enum class Objective { asr, mt, joint };

std::string objective_name(Objective o);

// Scales trainable gradients so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
Real clip_grad_norm(const nn::NamedTensors& params, Real max_norm);

struct Phase {
    Objective objective = Objective::asr;
    std::string corpus;  // key into the corpora map given to run_recipe
    std::set<std::string> trainable;
    int epochs = 1;
    Real lr = 1e-3;
    int batch_size = 16;
    // Global gradient-norm ceiling per optimizer step; 0 disables clipping.
    // The ceiling is a spike guard, not a tuning knob: typical step norms
    // stay well below it.
    Real clip_norm = 5.0;
    // When > 0 and the corpus has a valid split, WER is measured every
    // eval_every epochs and the best trainable weights win at phase end.
    int eval_every = 0;
};

struct Recipe {
    std::string name;
    std::vector<Phase> phases;
};

struct RecipeOptions {
    int text_epochs = 200;
    int asr_epochs = 40;
    // Pivot-speech transfer phases overfit far sooner than direct target
    // fine-tuning, so their budget is a separate knob; <= 0 means asr_epochs.
    int pivot_epochs = 0;
    Real adapt_lr = 3e-4;
    // Learning rate for the text (MT) phases; <= 0 means adapt_lr.
    Real text_lr = 0.0;
    int batch_size = 16;
};

// The named adaptation regimes: none, system_a, text_only, system_ta,
// cross_lingual, cross_lingual_ta, full_finetune. Corpus keys used:
// target_speech, target_text, pivot_speech.
Recipe standard_recipe(const std::string& name, const RecipeOptions& opts = {});

std::vector<std::string> recipe_names();

struct PhaseLog {
    std::string objective;
    std::string corpus;
    std::set<std::string> trainable;
    int64_t trainable_params = 0;
    std::vector<Real> epoch_loss;
};

// Trains one phase on corpus.train; frozen tensors are hash-verified
// unchanged at phase end (std::logic_error on mutation).
PhaseLog run_phase(model::MultimodalModel& m, const Phase& phase, const lang::Corpus& corpus,
                   uint64_t seed);

struct EvalSpec {
    const std::vector<lang::Utterance>* split = nullptr;
    std::vector<std::string> train_transcripts;
    int beam = 1;
    int max_len = 64;
};

struct Report {
    std::string recipe;
    std::vector<PhaseLog> phases;
    eval::MetricsReport before, after;
    bool has_metrics = false;
    std::map<std::string, int64_t> param_counts;
    int64_t trained_params = 0;  // union of groups trained across phases
};

Report run_recipe(model::MultimodalModel& m, const Recipe& recipe,
                  const std::map<std::string, const lang::Corpus*>& corpora,
                  const EvalSpec& eval_spec, uint64_t seed);

uint64_t hash_tensor(const Tensor& t);

}  // namespace mmadapt::train
