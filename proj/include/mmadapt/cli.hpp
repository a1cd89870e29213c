#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mmadapt/model.hpp"
#include "mmadapt/synthlang.hpp"

namespace mmadapt::cli {

struct LanguageBudget {
    std::string name;
    std::string parent;  // derive from this scenario language; empty = base inventory
    Real relatedness = 0.0;
    int n_train = 200;
    int n_valid = 20;
    int n_test = 50;
    int n_text = 0;  // size of an extra text-only adaptation corpus
    // Per-language train/test domain shift; negative = scenario default.
    Real oov_fraction = -1.0;
};

struct ExperimentConfig {
    model::ModelConfig model;
    uint64_t base_seed = 1;
    uint64_t source_seed = 2;
    uint64_t seed = 0;
    std::vector<LanguageBudget> languages;
    lang::CorpusParams corpus;  // shared sentence/noise/oov settings

    std::vector<std::string> pretrain_languages;
    int pretrain_epochs = 30;
    Real pretrain_lr = 1e-3;
    int batch_size = 16;

    std::string recipe = "none";
    std::string target;
    std::string pivot;
    int text_epochs = 200;
    int asr_epochs = 40;
    int pivot_epochs = 0;   // epochs for pivot-speech phases; 0 = asr_epochs
    Real adapt_lr = 3e-4;
    Real text_lr = 0.0;     // lr for text (MT) phases; 0 = adapt_lr
    int eval_beam = 1;
    int max_decode_len = 64;
    int eval_every = 0;

    std::string out_dir = "runs/exp";

    const LanguageBudget& language(const std::string& name) const;
};

// Strict parse: versioned schema, unknown keys rejected.
ExperimentConfig load_config(const std::string& path);

// Rebuilds a scenario language from the config seeds (index into languages).
lang::LanguageSpec scenario_language(const ExperimentConfig& cfg, size_t index);
lang::LanguageSpec scenario_source(const ExperimentConfig& cfg);

std::string format_params(int64_t count);  // 2128 -> "0.002M", 6306816 -> "6.3M"

// Entry point shared by the binary and the tests. argv excludes the program
// name. Errors print one "error: ..." line on err and return nonzero; success
// prints the produced report/artifact path as the last line on out.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace mmadapt::cli
