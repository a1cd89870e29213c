#include "mmadapt/cli.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmadapt/checkpoint.hpp"
#include "mmadapt/eval.hpp"
#include "mmadapt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmadapt::cli {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + where);
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

model::ModelConfig parse_model(const json& j) {
    check_keys(j, {"model_dim", "adapter_dim", "num_encoder_layers", "num_decoder_layers",
                   "num_text_encoder_layers", "num_heads", "feature_dim", "length_adapter",
                   "max_source_len", "max_target_len"},
               "model");
    model::ModelConfig m;
    read_into(j, "model_dim", m.model_dim);
    read_into(j, "adapter_dim", m.adapter_dim);
    read_into(j, "num_encoder_layers", m.num_encoder_layers);
    read_into(j, "num_decoder_layers", m.num_decoder_layers);
    read_into(j, "num_text_encoder_layers", m.num_text_encoder_layers);
    read_into(j, "num_heads", m.num_heads);
    read_into(j, "feature_dim", m.feature_dim);
    read_into(j, "max_source_len", m.max_source_len);
    read_into(j, "max_target_len", m.max_target_len);
    if (j.contains("length_adapter")) {
        m.length_adapter.clear();
        for (auto& g : j.at("length_adapter")) {
            if (!g.is_array() || g.size() != 3)
                throw std::invalid_argument("config: length_adapter entries are [kernel,stride,padding]");
            m.length_adapter.push_back({g[0].get<int>(), g[1].get<int>(), g[2].get<int>()});
        }
    }
    return m;
}

}  // namespace

const LanguageBudget& ExperimentConfig::language(const std::string& name) const {
    for (auto& l : languages)
        if (l.name == name) return l;
    throw std::invalid_argument("scenario has no language named \"" + name + "\"");
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config parse failure in " + path + ": " + e.what());
    }
    check_keys(j, {"schema_version", "model", "scenario", "pretrain", "adapt", "seed", "out_dir"},
               "config root");
    if (j.value("schema_version", -1) != 1)
        throw std::invalid_argument("config: schema_version must be 1");

    ExperimentConfig cfg;
    if (j.contains("model")) cfg.model = parse_model(j.at("model"));
    read_into(j, "seed", cfg.seed);
    read_into(j, "out_dir", cfg.out_dir);

    if (j.contains("scenario")) {
        const json& s = j.at("scenario");
        check_keys(s,
                   {"base_seed", "source_seed", "languages", "noise_sigma", "oov_fraction",
                    "min_sentence_len", "max_sentence_len"},
                   "scenario");
        read_into(s, "base_seed", cfg.base_seed);
        read_into(s, "source_seed", cfg.source_seed);
        read_into(s, "noise_sigma", cfg.corpus.noise_sigma);
        read_into(s, "oov_fraction", cfg.corpus.oov_fraction);
        read_into(s, "min_sentence_len", cfg.corpus.min_sentence_len);
        read_into(s, "max_sentence_len", cfg.corpus.max_sentence_len);
        for (auto& lj : s.value("languages", json::array())) {
            check_keys(lj,
                       {"name", "parent", "relatedness", "n_train", "n_valid", "n_test", "n_text",
                        "oov_fraction"},
                       "scenario.languages[]");
            LanguageBudget b;
            b.name = lj.at("name").get<std::string>();
            read_into(lj, "parent", b.parent);
            read_into(lj, "relatedness", b.relatedness);
            read_into(lj, "n_train", b.n_train);
            read_into(lj, "n_valid", b.n_valid);
            read_into(lj, "n_test", b.n_test);
            read_into(lj, "n_text", b.n_text);
            read_into(lj, "oov_fraction", b.oov_fraction);
            cfg.languages.push_back(std::move(b));
        }
    }
    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        check_keys(p, {"languages", "epochs", "lr", "batch_size"}, "pretrain");
        read_into(p, "languages", cfg.pretrain_languages);
        read_into(p, "epochs", cfg.pretrain_epochs);
        read_into(p, "lr", cfg.pretrain_lr);
        read_into(p, "batch_size", cfg.batch_size);
    }
    if (j.contains("adapt")) {
        const json& a = j.at("adapt");
        check_keys(a,
                   {"recipe", "target", "pivot", "text_epochs", "asr_epochs", "pivot_epochs",
                    "lr", "text_lr", "eval_beam",
                    "max_decode_len", "eval_every"},
                   "adapt");
        read_into(a, "recipe", cfg.recipe);
        read_into(a, "target", cfg.target);
        read_into(a, "pivot", cfg.pivot);
        read_into(a, "text_epochs", cfg.text_epochs);
        read_into(a, "asr_epochs", cfg.asr_epochs);
        read_into(a, "pivot_epochs", cfg.pivot_epochs);
        read_into(a, "lr", cfg.adapt_lr);
        read_into(a, "text_lr", cfg.text_lr);
        read_into(a, "eval_beam", cfg.eval_beam);
        read_into(a, "max_decode_len", cfg.max_decode_len);
        read_into(a, "eval_every", cfg.eval_every);
    }

    std::set<std::string> names;
    for (auto& l : cfg.languages) {
        if (!l.parent.empty() && !names.count(l.parent))
            throw std::invalid_argument("config: language " + l.name + " has parent " + l.parent +
                                        " which is not declared before it");
        if (!names.insert(l.name).second)
            throw std::invalid_argument("config: duplicate language name " + l.name);
    }
    for (auto& n : cfg.pretrain_languages) cfg.language(n);
    if (!cfg.target.empty()) cfg.language(cfg.target);
    if (!cfg.pivot.empty()) cfg.language(cfg.pivot);
    train::standard_recipe(cfg.recipe);  // validates the recipe name
    return cfg;
}

namespace {

lang::LangParams scenario_params(const ExperimentConfig& cfg) {
    lang::LangParams p;
    p.feature_dim = cfg.model.feature_dim;
    return p;
}

}  // namespace

lang::LanguageSpec scenario_source(const ExperimentConfig& cfg) {
    lang::LanguageSpec s = lang::make_base_language(scenario_params(cfg), cfg.source_seed);
    s.language_id = "source";
    return s;
}

lang::LanguageSpec scenario_language(const ExperimentConfig& cfg, size_t index) {
    if (index >= cfg.languages.size())
        throw std::invalid_argument("scenario language index out of range");
    const LanguageBudget& b = cfg.languages[index];
    lang::LanguageSpec parent;
    if (b.parent.empty()) {
        parent = lang::make_base_language(scenario_params(cfg), cfg.base_seed);
    } else {
        size_t pi = 0;
        while (cfg.languages[pi].name != b.parent) ++pi;  // load_config validated the name
        parent = scenario_language(cfg, pi);
    }
    uint64_t derive_seed = Rng(cfg.base_seed).split(index + 1).next_u64();
    lang::LanguageSpec spec = lang::derive_language(parent, b.relatedness, derive_seed);
    spec.language_id = b.name;
    return spec;
}

std::string format_params(int64_t count) {
    char buf[32];
    double m = double(count) / 1e6;
    if (m < 0.1)
        std::snprintf(buf, sizeof(buf), "%.3fM", m);
    else
        std::snprintf(buf, sizeof(buf), "%.1fM", m);
    return buf;
}

namespace {

std::string corpus_dir(const ExperimentConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / "corpora" / name).string();
}

lang::Corpus load_named_corpus(const ExperimentConfig& cfg, const std::string& name) {
    std::string dir = corpus_dir(cfg, name);
    if (!fs::exists(fs::path(dir) / "manifest.json"))
        throw std::runtime_error("corpus not generated yet: " + dir + " (run gen first)");
    return lang::load_corpus(dir);
}

int cmd_gen(const ExperimentConfig& cfg, std::ostream& out) {
    if (cfg.languages.empty()) throw std::invalid_argument("scenario defines no languages");
    lang::LanguageSpec source = scenario_source(cfg);
    for (size_t i = 0; i < cfg.languages.size(); ++i) {
        const LanguageBudget& b = cfg.languages[i];
        lang::LanguageSpec spec = scenario_language(cfg, i);
        lang::CorpusParams cp = cfg.corpus;
        if (b.oov_fraction >= 0.0) cp.oov_fraction = b.oov_fraction;
        cp.n_train = b.n_train;
        cp.n_valid = b.n_valid;
        cp.n_test = b.n_test;
        lang::Corpus corpus =
            lang::generate_corpus(spec, source, cp, Rng(cfg.seed).split(i + 1).next_u64());
        lang::save_corpus(corpus, corpus_dir(cfg, b.name));
        out << "corpus " << b.name << ": train=" << corpus.train.size()
            << " valid=" << corpus.valid.size() << " test=" << corpus.test.size() << "\n";
        if (b.n_text > 0) {
            lang::CorpusParams tp = cfg.corpus;
            tp.n_train = b.n_text;
            tp.n_valid = 0;
            tp.n_test = 0;
            lang::Corpus text =
                lang::generate_corpus(spec, source, tp, Rng(cfg.seed).split(1000 + i).next_u64());
            lang::save_corpus(text, corpus_dir(cfg, b.name + "_text"));
            out << "corpus " << b.name << "_text: train=" << text.train.size() << "\n";
        }
    }
    out << (fs::path(cfg.out_dir) / "corpora").string() << "\n";
    return 0;
}

json metrics_json(const eval::MetricsReport& m) {
    return {{"wer", m.wer}, {"cer", m.cer}, {"oov", m.oov}, {"n_utterances", m.n_utterances}};
}

void write_text(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

std::string default_checkpoint(const ExperimentConfig& cfg) {
    return (fs::path(cfg.out_dir) / "base.ckpt").string();
}

int cmd_pretrain(const ExperimentConfig& cfg, std::ostream& out) {
    if (cfg.pretrain_languages.empty())
        throw std::invalid_argument("pretrain.languages is empty");
    lang::Corpus merged;
    merged.language_id = "pretrain";
    for (auto& name : cfg.pretrain_languages) {
        lang::Corpus c = load_named_corpus(cfg, name);
        merged.train.insert(merged.train.end(), c.train.begin(), c.train.end());
        merged.valid.insert(merged.valid.end(), c.valid.begin(), c.valid.end());
    }

    model::MultimodalModel m = model::build_model(cfg.model, cfg.seed);
    train::Phase phase;
    phase.objective = train::Objective::joint;
    phase.corpus = "pretrain";
    // The bottleneck adapters are adaptation-time additions: they stay at
    // their zero-initialized identity during pretraining so that adaptation
    // trains them as pure residual deltas on a base that works without them.
    for (auto& g : model::group_names())
        if (g != "encoder_adapters" && g != "decoder_adapters") phase.trainable.insert(g);
    phase.batch_size = cfg.batch_size;

    // Staged schedule: full rate for the first 60% of epochs, a third until
    // 85%, then a tenth to polish. Each epoch runs as its own phase, so the
    // optimizer moment estimates restart every epoch; these warm restarts
    // escape the long plateau this objective exhibits under a single
    // continuous Adam trajectory.
    const int E = cfg.pretrain_epochs;
    const int b1 = std::min(E, int(std::ceil(0.6 * E)));
    const int b2 = std::min(E, int(std::ceil(0.85 * E)));
    train::PhaseLog log;
    phase.epochs = 1;
    for (int e = 0; e < E; ++e) {
        phase.lr = e < b1 ? cfg.pretrain_lr : e < b2 ? cfg.pretrain_lr / 3.0
                                                     : cfg.pretrain_lr / 10.0;
        train::PhaseLog epoch_log = train::run_phase(m, phase, merged, 1000 + uint64_t(e));
        log.objective = epoch_log.objective;
        log.corpus = epoch_log.corpus;
        log.trainable = epoch_log.trainable;
        log.trainable_params = epoch_log.trainable_params;
        log.epoch_loss.insert(log.epoch_loss.end(), epoch_log.epoch_loss.begin(),
                              epoch_log.epoch_loss.end());
    }

    std::string ckpt = default_checkpoint(cfg);
    fs::create_directories(fs::path(ckpt).parent_path());
    io::save_checkpoint(m, ckpt);

    std::vector<std::string> pretrain_transcripts = merged.transcripts(merged.train);
    json langs = json::array();
    std::ostringstream table;
    table << "pretraining report\n";
    table << "language    pretrained   WER%     CER%     OOV%\n";
    for (auto& b : cfg.languages) {
        lang::Corpus c = load_named_corpus(cfg, b.name);
        if (c.test.empty()) continue;
        auto metrics =
            eval::evaluate_asr(m, c.test, pretrain_transcripts, cfg.eval_beam, cfg.max_decode_len);
        bool in_pretrain = std::find(cfg.pretrain_languages.begin(), cfg.pretrain_languages.end(),
                                     b.name) != cfg.pretrain_languages.end();
        json lj = metrics_json(metrics);
        lj["name"] = b.name;
        lj["pretrained"] = in_pretrain;
        langs.push_back(lj);
        char row[128];
        std::snprintf(row, sizeof(row), "%-11s %-12s %-8.2f %-8.2f %-8.2f\n", b.name.c_str(),
                      in_pretrain ? "yes" : "no", metrics.wer, metrics.cer, metrics.oov);
        table << row;
    }

    json report = {{"schema_version", 1},
                   {"kind", "pretrain"},
                   {"checkpoint", fs::path(ckpt).filename().string()},
                   {"epochs", cfg.pretrain_epochs},
                   {"final_loss", log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()},
                   {"languages", langs}};
    std::string jpath = (fs::path(cfg.out_dir) / "pretrain_report.json").string();
    std::string tpath = (fs::path(cfg.out_dir) / "pretrain_report.txt").string();
    write_text(jpath, report.dump(2) + "\n");
    write_text(tpath, table.str());
    out << "checkpoint: " << ckpt << "\n" << tpath << "\n";
    return 0;
}

int cmd_adapt(const ExperimentConfig& cfg, const std::string& checkpoint, std::ostream& out) {
    if (cfg.target.empty()) throw std::invalid_argument("adapt.target is not set");
    model::MultimodalModel m = model::build_model(cfg.model, cfg.seed);
    io::load_checkpoint(m, checkpoint.empty() ? default_checkpoint(cfg) : checkpoint);

    lang::Corpus target = load_named_corpus(cfg, cfg.target);
    lang::Corpus target_text;
    const bool has_text = cfg.language(cfg.target).n_text > 0;
    if (has_text) target_text = load_named_corpus(cfg, cfg.target + "_text");
    lang::Corpus pivot;
    if (!cfg.pivot.empty()) pivot = load_named_corpus(cfg, cfg.pivot);

    std::map<std::string, const lang::Corpus*> corpora;
    corpora["target_speech"] = &target;
    corpora["target_text"] = has_text ? &target_text : &target;
    if (!cfg.pivot.empty()) corpora["pivot_speech"] = &pivot;

    train::RecipeOptions opts;
    opts.text_epochs = cfg.text_epochs;
    opts.asr_epochs = cfg.asr_epochs;
    opts.pivot_epochs = cfg.pivot_epochs;
    opts.adapt_lr = cfg.adapt_lr;
    opts.text_lr = cfg.text_lr;
    opts.batch_size = cfg.batch_size;
    train::Recipe recipe = train::standard_recipe(cfg.recipe, opts);
    for (auto& p : recipe.phases) p.eval_every = cfg.eval_every;

    train::EvalSpec es;
    es.split = &target.test;
    es.train_transcripts = target.transcripts(target.train);
    es.beam = cfg.eval_beam;
    es.max_len = cfg.max_decode_len;
    train::Report r =
        train::run_recipe(m, recipe, corpora, es, Rng(cfg.seed).split(99).next_u64());

    std::string ckpt = (fs::path(cfg.out_dir) / (cfg.recipe + ".ckpt")).string();
    io::save_checkpoint(m, ckpt);

    std::set<std::string> trained;
    json phases = json::array();
    for (auto& p : r.phases) {
        trained.insert(p.trainable.begin(), p.trainable.end());
        phases.push_back({{"objective", p.objective},
                          {"corpus", p.corpus},
                          {"trainable", p.trainable},
                          {"trainable_params", p.trainable_params},
                          {"epochs", p.epoch_loss.size()},
                          {"final_loss", p.epoch_loss.empty() ? 0.0 : p.epoch_loss.back()},
                          {"epoch_loss", p.epoch_loss}});
    }
    int64_t total_params = 0;
    for (auto& [g, n] : r.param_counts) total_params += n;

    json report = {{"schema_version", 1},
                   {"kind", "adapt"},
                   {"recipe", cfg.recipe},
                   {"language", cfg.target},
                   {"pivot", cfg.pivot},
                   {"component", json(trained)},
                   {"before", metrics_json(r.before)},
                   {"after", metrics_json(r.after)},
                   {"relative_wer_reduction", r.after.relative_wer_reduction},
                   {"trained_params", r.trained_params},
                   {"total_params", total_params},
                   {"checkpoint", fs::path(ckpt).filename().string()},
                   {"phases", phases}};
    std::string jpath = (fs::path(cfg.out_dir) / (cfg.recipe + "_report.json")).string();
    std::string tpath = (fs::path(cfg.out_dir) / (cfg.recipe + "_report.txt")).string();

    std::ostringstream table;
    std::string component;
    for (auto& g : trained) component += (component.empty() ? "" : "+") + g;
    if (component.empty()) component = "none";
    table << "adaptation report: recipe " << cfg.recipe << " on " << cfg.target << "\n";
    table << "component            params    WER%     CER%\n";
    char row[160];
    std::snprintf(row, sizeof(row), "%-20s %-9s %-8.2f %-8.2f (before)\n", "none", "-",
                  r.before.wer, r.before.cer);
    table << row;
    std::snprintf(row, sizeof(row), "%-20s %-9s %-8.2f %-8.2f (after)\n", component.c_str(),
                  format_params(r.trained_params).c_str(), r.after.wer, r.after.cer);
    table << row;
    std::snprintf(row, sizeof(row), "relative WER reduction: %.1f%%\n",
                  r.after.relative_wer_reduction);
    table << row;

    write_text(jpath, report.dump(2) + "\n");
    write_text(tpath, table.str());
    out << "checkpoint: " << ckpt << "\n" << jpath << "\n" << tpath << "\n";
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
             const std::string& corpus_name, const std::string& mode, std::ostream& out) {
    if (corpus_name.empty()) throw std::invalid_argument("eval needs --corpus <language name>");
    model::MultimodalModel m = model::build_model(cfg.model, cfg.seed);
    io::load_checkpoint(m, checkpoint.empty() ? default_checkpoint(cfg) : checkpoint);
    lang::Corpus c = load_named_corpus(cfg, corpus_name);
    if (c.test.empty()) throw std::invalid_argument("corpus has no test split: " + corpus_name);
    auto train_transcripts = c.transcripts(c.train);
    auto metrics =
        eval::evaluate_asr(m, c.test, train_transcripts, cfg.eval_beam, cfg.max_decode_len);
    eval::OovMode om = mode == "type" ? eval::OovMode::type : eval::OovMode::token;
    metrics.oov = eval::oov_rate(train_transcripts, c.transcripts(c.test), om);

    json report = {{"schema_version", 1},
                   {"kind", "eval"},
                   {"language", corpus_name},
                   {"oov_mode", mode.empty() ? "token" : mode},
                   {"metrics", metrics_json(metrics)}};
    std::string jpath = (fs::path(cfg.out_dir) / ("eval_" + corpus_name + ".json")).string();
    write_text(jpath, report.dump(2) + "\n");
    char line[160];
    std::snprintf(line, sizeof(line), "%s: WER %.2f%% CER %.2f%% OOV %.2f%% (n=%d)\n",
                  corpus_name.c_str(), metrics.wer, metrics.cer, metrics.oov,
                  metrics.n_utterances);
    out << line << jpath << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out_path,
               std::ostream& out) {
    if (files.empty()) throw std::invalid_argument("report needs at least one report file");
    struct Row {
        std::string language, recipe, component;
        int64_t params = 0;
        Real wer = 0.0, cer = 0.0, rel = 0.0;
        int64_t total_params = 0;
    };
    std::vector<Row> rows;
    Real base_wer = -1.0;
    std::string base_lang;
    for (auto& f : files) {
        std::ifstream in(f);
        if (!in) throw std::runtime_error("cannot open report: " + f);
        json j;
        in >> j;
        if (j.value("kind", "") != "adapt")
            throw std::invalid_argument("not an adaptation report: " + f);
        Row r;
        r.language = j.value("language", "?");
        r.recipe = j.value("recipe", "?");
        for (auto& g : j.value("component", json::array()))
            r.component += (r.component.empty() ? "" : "+") + g.get<std::string>();
        if (r.component.empty()) r.component = "none";
        r.params = j.value("trained_params", int64_t(0));
        r.wer = j.at("after").value("wer", 0.0);
        r.cer = j.at("after").value("cer", 0.0);
        r.rel = j.value("relative_wer_reduction", 0.0);
        r.total_params = j.value("total_params", int64_t(0));
        if (base_wer < 0.0) {
            base_wer = j.at("before").value("wer", 0.0);
            base_lang = r.language;
        }
        rows.push_back(std::move(r));
    }

    std::ostringstream table;
    table << "adaptation comparison\n";
    bool mixed_models = false;
    for (auto& r : rows) mixed_models = mixed_models || r.total_params != rows[0].total_params;
    if (mixed_models) table << "warning: reports come from models with different parameter totals\n";

    // Flag the best WER per language, like the bold entries in comparison tables.
    std::map<std::string, Real> best;
    for (auto& r : rows) {
        auto it = best.find(r.language);
        if (it == best.end() || r.wer < it->second) best[r.language] = r.wer;
    }
    table << "language    system             component                      params    WER%      CER%     relWER%\n";
    for (auto& r : rows) {
        char row[220];
        bool flag = r.wer == best[r.language];
        std::snprintf(row, sizeof(row), "%-11s %-18s %-30s %-9s %-8.2f%s %-8.2f %-8.1f\n",
                      r.language.c_str(), r.recipe.c_str(), r.component.c_str(),
                      format_params(r.params).c_str(), r.wer, flag ? "*" : " ", r.cer, r.rel);
        table << row;
    }
    if (base_wer >= 0.0) {
        char row[120];
        std::snprintf(row, sizeof(row), "unadapted base on %s: WER %.2f%%\n", base_lang.c_str(),
                      base_wer);
        table << row;
    }
    write_text(out_path, table.str());
    out << out_path << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"synthetic multimodal adapter experiments"};
    app.require_subcommand(1);

    std::string config_path, out_override, checkpoint, corpus_name, mode = "token";
    std::vector<std::string> report_files;
    std::string report_out = "report_table.txt";
    int64_t seed_override = -1;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", config_path, "experiment config (json)");
        if (needs_config) opt->required();
        sub->add_option("--seed", seed_override, "override config seed");
        sub->add_option("--out", out_override, "override config out_dir");
    };
    CLI::App* gen = app.add_subcommand("gen", "generate scenario corpora");
    add_common(gen, true);
    CLI::App* pretrain = app.add_subcommand("pretrain", "train the multilingual base model");
    add_common(pretrain, true);
    CLI::App* adapt = app.add_subcommand("adapt", "run an adaptation recipe");
    add_common(adapt, true);
    adapt->add_option("--checkpoint", checkpoint, "base checkpoint path");
    CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    add_common(evalc, true);
    evalc->add_option("--checkpoint", checkpoint, "checkpoint path");
    evalc->add_option("--corpus", corpus_name, "scenario language name")->required();
    evalc->add_option("--mode", mode, "oov counting mode")
        ->check(CLI::IsMember({"token", "type"}));
    CLI::App* report = app.add_subcommand("report", "combine adaptation reports into a table");
    report->add_option("files", report_files, "adaptation report json files");
    report->add_option("--out", report_out, "table output path");

    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (report->parsed()) return cmd_report(report_files, report_out, out);
        ExperimentConfig cfg = load_config(config_path);
        if (seed_override >= 0) cfg.seed = uint64_t(seed_override);
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (gen->parsed()) return cmd_gen(cfg, out);
        if (pretrain->parsed()) return cmd_pretrain(cfg, out);
        if (adapt->parsed()) return cmd_adapt(cfg, checkpoint, out);
        if (evalc->parsed()) return cmd_eval(cfg, checkpoint, corpus_name, mode, out);
        err << "error: no subcommand\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mmadapt::cli
