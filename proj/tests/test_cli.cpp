#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmadapt/checkpoint.hpp"
#include "mmadapt/cli.hpp"

namespace fs = std::filesystem;
using namespace mmadapt;
using nlohmann::json;

namespace {

std::string write_config(const std::string& dir, const std::string& out_dir,
                         const std::string& recipe = "system_a", int target_train = 6) {
    json cfg = {
        {"schema_version", 1},
        {"model",
         {{"model_dim", 16},
          {"adapter_dim", 4},
          {"num_encoder_layers", 1},
          {"num_decoder_layers", 1},
          {"num_text_encoder_layers", 1},
          {"num_heads", 2},
          {"feature_dim", 8},
          {"length_adapter", {{3, 2, 1}}}}},
        {"scenario",
         {{"base_seed", 11},
          {"source_seed", 12},
          {"noise_sigma", 0.05},
          {"oov_fraction", 0.2},
          {"min_sentence_len", 1},
          {"max_sentence_len", 3},
          {"languages",
           {{{"name", "pivot"},
             {"relatedness", 1.0},
             {"n_train", 10},
             {"n_valid", 2},
             {"n_test", 4}},
            {{"name", "target"},
             {"relatedness", 0.625},
             {"n_train", target_train},
             {"n_valid", 2},
             {"n_test", 4},
             {"n_text", 8}}}}}},
        {"pretrain", {{"languages", {"pivot"}}, {"epochs", 1}, {"lr", 1e-3}, {"batch_size", 8}}},
        {"adapt",
         {{"recipe", recipe},
          {"target", "target"},
          {"pivot", "pivot"},
          {"text_epochs", 1},
          {"asr_epochs", 1},
          {"lr", 3e-4},
          {"max_decode_len", 24}}},
        {"seed", 5},
        {"out_dir", out_dir},
    };
    fs::create_directories(dir);
    std::string path = (fs::path(dir) / "cfg.json").string();
    std::ofstream f(path);
    f << cfg.dump(2);
    return path;
}

struct RunResult {
    int code;
    std::string out, err;
};

RunResult run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string last_line(const std::string& s) {
    auto end = s.find_last_not_of('\n');
    auto start = s.rfind('\n', end);
    return s.substr(start + 1, end - start);
}

const std::string kRoot = (fs::temp_directory_path() / "mmadapt_cli_test").string();

}  // namespace

TEST_CASE("config parsing is strict") {
    fs::remove_all(kRoot);
    std::string path = write_config(kRoot, kRoot + "/run");
    cli::ExperimentConfig cfg = cli::load_config(path);
    CHECK(cfg.languages.size() == 2);
    CHECK(cfg.language("target").relatedness == 0.625);
    CHECK(cfg.recipe == "system_a");

    auto mutate = [&](auto fn) {
        std::ifstream in(path);
        json j;
        in >> j;
        fn(j);
        std::string bad = kRoot + "/bad.json";
        std::ofstream out(bad);
        out << j.dump();
        return bad;
    };
    CHECK_THROWS_AS(cli::load_config(mutate([](json& j) { j["unknown_knob"] = 1; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(cli::load_config(mutate([](json& j) { j["model"]["depth"] = 3; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(cli::load_config(mutate([](json& j) { j["schema_version"] = 2; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(cli::load_config(mutate([](json& j) { j["adapt"]["recipe"] = "system_z"; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(cli::load_config(mutate([](json& j) { j["adapt"]["target"] = "nope"; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(cli::load_config(kRoot + "/missing.json"), std::runtime_error);
}

TEST_CASE("languages can chain derivation through a parent") {
    std::string path = write_config(kRoot + "/chain", kRoot + "/chain/run");
    std::ifstream in(path);
    json j;
    in >> j;
    j["scenario"]["languages"].push_back({{"name", "grandchild"},
                                          {"parent", "target"},
                                          {"relatedness", 0.5},
                                          {"n_train", 4},
                                          {"n_valid", 0},
                                          {"n_test", 0}});
    std::string chained = kRoot + "/chain/chained.json";
    {
        std::ofstream out(chained);
        out << j.dump();
    }
    cli::ExperimentConfig cfg = cli::load_config(chained);
    lang::LanguageSpec parent = cli::scenario_language(cfg, 1);
    lang::LanguageSpec child = cli::scenario_language(cfg, 2);
    CHECK(child.language_id == "grandchild");
    int shared = 0;
    for (size_t i = 0; i < parent.phonemes.size(); ++i)
        if (parent.phonemes[i].prototype == child.phonemes[i].prototype) ++shared;
    CHECK(shared == int(std::lround(0.5 * double(parent.phonemes.size()))));

    // A parent must be declared before the language that uses it.
    j["scenario"]["languages"][2]["parent"] = "nope";
    {
        std::ofstream out(chained);
        out << j.dump();
    }
    CHECK_THROWS_AS(cli::load_config(chained), std::invalid_argument);
}

TEST_CASE("parameter count formatting") {
    CHECK(cli::format_params(2128) == "0.002M");
    CHECK(cli::format_params(6306816) == "6.3M");
    CHECK(cli::format_params(50368512) == "50.4M");
}

TEST_CASE("gen is byte-deterministic and supports zero-shot languages") {
    std::string cfg = write_config(kRoot + "/gen", kRoot + "/gen/run", "system_a", 0);
    auto r1 = run_cli({"gen", "--config", cfg});
    REQUIRE(r1.code == 0);
    CHECK(last_line(r1.out) == kRoot + "/gen/run/corpora");

    std::string train_bin = kRoot + "/gen/run/corpora/pivot/train.bin";
    std::string bytes = read_file(train_bin);
    // Zero-shot target: empty train split, populated test split.
    std::string target_manifest = read_file(kRoot + "/gen/run/corpora/target/manifest.json");
    lang::Corpus target = lang::load_corpus(kRoot + "/gen/run/corpora/target");
    CHECK(target.train.empty());
    CHECK(target.test.size() == 4);

    auto r2 = run_cli({"gen", "--config", cfg});
    REQUIRE(r2.code == 0);
    CHECK(read_file(train_bin) == bytes);
    CHECK(read_file(kRoot + "/gen/run/corpora/target/manifest.json") == target_manifest);

    // Manifest survives a parse -> serialize round trip unchanged.
    lang::save_corpus(target, kRoot + "/gen/resaved");
    CHECK(read_file(kRoot + "/gen/resaved/manifest.json") == target_manifest);
}

TEST_CASE("full pipeline: pretrain, adapt, eval, report") {
    std::string cfg = write_config(kRoot + "/pipe", kRoot + "/pipe/run");
    REQUIRE(run_cli({"gen", "--config", cfg}).code == 0);

    auto pre = run_cli({"pretrain", "--config", cfg});
    REQUIRE(pre.code == 0);
    CHECK(last_line(pre.out) == kRoot + "/pipe/run/pretrain_report.txt");
    std::string ckpt = kRoot + "/pipe/run/base.ckpt";
    CHECK(fs::exists(ckpt));

    // Checkpoint loads bit-exactly.
    cli::ExperimentConfig ec = cli::load_config(cfg);
    model::MultimodalModel a = model::build_model(ec.model, 1);
    model::MultimodalModel b = model::build_model(ec.model, 2);
    io::load_checkpoint(a, ckpt);
    io::load_checkpoint(b, ckpt);
    auto pa = a.all_parameters(), pb = b.all_parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second.value() == pb[i].second.value());

    auto ad = run_cli({"adapt", "--config", cfg});
    REQUIRE(ad.code == 0);
    std::string rpt = kRoot + "/pipe/run/system_a_report.json";
    json j;
    std::ifstream(rpt) >> j;
    CHECK(j["recipe"] == "system_a");
    // system_a trains exactly the encoder-adapter parameters.
    auto counts = model::count_parameters(a);
    CHECK(j["trained_params"].get<int64_t>() == counts["encoder_adapters"]);
    CHECK(j["phases"].size() == 1);

    auto ev = run_cli({"eval", "--config", cfg, "--corpus", "target", "--mode", "type"});
    REQUIRE(ev.code == 0);
    json evj;
    std::ifstream(last_line(ev.out)) >> evj;
    CHECK(evj["oov_mode"] == "type");

    auto rep = run_cli({"report", rpt, "--out", kRoot + "/pipe/run/table.txt"});
    REQUIRE(rep.code == 0);
    std::string table = read_file(kRoot + "/pipe/run/table.txt");
    CHECK(table.find("system_a") != std::string::npos);
    CHECK(table.find("encoder_adapters") != std::string::npos);
    CHECK(table.find("*") != std::string::npos);  // best-WER flag
}

TEST_CASE("recipe none leaves metrics unchanged") {
    std::string cfg = write_config(kRoot + "/none", kRoot + "/none/run", "none");
    REQUIRE(run_cli({"gen", "--config", cfg}).code == 0);
    REQUIRE(run_cli({"pretrain", "--config", cfg}).code == 0);
    REQUIRE(run_cli({"adapt", "--config", cfg}).code == 0);
    json j;
    std::ifstream(kRoot + "/none/run/none_report.json") >> j;
    CHECK(j["before"]["wer"] == j["after"]["wer"]);
    CHECK(j["before"]["cer"] == j["after"]["cer"]);
    CHECK(j["trained_params"] == 0);
}

TEST_CASE("end-to-end determinism: identical config and seed, identical bytes") {
    for (std::string run : {"d1", "d2"}) {
        std::string cfg = write_config(kRoot + "/" + run, kRoot + "/" + run + "/run");
        REQUIRE(run_cli({"gen", "--config", cfg}).code == 0);
        REQUIRE(run_cli({"pretrain", "--config", cfg}).code == 0);
        REQUIRE(run_cli({"adapt", "--config", cfg}).code == 0);
    }
    for (std::string f : {"base.ckpt", "system_a.ckpt", "pretrain_report.json",
                          "system_a_report.json", "system_a_report.txt"})
        CHECK(read_file(kRoot + "/d1/run/" + f) == read_file(kRoot + "/d2/run/" + f));
}

TEST_CASE("cli errors are single-line, nonzero, and machine-parseable") {
    auto missing = run_cli({"pretrain", "--config", kRoot + "/nope.json"});
    CHECK(missing.code != 0);
    CHECK(missing.err.rfind("error: ", 0) == 0);
    CHECK(std::count(missing.err.begin(), missing.err.end(), '\n') == 1);

    auto bad_sub = run_cli({"frobnicate"});
    CHECK(bad_sub.code != 0);

    std::string cfg = write_config(kRoot + "/err", kRoot + "/err/run");
    auto no_corpora = run_cli({"adapt", "--config", cfg});
    CHECK(no_corpora.code != 0);
    CHECK(no_corpora.err.rfind("error: ", 0) == 0);
}
