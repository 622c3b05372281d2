#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ofl/checksum.hpp"
#include "ofl/cli.hpp"
#include "ofl/errors.hpp"

using namespace ofl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

int cli(std::initializer_list<std::string> args) { return run_cli(std::vector<std::string>(args)); }

// Tiny dataset flags shared by the command tests.
std::vector<std::string> gen_args(const std::string& out) {
    return {"gen-data", "--out", out,          "--seed",   "5",  "--sequences", "3",
            "--train-sequences", "2",  "--frames", "3",  "--size", "32",
            "--distractors", "1", "--radius-min", "5", "--radius-max", "8"};
}

void write_micro_config(const fs::path& path, int epochs) {
    nlohmann::json j = RunConfig::defaults().to_json();
    j["C"] = 8;
    j["D"] = 4;
    j["cap_buffer"] = 12;
    j["epochs"] = epochs;
    j["seed"] = 5;
    std::ofstream f(path);
    f << j.dump(2);
}

std::uint64_t file_digest(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                           std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

std::uint64_t tree_digest(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& rel : files) {
        const std::string name = rel.string();
        h = fnv1a64(name.data(), name.size(), h);
        h ^= file_digest(root / rel) * 0x9E3779B97F4A7C15ULL;
    }
    return h;
}

}  // namespace

TEST_CASE("config files reject unknown keys and merge over defaults") {
    SUBCASE("unknown key") {
        CHECK_THROWS_AS(RunConfig::from_json({{"gama", 0.8}}), ConfigError);
    }
    SUBCASE("values override defaults") {
        const RunConfig c = RunConfig::from_json({{"gamma", 0.9}, {"epochs", 3}});
        CHECK(c.pipe.gamma == 0.9);
        CHECK(c.train.epochs == 3);
        CHECK(c.pipe.k_refs == 2);  // untouched default
    }
    SUBCASE("round trips through JSON") {
        const RunConfig c = RunConfig::defaults();
        CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
    }
}

TEST_CASE("gen-data command") {
    TempDir tmp("ofl_cli_gen");
    SUBCASE("creates a manifest with the requested sequences") {
        CHECK(cli({"gen-data", "--out", tmp.str("d"), "--seed", "42", "--sequences", "10",
                   "--frames", "8", "--size", "32"}) == 0);
        std::ifstream f(tmp.path / "d" / "manifest.json");
        REQUIRE(f.good());
        const nlohmann::json manifest = nlohmann::json::parse(f);
        CHECK(manifest.at("sequences").size() == 10);
    }
    SUBCASE("missing --out is a usage error") {
        CHECK(cli({"gen-data", "--seed", "42"}) == 2);
    }
    SUBCASE("unknown flag is a usage error") {
        CHECK(cli({"gen-data", "--out", tmp.str("x"), "--bogus", "1"}) == 2);
    }
    SUBCASE("rerun with identical flags produces an identical tree") {
        auto args1 = gen_args(tmp.str("r1"));
        auto args2 = gen_args(tmp.str("r2"));
        REQUIRE(run_cli(args1) == 0);
        REQUIRE(run_cli(args2) == 0);
        CHECK(tree_digest(tmp.path / "r1") == tree_digest(tmp.path / "r2"));
    }
}

TEST_CASE("train command") {
    TempDir tmp("ofl_cli_train");
    REQUIRE(run_cli(gen_args(tmp.str("data"))) == 0);
    write_micro_config(tmp.path / "micro.json", 2);

    SUBCASE("writes the model directory and reports the configured epochs") {
        CHECK(cli({"train", "--data", tmp.str("data"), "--config", tmp.str("micro.json"),
                   "--model-out", tmp.str("model")}) == 0);
        CHECK(fs::exists(tmp.path / "model" / "model.json"));
        CHECK(fs::exists(tmp.path / "model" / "fusion" / "fusion.json"));
        CHECK(fs::exists(tmp.path / "model" / "stack" / "stack.json"));
        CHECK(fs::exists(tmp.path / "model" / "loss_trace.csv"));
        std::ifstream f(tmp.path / "model" / "train_report.json");
        const nlohmann::json report = nlohmann::json::parse(f);
        CHECK(report.at("epochs").get<int>() == 2);
        CHECK(report.at("epoch_lr").size() == 2);
    }
    SUBCASE("corrupt manifest fails naming the file") {
        std::ofstream f(tmp.path / "data" / "manifest.json", std::ios::trunc);
        f << "{";
        f.close();
        CHECK(cli({"train", "--data", tmp.str("data"), "--config", tmp.str("micro.json"),
                   "--model-out", tmp.str("model2")}) == 1);
    }
    SUBCASE("missing required flag is a usage error") {
        CHECK(cli({"train", "--data", tmp.str("data")}) == 2);
    }
}

TEST_CASE("eval, ablate and render commands") {
    TempDir tmp("ofl_cli_eval");
    REQUIRE(run_cli(gen_args(tmp.str("data"))) == 0);
    write_micro_config(tmp.path / "micro.json", 2);
    REQUIRE(cli({"train", "--data", tmp.str("data"), "--config", tmp.str("micro.json"),
                 "--model-out", tmp.str("model")}) == 0);

    SUBCASE("eval writes a report and echoes overrides") {
        CHECK(cli({"eval", "--data", tmp.str("data"), "--model", tmp.str("model"), "--report",
                   tmp.str("full.json"), "--gamma", "0.9", "--threads", "1"}) == 0);
        const ExperimentReport rep = read_report(tmp.path / "full.json");
        CHECK(rep.config.at("gamma").get<double>() == 0.9);
        CHECK(rep.config.at("ablate").get<std::string>() == "full");
        CHECK(rep.per_class.size() == 1);
    }
    SUBCASE("base ablation runs without a model") {
        CHECK(cli({"eval", "--data", tmp.str("data"), "--report", tmp.str("base.json"),
                   "--ablate", "base", "--config", tmp.str("micro.json"), "--threads", "1"}) == 0);
        const ExperimentReport rep = read_report(tmp.path / "base.json");
        CHECK(rep.config.at("use_learner").get<bool>() == false);
        CHECK(rep.config.at("use_afm").get<bool>() == false);
    }
    SUBCASE("learner ablation without a model is an error") {
        CHECK(cli({"eval", "--data", tmp.str("data"), "--report", tmp.str("x.json"),
                   "--ablate", "learner"}) == 1);
    }
    SUBCASE("missing model directory fails") {
        CHECK(cli({"eval", "--data", tmp.str("data"), "--model", tmp.str("nope"), "--report",
                   tmp.str("x.json")}) == 1);
    }
    SUBCASE("gamma sweep shares the dataset checksum") {
        std::vector<std::string> checksums;
        for (const std::string g : {"0.7", "0.8", "0.9"}) {
            const std::string rep_path = tmp.str("sweep_" + g + ".json");
            REQUIRE(cli({"eval", "--data", tmp.str("data"), "--model", tmp.str("model"),
                         "--report", rep_path, "--gamma", g, "--threads", "1"}) == 0);
            checksums.push_back(read_report(rep_path).dataset_checksum);
        }
        CHECK(checksums[0] == checksums[1]);
        CHECK(checksums[1] == checksums[2]);
    }
    SUBCASE("eval reruns are identical apart from the wall clock") {
        REQUIRE(cli({"eval", "--data", tmp.str("data"), "--model", tmp.str("model"), "--report",
                     tmp.str("a.json"), "--threads", "1"}) == 0);
        REQUIRE(cli({"eval", "--data", tmp.str("data"), "--model", tmp.str("model"), "--report",
                     tmp.str("b.json"), "--threads", "2"}) == 0);
        nlohmann::json a = report_to_json(read_report(tmp.path / "a.json"));
        nlohmann::json b = report_to_json(read_report(tmp.path / "b.json"));
        a["runtime_s"] = 0.0;
        b["runtime_s"] = 0.0;
        CHECK(a == b);
    }
    SUBCASE("ablate writes three reports plus a summary with recomputable gaps") {
        REQUIRE(cli({"ablate", "--data", tmp.str("data"), "--model", tmp.str("model"), "--out",
                     tmp.str("ab"), "--threads", "1"}) == 0);
        std::ifstream f(tmp.path / "ab" / "ablation_summary.json");
        REQUIRE(f.good());
        const nlohmann::json summary = nlohmann::json::parse(f);
        const double base = summary.at("reports").at("base").at("mean_dice").get<double>();
        const double full = summary.at("reports").at("full").at("mean_dice").get<double>();
        const double gap = summary.at("gaps").at("full_minus_base").get<double>();
        CHECK(gap == doctest::Approx(full - base).epsilon(1e-12));
        // gap equals recomputation from the per-sequence tables
        auto mean_from_report = [&](const std::string& name) {
            const ExperimentReport rep = read_report(tmp.path / "ab" / name);
            double acc = 0.0;
            int n = 0;
            for (const auto& cs : rep.per_class) {
                for (const auto& s : cs.per_sequence) {
                    acc += s.mean_dice;
                    ++n;
                }
            }
            return acc / n;
        };
        CHECK(gap == doctest::Approx(mean_from_report("full.json") - mean_from_report("base.json"))
                         .epsilon(1e-9));
    }
    SUBCASE("render needs predictions and then writes overlays") {
        CHECK(cli({"render", "--data", tmp.str("data"), "--pred", tmp.str("missing"), "--out",
                   tmp.str("ov")}) == 1);
        REQUIRE(cli({"eval", "--data", tmp.str("data"), "--model", tmp.str("model"), "--report",
                     tmp.str("dump.json"), "--dump-masks", tmp.str("preds"), "--threads",
                     "1"}) == 0);
        CHECK(cli({"render", "--data", tmp.str("data"), "--pred", tmp.str("preds"), "--out",
                   tmp.str("ov")}) == 0);
        // one overlay per test frame
        int overlays = 0;
        for (const auto& e : fs::recursive_directory_iterator(tmp.path / "ov")) {
            if (e.is_regular_file()) ++overlays;
        }
        CHECK(overlays == 3);  // 1 test sequence x 3 frames
        // removing one prediction makes the rerun fail with exit 1
        fs::remove(tmp.path / "preds" / "seq_02" / "target" / "frame_01.pgm");
        CHECK(cli({"render", "--data", tmp.str("data"), "--pred", tmp.str("preds"), "--out",
                   tmp.str("ov2")}) == 1);
    }
}

TEST_CASE("unknown subcommand is a usage error") {
    CHECK(cli({"frobnicate"}) == 2);
    CHECK(cli({}) == 2);
}
