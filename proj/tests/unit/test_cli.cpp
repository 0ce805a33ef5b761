#include <filesystem>
#include <fstream>

#include "cli_harness.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "vmus/cli.hpp"

using namespace vmus;
namespace fs = std::filesystem;

namespace {

using Result = test::CliResult;
using test::outputs;
using test::slurp;

Result run(std::vector<std::string> args) { return test::run_cli_capture(args); }

struct Workspace {
    fs::path root;
    fs::path config;

    Workspace() {
        root = fs::temp_directory_path() / ("vmus_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        config = root / "tiny.json";
        std::ofstream(config) << test::tiny_run_config().to_json().dump(2);
    }
    ~Workspace() { fs::remove_all(root); }

    std::string path(const std::string& rel) const { return (root / rel).string(); }

    Result cmd(const std::string& sub, std::vector<std::string> extra) const {
        std::vector<std::string> args{sub, "--config", config.string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return run(args);
    }
};

}  // namespace

TEST_CASE("usage errors exit with 1") {
    Workspace ws;
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({"synth", "--bogus"}).code == kExitUsage);
    CHECK(run({"synth", "--seed", "abc"}).code == kExitUsage);
    CHECK(run({"train", "--manifest", ws.path("m.jsonl")}).code == kExitUsage);
    CHECK(run({"train", "--stage", "3"}).code == kExitUsage);
    CHECK(run({"eval", "--rhythm-source", "nowhere"}).code == kExitUsage);
    CHECK(run({"ablate", "--manifest", ws.path("a"), "--test-manifest", ws.path("b")}).code == kExitUsage);
    std::ofstream(ws.root / "bad.json") << R"({"scenario": {"unknown_key": 1}})";
    CHECK(run({"synth", "--config", ws.path("bad.json")}).code == kExitUsage);
    std::ofstream(ws.root / "broken.json") << "{";
    CHECK(run({"synth", "--config", ws.path("broken.json")}).code == kExitUsage);
    CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("stage 2 without a stage-1 checkpoint is refused and leaves no output") {
    Workspace ws;
    REQUIRE(ws.cmd("synth", {"--out", ws.path("data")}).code == kExitOk);
    const Result r = ws.cmd("train", {"--stage", "2", "--manifest", ws.path("data/train.jsonl"), "--out", ws.path("s2")});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("stage-1 checkpoint") != std::string::npos);
    CHECK(!fs::exists(ws.path("s2")));
    // A stage-0 checkpoint is the wrong input for stage 2.
    REQUIRE(ws.cmd("pretrain", {"--manifest", ws.path("data/train.jsonl"), "--out", ws.path("s0")}).code == kExitOk);
    const Result wrong = ws.cmd("train", {"--stage", "2", "--manifest", ws.path("data/train.jsonl"), "--ckpt",
                                          ws.path("s0/stage0.vmus"), "--out", ws.path("s2")});
    CHECK(wrong.code == kExitUsage);
    CHECK(!fs::exists(ws.path("s2")));
}

TEST_CASE("runtime failures exit with 2 and remove partial outputs") {
    Workspace ws;
    std::ofstream(ws.root / "empty.jsonl") << "{\"clip_id\": 1}\n";
    const Result r = ws.cmd("pretrain", {"--manifest", ws.path("empty.jsonl"), "--out", ws.path("p")});
    CHECK(r.code != kExitOk);
    CHECK(!fs::exists(ws.path("p")));
    const Result missing = ws.cmd("eval", {"--ckpt", ws.path("nope.vmus"), "--manifest", ws.path("empty.jsonl"),
                                           "--out", ws.path("e")});
    CHECK(missing.code == kExitFailure);
    CHECK(!fs::exists(ws.path("e")));
}

TEST_CASE("synth is deterministic") {
    Workspace ws;
    REQUIRE(run({"synth", "--config", ws.config.string(), "--seed", "11", "--out", ws.path("a")}).code == kExitOk);
    REQUIRE(run({"synth", "--config", ws.config.string(), "--seed", "11", "--out", ws.path("b")}).code == kExitOk);
    const auto a = outputs(ws.path("a")), b = outputs(ws.path("b"));
    CHECK(a.size() == 2 + 2 * 6);
    CHECK(a == b);
    REQUIRE(run({"synth", "--config", ws.config.string(), "--seed", "12", "--out", ws.path("c")}).code == kExitOk);
    CHECK(outputs(ws.path("c")) != a);
    const auto cfg = nlohmann::json::parse(slurp(ws.root / "a" / "config.json"));
    CHECK(cfg.at("seed") == 11);
    CHECK(cfg.at("command") == "synth");
}

TEST_CASE("flags override the config file which overrides defaults") {
    Workspace ws;
    REQUIRE(ws.cmd("synth", {"--out", ws.path("d"), "--n-test", "1"}).code == kExitOk);
    const auto cfg = nlohmann::json::parse(slurp(ws.root / "d" / "config.json"));
    CHECK(cfg["scenario"]["n_test"] == 1);
    CHECK(cfg["scenario"]["n_train"] == test::tiny_run_config().n_train);
    CHECK(cfg["train"]["stage2"]["epochs"] == test::tiny_run_config().stage2.epochs);
    CHECK(cfg["eval"]["tol"] == 0.1);
}

TEST_CASE("ground-truth evaluation scores perfectly") {
    Workspace ws;
    REQUIRE(run({"synth", "--out", ws.path("data"), "--n-train", "4", "--n-test", "16"}).code == kExitOk);
    const Result r = run({"eval", "--ground-truth", "--manifest", ws.path("data/test.jsonl"), "--out", ws.path("gt")});
    REQUIRE(r.code == kExitOk);
    const auto report = nlohmann::json::parse(slurp(ws.root / "gt" / "report.json"));
    CHECK(report["aggregate"]["mean_rhythm_recall"] == 1.0);
    CHECK(report["aggregate"]["semantic_proxy_accuracy"] == 1.0);
    CHECK(report["aggregate"]["n_clips"] == 16);
}

TEST_CASE("every subcommand reproduces its outputs from the saved config") {
    Workspace ws;
    auto rerun = [&](const std::string& sub, const std::string& dir) {
        const fs::path saved = ws.root / dir / "config.json";
        const Result r = run({sub, "--config", saved.string(), "--out", ws.path(dir + "_again")});
        REQUIRE_MESSAGE(r.code == kExitOk, sub << ": " << r.err);
        CHECK_MESSAGE(outputs(ws.path(dir)) == outputs(ws.path(dir + "_again")), sub);
        auto a = nlohmann::json::parse(slurp(saved));
        auto b = nlohmann::json::parse(slurp(ws.root / (dir + "_again") / "config.json"));
        a.erase("out");
        b.erase("out");
        CHECK(a == b);
    };
    const std::string train = ws.path("data/train.jsonl"), held = ws.path("data/test.jsonl");
    REQUIRE(ws.cmd("synth", {"--out", ws.path("data")}).code == kExitOk);
    rerun("synth", "data");
    REQUIRE(ws.cmd("pretrain", {"--manifest", train, "--out", ws.path("s0")}).code == kExitOk);
    rerun("pretrain", "s0");
    REQUIRE(ws.cmd("train", {"--stage", "1", "--manifest", train, "--ckpt", ws.path("s0/stage0.vmus"), "--out",
                             ws.path("s1")})
                .code == kExitOk);
    rerun("train", "s1");
    const Result s2 = ws.cmd("train", {"--stage", "2", "--manifest", train, "--ckpt", ws.path("s1/stage1.vmus"),
                                       "--out", ws.path("s2")});
    REQUIRE(s2.code == kExitOk);
    CHECK(s2.out.find("step-0 max logit change: 0\n") != std::string::npos);
    rerun("train", "s2");
    REQUIRE(ws.cmd("train", {"--stage", "2", "--single-stage", "--manifest", train, "--ckpt",
                             ws.path("s0/stage0.vmus"), "--out", ws.path("ss")})
                .code == kExitOk);
    rerun("train", "ss");
    const std::string clip = ws.path("data/clips/test-0000.features.vmus");
    REQUIRE(fs::exists(clip));
    REQUIRE(ws.cmd("generate", {"--ckpt", ws.path("s2/stage2.vmus"), "--clip", clip, "--out", ws.path("gen")}).code ==
            kExitOk);
    rerun("generate", "gen");
    REQUIRE(ws.cmd("generate", {"--ckpt", ws.path("s2/stage2.vmus"), "--clip", clip, "--sampling", "top-k", "--out",
                                ws.path("gen_k")})
                .code == kExitOk);
    rerun("generate", "gen_k");
    REQUIRE(ws.cmd("eval", {"--ckpt", ws.path("s2/stage2.vmus"), "--manifest", held, "--jobs", "2", "--out",
                            ws.path("ev")})
                .code == kExitOk);
    rerun("eval", "ev");
    REQUIRE(ws.cmd("eval", {"--ckpt", ws.path("s2/stage2.vmus"), "--manifest", held, "--jobs", "1", "--out",
                            ws.path("ev1")})
                .code == kExitOk);
    CHECK(outputs(ws.path("ev")) == outputs(ws.path("ev1")));
    const Result sim = ws.cmd("analyze-sim", {"--clip", clip, "--out", ws.path("sim")});
    REQUIRE(sim.code == kExitOk);
    CHECK(slurp(ws.root / "sim" / "test-0000.sim.csv").rfind("frame,global_sim,local_sim\n", 0) == 0);
    rerun("analyze-sim", "sim");
    const Result ab = ws.cmd("ablate", {"--grid", "--manifest", train, "--test-manifest", held, "--ckpt",
                                        ws.path("s0/stage0.vmus"), "--out", ws.path("ab")});
    REQUIRE_MESSAGE(ab.code == kExitOk, ab.err);
    CHECK(fs::exists(ws.root / "ab" / "ablation.md"));
    rerun("ablate", "ab");
}
