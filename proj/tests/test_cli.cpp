#include <doctest.h>
#include <json.hpp>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "trackrank/data.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(TRACKRANK_BIN) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::string out;
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
    const int st = pclose(p);
    return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

fs::path case_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("trackrank_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
    auto path = dir / name;
    std::ofstream f(path);
    f << j.dump(2) << "\n";
    return path;
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// a small dataset every identity separates on
json base_config() {
    return {{"seed", 3},
            {"synth",
             {{"num_identities", 6},
              {"tracklets_per_identity", 3},
              {"frames_per_tracklet", 12},
              {"layout", {{"kind", "vector"}, {"dim", 24}}},
              {"sigma_between", 10.0},
              {"sigma_within", 1.0}}},
            {"embed", {{"dim", 24}}},
            {"sampler", {{"P", 3}, {"K", 2}, {"T", 4}}},
            {"train", {{"steps", 60}, {"eval_interval", 30}}},
            {"rerank", {{"k1", 5}, {"k2", 2}, {"lambda", 0.3}}}};
}

}  // namespace

TEST_CASE("cli synth writes loadable manifests and is deterministic per seed") {
    auto dir = case_dir("synth");
    auto cfg = write_config(dir, "run.json", base_config());

    auto r1 = run_cli("synth --config " + cfg.string() + " --out " + (dir / "a").string());
    REQUIRE(r1.exit_code == 0);
    const auto train = trackrank::load_dataset(dir / "a" / "train.json");
    const auto query = trackrank::load_dataset(dir / "a" / "query.json");
    const auto gallery = trackrank::load_dataset(dir / "a" / "gallery.json");
    CHECK(train.tracklets.size() == 18);
    CHECK(query.tracklets.size() == 6);
    CHECK(gallery.tracklets.size() == 12);

    auto r2 = run_cli("synth --config " + cfg.string() + " --out " + (dir / "b").string());
    REQUIRE(r2.exit_code == 0);
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        const auto name = entry.path().filename();
        INFO("file ", name.string());
        CHECK(slurp(entry.path()) == slurp(dir / "b" / name));
    }

    // a different seed changes the payload
    auto r3 = run_cli("synth --config " + cfg.string() + " --seed 9 --out " + (dir / "c").string());
    REQUIRE(r3.exit_code == 0);
    CHECK(slurp(dir / "a" / "train_0000.trkf") != slurp(dir / "c" / "train_0000.trkf"));
}

TEST_CASE("cli synth refuses bad configs and non-empty dirs") {
    auto dir = case_dir("synth_neg");
    json bad = base_config();
    bad["synth"]["sigma_between"] = -1.0;
    auto cfg = write_config(dir, "bad.json", bad);
    auto r = run_cli("synth --config " + cfg.string() + " --out " + (dir / "x").string());
    CHECK(r.exit_code != 0);
    CHECK(r.out.find("sigma_between") != std::string::npos);
    CHECK(!fs::exists(dir / "x"));

    json unknown = base_config();
    unknown["mystery"] = 1;
    auto cfg2 = write_config(dir, "unknown.json", unknown);
    auto r2 = run_cli("synth --config " + cfg2.string() + " --out " + (dir / "y").string());
    CHECK(r2.exit_code != 0);
    CHECK(r2.out.find("mystery") != std::string::npos);

    auto good = write_config(dir, "good.json", base_config());
    REQUIRE(run_cli("synth --config " + good.string() + " --out " + (dir / "z").string()).exit_code == 0);
    auto r3 = run_cli("synth --config " + good.string() + " --out " + (dir / "z").string());
    CHECK(r3.exit_code != 0);
    CHECK(r3.out.find("--force") != std::string::npos);
    CHECK(run_cli("synth --config " + good.string() + " --force --out " + (dir / "z").string()).exit_code == 0);
}

TEST_CASE("cli train reaches mAP 1 on the separable set and logs deterministically") {
    auto dir = case_dir("train");
    auto cfg = write_config(dir, "run.json", base_config());

    auto r1 = run_cli("train --config " + cfg.string() + " --out " + (dir / "a").string());
    REQUIRE(r1.exit_code == 0);
    REQUIRE(fs::exists(dir / "a" / "log.jsonl"));
    const json metrics = json::parse(slurp(dir / "a" / "metrics.json"));
    CHECK(metrics.at("map").get<double>() >= 0.95);
    CHECK(metrics.at("cmc").contains("1"));

    auto r2 = run_cli("train --config " + cfg.string() + " --out " + (dir / "b").string());
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(dir / "a" / "log.jsonl") == slurp(dir / "b" / "log.jsonl"));
}

TEST_CASE("cli train echoes head overrides and rejects missing datasets") {
    auto dir = case_dir("train_neg");
    auto cfg = write_config(dir, "run.json", base_config());
    auto r = run_cli("train --config " + cfg.string() + " --head rnn --readout output_average --out " +
                     (dir / "a").string());
    REQUIRE(r.exit_code == 0);
    const json echo = json::parse(slurp(dir / "a" / "config.json"));
    CHECK(echo.at("train").at("head").get<std::string>() == "rnn_lstm_avg");

    json bad = base_config();
    bad.erase("synth");
    bad["data"] = {{"train", (dir / "absent.json").string()},
                   {"query", (dir / "absent.json").string()},
                   {"gallery", (dir / "absent.json").string()}};
    auto cfg2 = write_config(dir, "bad.json", bad);
    auto r2 = run_cli("train --config " + cfg2.string() + " --out " + (dir / "nope").string());
    CHECK(r2.exit_code != 0);
    CHECK(r2.out.find("absent.json") != std::string::npos);
    CHECK(!fs::exists(dir / "nope"));
}

TEST_CASE("cli resume continues to a byte-identical log") {
    auto dir = case_dir("resume");
    json full = base_config();
    full["train"]["steps"] = 120;
    full["train"]["eval_interval"] = 60;
    json half = full;
    half["train"]["steps"] = 60;
    half["train"]["resume"] = true;
    json cont = full;
    cont["train"]["resume"] = true;
    auto cfg_full = write_config(dir, "full.json", full);
    auto cfg_half = write_config(dir, "half.json", half);
    auto cfg_cont = write_config(dir, "cont.json", cont);

    REQUIRE(run_cli("train --config " + cfg_full.string() + " --out " + (dir / "full").string()).exit_code == 0);
    REQUIRE(run_cli("train --config " + cfg_half.string() + " --out " + (dir / "r").string()).exit_code == 0);
    REQUIRE(run_cli("train --config " + cfg_cont.string() + " --out " + (dir / "r").string()).exit_code == 0);
    CHECK(slurp(dir / "r" / "log.jsonl") == slurp(dir / "full" / "log.jsonl"));
}

TEST_CASE("cli eval reports metrics, rerank with lambda 1 changes nothing, training helps") {
    auto dir = case_dir("eval");
    auto cfg = write_config(dir, "run.json", base_config());
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + (dir / "a").string()).exit_code == 0);

    json evalcfg = base_config();
    evalcfg["checkpoint"] = (dir / "a" / "checkpoint").string();
    auto cfg_eval = write_config(dir, "eval.json", evalcfg);
    auto plain = run_cli("eval --config " + cfg_eval.string() + " --json");
    REQUIRE(plain.exit_code == 0);
    const json plain_report = json::parse(plain.out);
    CHECK(plain_report.at("reranked") == false);
    CHECK(plain_report.contains("map"));
    for (const char* r : {"1", "5", "10", "20"}) CHECK(plain_report.at("cmc").contains(r));

    json l1 = evalcfg;
    l1["rerank"]["lambda"] = 1.0;
    auto cfg_l1 = write_config(dir, "eval_l1.json", l1);
    auto rr = run_cli("eval --config " + cfg_l1.string() + " --rerank --json");
    REQUIRE(rr.exit_code == 0);
    const json rr_report = json::parse(rr.out);
    CHECK(rr_report.at("reranked") == true);
    CHECK(rr_report.at("map") == plain_report.at("map"));

    // an lr=0 run keeps the untrained parameters; its mAP must trail the trained run
    json frozen = base_config();
    frozen["train"]["learning_rate"] = 0.0;
    auto cfg_frozen = write_config(dir, "frozen.json", frozen);
    REQUIRE(run_cli("train --config " + cfg_frozen.string() + " --out " + (dir / "u").string()).exit_code == 0);
    const json untrained = json::parse(slurp(dir / "u" / "metrics.json"));
    const json trained = json::parse(slurp(dir / "a" / "metrics.json"));
    CHECK(untrained.at("map").get<double>() < trained.at("map").get<double>());
}

TEST_CASE("cli gradcheck filters, passes at 1e-4, fails at absurd tolerance") {
    auto one = run_cli("gradcheck --head pool_avg --seeds 2 --json");
    REQUIRE(one.exit_code == 0);
    const json rep = json::parse(one.out);
    REQUIRE(rep.at("rows").size() == 2);
    for (const auto& row : rep.at("rows")) {
        CHECK(row.at("head") == "pool_avg");
        CHECK(row.at("pass") == true);
    }
    auto absurd = run_cli("gradcheck --head pool_avg --seeds 1 --tolerance 1e-12");
    CHECK(absurd.exit_code != 0);
    auto unknown = run_cli("gradcheck --head no_such");
    CHECK(unknown.exit_code != 0);
}

TEST_CASE("cli compare tabulates heads with a baseline row, deterministically") {
    auto dir = case_dir("compare");
    json cfg = base_config();
    cfg["synth"]["num_identities"] = 5;
    cfg["compare"] = {{"heads", {"pool_avg", "att_fc_sigmoid"}}, {"seeds", {1, 2}}, {"steps", 40}};
    auto path = write_config(dir, "cmp.json", cfg);

    auto r1 = run_cli("compare --config " + path.string() + " --json");
    REQUIRE(r1.exit_code == 0);
    const json rep = json::parse(r1.out);
    REQUIRE(rep.at("rows").size() == 3);
    CHECK(rep.at("rows").at(2).at("head") == "baseline_t1");
    CHECK(rep.contains("trend"));
    CHECK(rep.at("trend").contains("satisfied"));
    for (const auto& row : rep.at("rows")) CHECK(row.at("map_per_seed").size() == 2);

    auto r2 = run_cli("compare --config " + path.string() + " --json");
    CHECK(r1.out == r2.out);
}
