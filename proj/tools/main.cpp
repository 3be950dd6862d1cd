#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "trackrank/config.hpp"
#include "trackrank/gradsuite.hpp"

using namespace trackrank;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config_path;
    int64_t seed = -1;  // flag sentinel; >= 0 overrides the config seed
    std::string out;
    bool json_out = false;
    bool force = false;
    bool rerank = false;
    std::string head;
    std::string readout;
    double tolerance = 1e-4;
    int seeds = 20;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RunConfig load_config(const Options& o) {
    RunConfig rc = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    if (o.seed >= 0) rc.seed = static_cast<uint64_t>(o.seed);
    if (!o.out.empty()) rc.output_dir = o.out;
    if (!o.head.empty()) {
        const int64_t hidden = rc.train.head.rnn.hidden;
        rc.train.head = head_config_from_name(expand_head_name(o.head));
        rc.train.head.rnn.hidden = hidden;
    }
    if (!o.readout.empty()) {
        const std::string name = head_name(rc.train.head);
        if (name.rfind("rnn_", 0) != 0)
            throw IoError("cli: --readout applies only to rnn heads, current head is " + name);
        std::string suffix;
        if (o.readout == "final_state" || o.readout == "final")
            suffix = "final";
        else if (o.readout == "output_average" || o.readout == "avg")
            suffix = "avg";
        else
            throw IoError("cli: --readout must be final_state or output_average, got '" + o.readout + "'");
        const std::string cell = name.substr(4, name.rfind('_') - 4);
        const int64_t hidden = rc.train.head.rnn.hidden;
        rc.train.head = head_config_from_name("rnn_" + cell + "_" + suffix);
        rc.train.head.rnn.hidden = hidden;
    }
    apply_seed(rc);
    return rc;
}

// refuses to touch a non-empty directory unless forced; keep=true trusts it
void prepare_out_dir(const std::string& dir, bool force, bool keep = false) {
    if (dir.empty()) throw IoError("cli: an output directory is required (config output_dir or --out)");
    if (fs::exists(dir) && !fs::is_empty(dir) && !keep) {
        if (!force) throw IoError("cli: output dir " + dir + " is not empty (pass --force to overwrite)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cli: cannot open " + path.string());
    f << text;
}

struct LoadedData {
    Dataset train, query, gallery;
    bool has_train = false, has_eval = false;
};

LoadedData obtain_data(const RunConfig& rc, bool need_train, bool need_eval) {
    if (rc.synth && rc.data) throw IoError("cli: config provides both synth and data sections; pick one");
    LoadedData d;
    if (rc.synth) {
        SyntheticData s = generate_synthetic(*rc.synth);
        d.train = std::move(s.train);
        d.query = std::move(s.query);
        d.gallery = std::move(s.gallery);
        d.has_train = d.has_eval = true;
    } else if (rc.data) {
        if (rc.data->query.empty() != rc.data->gallery.empty())
            throw IoError("cli: data.query and data.gallery must be given together");
        if (!rc.data->train.empty()) {
            d.train = load_dataset(rc.data->train);
            d.has_train = true;
        }
        if (!rc.data->query.empty()) {
            d.query = load_dataset(rc.data->query);
            d.gallery = load_dataset(rc.data->gallery);
            d.has_eval = true;
        }
    } else {
        throw IoError("cli: config needs a synth or data section");
    }
    if (need_train && !d.has_train) throw IoError("cli: a training dataset is required (synth or data.train)");
    if (need_eval && !d.has_eval) throw IoError("cli: query/gallery datasets are required");
    return d;
}

json eval_report(const TrainState& state, const Dataset& query, const Dataset& gallery, const TrainConfig& tc,
                 const RerankConfig* rr) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto q = encode_dataset(query, state.encoder, tc.sampler.T, tc.eval_drop_padded);
    const auto g = encode_dataset(gallery, state.encoder, tc.sampler.T, tc.eval_drop_padded);
    Tensor qg = distance_matrix(q, g);
    if (rr) qg = rerank(qg, distance_matrix(g, g), distance_matrix(q, q), *rr);
    const RetrievalResult res = evaluate(qg, q, g);
    json report = metrics_json(res, tc.eval_ranks, seconds_since(t0));
    report["reranked"] = rr != nullptr;
    return report;
}

void print_metrics_table(const json& report, const std::vector<int>& ranks) {
    std::printf("%-10s %10s\n", "metric", "value");
    std::printf("%-10s %10.4f\n", "mAP", report.at("map").get<double>());
    for (const int r : ranks)
        std::printf("rank-%-5d %10.4f\n", r, report.at("cmc").at(std::to_string(r)).get<double>());
    std::printf("%-10s %10lld\n", "valid", static_cast<long long>(report.at("num_valid_queries").get<int64_t>()));
    std::printf("%-10s %10lld\n", "skipped",
                static_cast<long long>(report.at("num_skipped_queries").get<int64_t>()));
    std::printf("%-10s %10.3f\n", "runtime_s", report.at("runtime_seconds").get<double>());
}

int cmd_synth(const Options& o) {
    RunConfig rc = load_config(o);
    SynthConfig sc = rc.synth.value_or(SynthConfig{});
    sc.seed = rc.seed;
    const SyntheticData data = generate_synthetic(sc);  // validates before any writes
    prepare_out_dir(rc.output_dir, o.force);
    const fs::path dir = rc.output_dir;
    write_dataset(data.train, dir, "train");
    write_dataset(data.query, dir, "query");
    write_dataset(data.gallery, dir, "gallery");
    rc.synth = sc;
    json echo = run_config_json(rc);
    echo.erase("output_dir");  // self-referential; two seeded runs must be byte-identical
    echo.erase("checkpoint");
    write_text(dir / "config.json", echo.dump(2) + "\n");
    const json summary = {{"output_dir", rc.output_dir},
                          {"train_tracklets", data.train.tracklets.size()},
                          {"query_tracklets", data.query.tracklets.size()},
                          {"gallery_tracklets", data.gallery.tracklets.size()},
                          {"identities_per_split", sc.num_identities},
                          {"seed", sc.seed}};
    if (o.json_out) {
        std::cout << summary.dump(2) << "\n";
    } else {
        std::printf("wrote %s: %zu train / %zu query / %zu gallery tracklets (%lld ids per split, seed %llu)\n",
                    rc.output_dir.c_str(), data.train.tracklets.size(), data.query.tracklets.size(),
                    data.gallery.tracklets.size(), static_cast<long long>(sc.num_identities),
                    static_cast<unsigned long long>(sc.seed));
    }
    return 0;
}

int cmd_train(const Options& o) {
    RunConfig rc = load_config(o);
    const TrainConfig tc = rc.train;
    LoadedData d = obtain_data(rc, true, false);

    const fs::path dir = rc.output_dir.empty()
                             ? throw IoError("cli: an output directory is required (config output_dir or --out)")
                             : fs::path(rc.output_dir);
    const fs::path ckpt = dir / "checkpoint";
    const bool resuming = rc.resume && fs::exists(ckpt / "checkpoint.json");
    TrainState state = resuming ? load_checkpoint(ckpt, tc) : init_train_state(tc, d.train);
    if (resuming) {
        const FrameLayout& l = state.encoder.input;
        if (l.w != d.train.layout.w || l.h != d.train.layout.h || l.c != d.train.layout.c)
            throw IoError("cli: checkpoint frame layout differs from the training dataset's");
        if (state.classifier.w.dim(1) != d.train.num_identities())
            throw IoError("cli: checkpoint classifier width differs from the dataset identity count");
    }

    prepare_out_dir(rc.output_dir, o.force, resuming);
    EvalData ev{};
    if (d.has_eval) ev = EvalData{&d.query, &d.gallery};
    std::vector<json> log;
    const auto t0 = std::chrono::steady_clock::now();
    train(state, d.train, tc, ev, log);
    const double train_seconds = seconds_since(t0);

    std::ofstream lf(dir / "log.jsonl", resuming ? std::ios::app : std::ios::trunc);
    if (!lf) throw IoError("cli: cannot open " + (dir / "log.jsonl").string());
    for (const auto& rec : log) lf << rec.dump() << "\n";
    lf.close();
    save_checkpoint(ckpt, state, tc);
    write_text(dir / "config.json", run_config_json(rc).dump(2) + "\n");

    json report;
    if (d.has_eval) {
        report = eval_report(state, d.query, d.gallery, tc, nullptr);
        write_text(dir / "metrics.json", report.dump(2) + "\n");
    }
    if (o.json_out) {
        json out = {{"steps", state.step}, {"train_seconds", train_seconds}, {"output_dir", rc.output_dir}};
        if (!report.is_null()) out["metrics"] = report;
        std::cout << out.dump(2) << "\n";
    } else {
        std::printf("trained %s to step %lld in %.2fs\n", head_name(tc.head).c_str(),
                    static_cast<long long>(state.step), train_seconds);
        if (!report.is_null()) print_metrics_table(report, tc.eval_ranks);
    }
    return 0;
}

int cmd_eval(const Options& o) {
    RunConfig rc = load_config(o);
    const TrainConfig tc = rc.train;
    LoadedData d = obtain_data(rc, false, true);
    const fs::path ckpt = rc.checkpoint.empty() ? fs::path(rc.output_dir) / "checkpoint" : fs::path(rc.checkpoint);
    const TrainState state = load_checkpoint(ckpt, tc);
    const json report = eval_report(state, d.query, d.gallery, tc, o.rerank ? &rc.rerank : nullptr);
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_text(fs::path(o.out) / "metrics.json", report.dump(2) + "\n");
    }
    if (o.json_out)
        std::cout << report.dump(2) << "\n";
    else
        print_metrics_table(report, tc.eval_ranks);
    return 0;
}

int cmd_gradcheck(const Options& o) {
    if (!o.config_path.empty()) (void)load_run_config(o.config_path);  // strict-validate even when unused
    const std::vector<std::string> heads =
        o.head.empty() ? all_head_names() : std::vector<std::string>{expand_head_name(o.head)};
    const auto rows = run_gradsuite(heads, o.seeds, o.tolerance);
    bool all_pass = true;
    for (const auto& r : rows) all_pass &= r.pass;
    if (o.json_out) {
        json arr = json::array();
        for (const auto& r : rows)
            arr.push_back({{"head", r.head},
                           {"loss", r.loss},
                           {"seeds", r.seeds},
                           {"max_rel_err", r.max_rel_err},
                           {"pass", r.pass}});
        std::cout << json({{"tolerance", o.tolerance}, {"rows", arr}, {"all_pass", all_pass}}).dump(2) << "\n";
    } else {
        std::printf("%-18s %-14s %6s %13s %6s\n", "head", "loss", "seeds", "max_rel_err", "pass");
        for (const auto& r : rows)
            std::printf("%-18s %-14s %6d %13.3e %6s\n", r.head.c_str(), r.loss.c_str(), r.seeds, r.max_rel_err,
                        r.pass ? "yes" : "NO");
    }
    return all_pass ? 0 : 1;
}

int cmd_compare(const Options& o) {
    RunConfig rc = load_config(o);
    if (!rc.synth) throw IoError("cli: compare needs a synth section (fresh data per seed)");
    CompareConfig cc = rc.compare;
    if (cc.heads.empty()) cc.heads = all_head_names();
    if (cc.seeds.empty()) cc.seeds = {rc.seed};
    TrainConfig base = rc.train;
    if (cc.steps > 0) base.steps = cc.steps;

    struct Row {
        std::string name;
        TrainConfig tc;
        std::vector<double> maps;
        std::map<int, std::vector<double>> cmcs;
    };
    std::vector<Row> rows;
    for (const auto& h : cc.heads) {
        Row r{h, base, {}, {}};
        const int64_t hidden = base.head.rnn.hidden;
        r.tc.head = head_config_from_name(h);
        r.tc.head.rnn.hidden = hidden;
        r.tc.head.attention.d_t = base.head.attention.d_t;
        r.tc.head.attention.temporal_kernel = base.head.attention.temporal_kernel;
        r.tc.head.attention.literal_eq1 = base.head.attention.literal_eq1;
        rows.push_back(std::move(r));
    }
    if (cc.baseline) {
        Row r{"baseline_t1", base, {}, {}};
        r.tc.head = head_config_from_name("pool_avg");
        r.tc.sampler.T = 1;  // the single-frame image baseline
        rows.push_back(std::move(r));
    }

    for (const uint64_t seed : cc.seeds) {
        SynthConfig sc = *rc.synth;
        sc.seed = seed;
        const SyntheticData data = generate_synthetic(sc);
        for (auto& r : rows) {
            TrainConfig tc = r.tc;
            tc.seed = seed;
            tc.sampler.seed = seed;
            TrainState st = init_train_state(tc, data.train);
            std::vector<json> log;
            train(st, data.train, tc, {}, log);
            const auto q = encode_dataset(data.query, st.encoder, tc.sampler.T, tc.eval_drop_padded);
            const auto g = encode_dataset(data.gallery, st.encoder, tc.sampler.T, tc.eval_drop_padded);
            const RetrievalResult res = evaluate(distance_matrix(q, g), q, g);
            r.maps.push_back(res.map);
            const int64_t G = static_cast<int64_t>(res.cmc.size());
            for (const int rank : tc.eval_ranks)
                r.cmcs[rank].push_back(res.cmc[static_cast<size_t>(std::min<int64_t>(rank, G) - 1)]);
        }
    }

    const auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    json out = {{"seeds", cc.seeds}, {"steps", base.steps}, {"rows", json::array()}};
    double pool_map = -1.0, baseline_map = -1.0;
    for (const auto& r : rows) {
        json cmc = json::object();
        for (const auto& [rank, vals] : r.cmcs) cmc[std::to_string(rank)] = mean(vals);
        out["rows"].push_back(
            {{"head", r.name}, {"map", mean(r.maps)}, {"map_per_seed", r.maps}, {"cmc", cmc}});
        if (r.name == "pool_avg") pool_map = mean(r.maps);
        if (r.name == "baseline_t1") baseline_map = mean(r.maps);
    }
    if (pool_map >= 0 && baseline_map >= 0)
        out["trend"] = {{"pool_avg_map", pool_map},
                        {"baseline_t1_map", baseline_map},
                        {"satisfied", pool_map >= baseline_map}};

    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_text(fs::path(o.out) / "compare.json", out.dump(2) + "\n");
    }
    if (o.json_out) {
        std::cout << out.dump(2) << "\n";
    } else {
        std::printf("%-18s %8s", "head", "mAP");
        for (const int rank : base.eval_ranks) std::printf(" %7s", ("R" + std::to_string(rank)).c_str());
        std::printf("\n");
        for (const auto& r : out["rows"]) {
            std::printf("%-18s %8.4f", r["head"].get<std::string>().c_str(), r["map"].get<double>());
            for (const int rank : base.eval_ranks)
                std::printf(" %7.4f", r["cmc"][std::to_string(rank)].get<double>());
            std::printf("\n");
        }
        if (out.contains("trend"))
            std::printf("trend: pool_avg %.4f vs baseline_t1 %.4f -> %s\n", pool_map, baseline_map,
                        out["trend"]["satisfied"].get<bool>() ? "satisfied" : "NOT satisfied");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trackrank: temporal feature aggregation for video re-id, trained and scored at desk scale"};
    app.require_subcommand(1);
    Options o;

    const auto add_common = [&](CLI::App* c) {
        c->add_option("--config", o.config_path, "JSON run config (flags override its keys)");
        c->add_option("--seed", o.seed, "seed override (>= 0)")->check(CLI::NonNegativeNumber);
        c->add_option("--out", o.out, "output directory override");
        c->add_flag("--json", o.json_out, "machine-readable stdout");
        c->add_flag("--force", o.force, "overwrite a non-empty output dir");
    };

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset (train/query/gallery)");
    add_common(synth);
    auto* train = app.add_subcommand("train", "train a temporal head and checkpoint it");
    add_common(train);
    train->add_option("--head", o.head, "head name (pool_avg, att_conv_sigmoid, rnn_gru_final, ...)");
    train->add_option("--readout", o.readout, "rnn readout: final_state | output_average");
    auto* eval = app.add_subcommand("eval", "score a checkpoint on query/gallery splits");
    add_common(eval);
    eval->add_flag("--rerank", o.rerank, "apply k-reciprocal re-ranking");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks for every head and loss");
    add_common(gradcheck);
    gradcheck->add_option("--head", o.head, "check a single head");
    gradcheck->add_option("--tolerance", o.tolerance, "max relative error")->check(CLI::PositiveNumber);
    gradcheck->add_option("--seeds", o.seeds, "random instances per row")->check(CLI::PositiveNumber);
    auto* compare = app.add_subcommand("compare", "train every head on one dataset and tabulate metrics");
    add_common(compare);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) return cmd_synth(o);
        if (train->parsed()) return cmd_train(o);
        if (eval->parsed()) return cmd_eval(o);
        if (gradcheck->parsed()) return cmd_gradcheck(o);
        return cmd_compare(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
