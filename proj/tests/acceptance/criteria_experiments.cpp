// Criteria that train small models on the synthetic corpora and go through
// the command layer, as a user of the CLI would.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "criteria.hpp"

#include "trime/commands.hpp"
#include "trime/error.hpp"
#include "trime/parallel.hpp"
#include "trime/synthetic.hpp"

using namespace trime;
namespace fs = std::filesystem;

namespace acceptance {
namespace {

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string bytes(const fs::path& p) { return read_text_file(p); }

std::vector<double> read_f64(const fs::path& p) {
    const std::string raw = bytes(p);
    std::vector<double> out(raw.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(raw[i * 8 + b]);
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

ExperimentConfig generated(const std::string& kind, const fs::path& dir, std::uint64_t corpus_seed) {
    cmd_generate(kind, dir, corpus_seed);
    return ExperimentConfig::load(dir / "experiment.cfg");
}

fs::path train_into(ExperimentConfig cfg, const fs::path& out) {
    fs::remove_all(out);
    cfg.out_dir = out.string();
    cmd_train(cfg);
    return out / "model.ckpt";
}

// ---------------------------------------------------------------------------
// 7. local memory helps on copy positions

// True for targets inside the second copy of a "prefix ▸ prefix" line.
std::vector<bool> copy_positions(const Corpus& test, const Vocab& vocab) {
    std::vector<bool> mask;
    for (const Document& doc : test) {
        bool in_copy = false;
        for (std::size_t i = 1; i < doc.tokens.size(); ++i) {
            const std::string& prev = vocab.token(doc.tokens[i - 1]);
            const std::string& cur = vocab.token(doc.tokens[i]);
            if (prev == "\n") in_copy = false;
            if (i >= 2 && vocab.token(doc.tokens[i - 2]) == kCopyMarker && prev == " ") in_copy = true;
            mask.push_back(in_copy && cur != "\n");
        }
    }
    return mask;
}

Outcome copy_task(const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig base = generated("copy", work / "copy", 1);
    const Workspace ws = Workspace::load(base);
    const auto mask = copy_positions(ws.test, ws.vocab);
    const auto copy_count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));

    std::vector<double> improvements;
    std::ostringstream per_seed;
    double slowest = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        double nll[2]{};
        for (int trained_with_memory = 0; trained_with_memory < 2; ++trained_with_memory) {
            ExperimentConfig cfg = base;
            cfg.set_seed(seed);
            cfg.train.total_steps = 2000;
            cfg.log_every = 500;
            cfg.train.instantiation = trained_with_memory ? std::optional{Instantiation::trime} : std::nullopt;
            const fs::path run = work / "copy" / fmt("seed%llu_%s", static_cast<unsigned long long>(seed),
                                                     trained_with_memory ? "trime" : "vanilla");
            const auto t_train = std::chrono::steady_clock::now();
            const fs::path ckpt = train_into(cfg, run);
            slowest = std::max(slowest, seconds_since(t_train));

            EvalRequest req;
            req.checkpoint = ckpt;
            req.mode = trained_with_memory ? EvalMode::trime : EvalMode::vanilla;
            req.report = run / "report.json";
            req.per_token = run / "nll.f64";
            cmd_eval(cfg, req);
            const auto per_token = read_f64(run / "nll.f64");
            if (per_token.size() != mask.size()) return {false, "per-token dump does not match the test split"};
            double sum = 0.0;
            for (std::size_t i = 0; i < mask.size(); ++i) sum += mask[i] ? per_token[i] : 0.0;
            nll[trained_with_memory] = sum / static_cast<double>(copy_count);
        }
        const double improvement = 1.0 - nll[1] / nll[0];
        improvements.push_back(improvement);
        per_seed << (seed > 1 ? "; " : "") << fmt("seed %llu %.3f vs %.3f", static_cast<unsigned long long>(seed),
                                                  nll[1], nll[0]);
    }
    const double med = median(improvements);
    return {med >= 0.05, fmt("copy-position NLL (%zu positions) trime vs vanilla: ", copy_count) + per_seed.str() +
                             fmt("; median improvement %.1f%%; slowest training %.0f s; total %.0f s", 100 * med,
                                 slowest, seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 8. interpolated baselines on a vanilla checkpoint

Outcome baselines(const fs::path& work) {
    ExperimentConfig cfg = generated("dupfamily", work / "base", 2);
    cfg.train.instantiation.reset();
    cfg.train.total_steps = 600;
    cfg.log_every = 200;
    const fs::path ckpt = train_into(cfg, work / "base" / "vanilla");
    const fs::path ds = work / "base" / "datastore.bin";
    cmd_build_datastore(cfg, ckpt, "train", ds, true);

    auto run = [&](EvalMode mode, std::vector<double> lambdas, std::vector<double> taus) {
        ExperimentConfig c = cfg;
        c.grid.lambda = std::move(lambdas);
        c.grid.tau_prime = std::move(taus);
        c.grid.long_memory_tokens = {0, 128, 512};
        EvalRequest req;
        req.checkpoint = ckpt;
        req.mode = mode;
        req.datastore = ds;
        return cmd_eval(c, req);
    };
    const double plain = run(EvalMode::vanilla, {0.0}, {1.0}).at("nll").get<double>();

    std::ostringstream out;
    out << fmt("plain test NLL %.4f", plain);
    bool pass = true;
    for (EvalMode mode : {EvalMode::cache, EvalMode::knnlm}) {
        const auto zero = run(mode, {0.0}, {0.5, 1.0, 2.0});
        const auto tuned = run(mode, {0.05, 0.1, 0.25, 0.5}, {0.5, 1.0, 2.0});
        const double z = zero.at("nll").get<double>();
        const double t = tuned.at("nll").get<double>();
        const bool identity = std::abs(z - plain) <= 1e-9;
        const bool changes = std::abs(t - plain) > 1e-6;
        pass = pass && identity && changes;
        out << fmt("; %s: lambda=0 diff %.1e, tuned (tau'=%g lambda=%g) NLL %.4f", to_string(mode).c_str(),
                   std::abs(z - plain), tuned.at("config").at("tau_prime").get<double>(),
                   tuned.at("config").at("lambda").get<double>(), t);
    }
    return {pass, out.str()};
}

// ---------------------------------------------------------------------------
// 9. exact duplicates are retrieved

Outcome exact_retrieval(const fs::path& work) {
    ExperimentConfig cfg = generated("dupexact", work / "exact", 3);
    cfg.train.total_steps = 1000;
    cfg.log_every = 250;
    cfg.grid.tau = {1.0};
    cfg.grid.tau_prime = {1.0};
    cfg.grid.lambda = {0.25};
    cfg.grid.long_memory_tokens = {0};
    const fs::path ckpt = train_into(cfg, work / "exact" / "run");
    const fs::path ds = work / "exact" / "datastore.bin";
    cmd_build_datastore(cfg, ckpt, "train", ds, true);
    EvalRequest req;
    req.checkpoint = ckpt;
    req.mode = EvalMode::trime_ext;
    req.datastore = ds;
    const auto report = cmd_eval(cfg, req);

    std::vector<double> acc;
    std::ostringstream out;
    for (const auto& r : report.at("retrieval_accuracy")) {
        acc.push_back(r.at("accuracy").get<double>());
        out << (acc.size() > 1 ? ", " : "") << fmt("@%zu %.4f", r.at("k").get<std::size_t>(), acc.back());
    }
    const bool monotone = std::is_sorted(acc.begin(), acc.end());
    const bool top1 = !acc.empty() && acc.front() >= 0.9;
    return {monotone && top1 && acc.size() == 4,
            "retrieval accuracy on test (all documents duplicated in train): " + out.str() +
                (monotone ? "; monotone in K" : "; NOT monotone")};
}

// ---------------------------------------------------------------------------
// 10. dropping local memory during training helps external-memory evaluation

Outcome local_dropout(const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig base = generated("dupfamily", work / "drop", 1);
    std::vector<double> nll[2];
    std::ostringstream out;
    std::size_t agree = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        for (int i = 0; i < 2; ++i) {
            ExperimentConfig cfg = base;
            cfg.set_seed(seed);
            cfg.train.local_drop_prob = i == 0 ? 0.0 : 0.9;
            cfg.train.total_steps = 1500;
            cfg.log_every = 500;
            cfg.grid.tau = {0.5, 1.0, 2.0};
            cfg.grid.tau_prime = {0.5, 1.0, 2.0};
            cfg.grid.lambda = {0.0, 0.1, 0.25, 0.5};
            cfg.grid.long_memory_tokens = {0, 128};
            const fs::path run = work / "drop" / fmt("seed%llu_p%d", static_cast<unsigned long long>(seed), i ? 9 : 0);
            const fs::path ckpt = train_into(cfg, run);
            cmd_build_datastore(cfg, ckpt, "train", run / "datastore.bin", true);
            EvalRequest req;
            req.checkpoint = ckpt;
            req.split = "dev";
            req.mode = EvalMode::trime_ext;
            req.datastore = run / "datastore.bin";
            nll[i].push_back(cmd_eval(cfg, req).at("mean_nll").get<double>());
        }
        agree += nll[0].back() > nll[1].back() ? 1 : 0;
        out << (seed > 1 ? "; " : "")
            << fmt("seed %llu p=0 %.4f, p=0.9 %.4f", static_cast<unsigned long long>(seed), nll[0].back(),
                   nll[1].back());
    }
    const double m0 = median(nll[0]), m9 = median(nll[1]);
    const double secs = seconds_since(t0);
    return {m0 > m9 && secs < 7200.0,
            "dev NLL with external memory: " + out.str() +
                fmt("; median p=0 %.4f vs p=0.9 %.4f; p=0.9 better on %zu/3 seeds; %.0f s", m0, m9, agree, secs)};
}

// ---------------------------------------------------------------------------
// 11. every command is byte-deterministic

Outcome determinism(const fs::path& work) {
    std::vector<std::string> differing;
    std::size_t compared = 0;
    auto compare = [&](const std::string& what, const fs::path& a, const fs::path& b) {
        ++compared;
        if (!fs::exists(a) || !fs::exists(b) || bytes(a) != bytes(b)) differing.push_back(what);
    };

    fs::path dirs[2] = {work / "det" / "a", work / "det" / "b"};
    const std::size_t threads_before = num_threads();
    for (int r = 0; r < 2; ++r) {
        // Different thread counts on the two passes.
        set_num_threads(r == 0 ? 1 : 4);
        fs::remove_all(dirs[r]);
        cmd_generate("dupfamily", dirs[r], 5, 0.25);
        ExperimentConfig cfg = ExperimentConfig::load(dirs[r] / "experiment.cfg");
        cfg.train.total_steps = 60;
        cfg.log_every = 10;
        cfg.grid.tau = {0.5, 1.0};
        cfg.grid.tau_prime = {1.0};
        cfg.grid.lambda = {0.0, 0.25};
        cfg.grid.long_memory_tokens = {0, 64};
        cfg.out_dir = (dirs[r] / "run").string();
        cmd_ingest(cfg);
        cmd_train(cfg);
        const fs::path ckpt = dirs[r] / "run" / "model.ckpt";
        cmd_build_datastore(cfg, ckpt, "train", dirs[r] / "run" / "datastore.bin", false);
        EvalRequest req;
        req.checkpoint = ckpt;
        req.mode = EvalMode::trime_ext;
        req.datastore = dirs[r] / "run" / "datastore.bin";
        req.report = dirs[r] / "run" / "report.json";
        req.per_token = dirs[r] / "run" / "nll.f64";
        cmd_eval(cfg, req);
        AdaptRequest ad;
        ad.checkpoint = ckpt;
        ad.target_train = cfg.data.train;
        ad.target_dev = cfg.data.dev;
        ad.target_test = cfg.data.test;
        ad.report = dirs[r] / "run" / "adapt.json";
        cmd_adapt(cfg, ad);
        cmd_analyze({dirs[r] / "run" / "report.json", dirs[r] / "run" / "adapt.json"}, dirs[r] / "run" / "buckets.csv");
    }
    set_num_threads(threads_before);

    for (const char* f : {"train.txt", "dev.txt", "test.txt"}) compare(f, dirs[0] / f, dirs[1] / f);
    for (const char* f : {"vocab.tsv", "corpus_stats.json", "model.ckpt", "train_state.bin", "train_log.jsonl",
                          "datastore.bin", "report.json", "nll.f64", "adapt.json", "buckets.csv"}) {
        compare(f, dirs[0] / "run" / f, dirs[1] / "run" / f);
    }
    std::string list;
    for (const auto& d : differing) list += (list.empty() ? "" : ", ") + d;
    return {differing.empty(), fmt("%zu output files compared across two runs (1 and 4 threads): ", compared) +
                                   (differing.empty() ? std::string("all identical") : "differ: " + list)};
}

}  // namespace

std::vector<Criterion> experiment_criteria() {
    return {
        {7, "copy task: memory training lowers copy-position NLL", copy_task},
        {8, "cache and kNN-LM baselines on a vanilla checkpoint", baselines},
        {9, "exact duplicates are retrieved by the datastore", exact_retrieval},
        {10, "local-memory dropout helps external-memory evaluation", local_dropout},
        {11, "commands are byte-deterministic", determinism},
    };
}

}  // namespace acceptance
