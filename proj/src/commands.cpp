#include "trime/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "trime/binary_io.hpp"
#include "trime/error.hpp"
#include "trime/log.hpp"
#include "trime/synthetic.hpp"

namespace trime {

using nlohmann::json;

Workspace Workspace::load(const ExperimentConfig& cfg) {
    if (cfg.data.train.empty()) {
        throw ConfigError("data.train is not set");
    }
    Workspace ws;
    Ingested in = ingest(cfg.data.train, cfg.data.tokenizer);
    ws.vocab = std::move(in.vocab);
    ws.train = std::move(in.corpus);
    if (!cfg.data.dev.empty()) {
        ws.dev = encode_file(cfg.data.dev, cfg.data.tokenizer, ws.vocab);
    }
    if (!cfg.data.test.empty()) {
        ws.test = encode_file(cfg.data.test, cfg.data.tokenizer, ws.vocab);
    }
    return ws;
}

Corpus Workspace::split(const std::string& name, const ExperimentConfig& cfg) const {
    const Corpus* c = name == "train" ? &train : name == "dev" ? &dev : name == "test" ? &test : nullptr;
    if (c != nullptr) {
        if (c->empty()) {
            throw ConfigError("split '" + name + "' is not configured");
        }
        return *c;
    }
    return encode_file(name, cfg.data.tokenizer, vocab);
}

void write_json(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << j.dump(2) << "\n";
}

namespace {

json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw Error("cannot read " + path.string());
    }
    return json::parse(is);
}

std::string file_bytes(const std::filesystem::path& path) { return read_text_file(path); }

Checkpoint load_compatible(const std::filesystem::path& path, const Vocab& vocab) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.config.vocab_size != vocab.size()) {
        throw FormatError("checkpoint vocabulary size " + std::to_string(ck.config.vocab_size) +
                          " does not match the corpus vocabulary (" + std::to_string(vocab.size()) + ")");
    }
    return ck;
}

json config_json(const EvalConfig& c) {
    return {{"mode", to_string(c.mode)},
            {"tau", c.tau},
            {"tau_prime", c.tau_prime},
            {"lambda", c.lambda},
            {"k", c.k},
            {"long_memory_tokens", c.long_memory_tokens},
            {"window", c.window},
            {"stride", c.stride}};
}

void write_per_token(const std::filesystem::path& path, const std::vector<double>& nll) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    for (double v : nll) {
        binio::write_le<double>(os, v);
    }
}

// Tune on dev when requested, evaluate, and attach retrieval accuracy.
json tune_and_evaluate(const ExperimentConfig& cfg, const ModelConfig& model, const ModelParams& params,
                       const Corpus& dev, const Corpus& eval_corpus, EvalConfig ecfg, const Datastore* ds,
                       const Vocab& vocab, const std::string& split_name, bool keep_per_token,
                       std::vector<double>* per_token) {
    json tuning = nullptr;
    if (cfg.tune && !dev.empty() && ecfg.mode != EvalMode::vanilla) {
        const TuneResult tr = tune(model, params, dev, ecfg, cfg.grid, ds);
        ecfg = tr.best;
        tuning = {{"dev_tokens", tr.tokens},
                  {"dev_mean_nll", tr.tokens ? tr.best_nll / static_cast<double>(tr.tokens) : 0.0},
                  {"points", tr.points}};
        log_info("tuned " + to_string(ecfg.mode) + " on dev: " + config_json(ecfg).dump());
    }
    const FreqBuckets buckets = FreqBuckets::from_frequencies(vocab.frequencies());
    const EvalReport rep = evaluate(model, params, eval_corpus, ecfg, ds, &buckets, keep_per_token);
    json j = report_json(rep, split_name, to_string(cfg.data.tokenizer));
    j["tuning"] = tuning;
    if (ds != nullptr && !cfg.retrieval_ks.empty()) {
        const auto acc = retrieval_accuracy(model, params, *ds, eval_corpus, cfg.retrieval_ks, ecfg);
        json arr = json::array();
        for (std::size_t i = 0; i < acc.size(); ++i) {
            arr.push_back({{"k", cfg.retrieval_ks[i]}, {"accuracy", acc[i]}});
        }
        j["retrieval_accuracy"] = arr;
    }
    if (per_token != nullptr) {
        *per_token = rep.per_token_nll;
    }
    return j;
}

}  // namespace

json report_json(const EvalReport& report, const std::string& split, const std::string& tokenizer) {
    json buckets = json::array();
    for (std::size_t b = 0; b < FreqBuckets::kCount; ++b) {
        buckets.push_back({{"label", FreqBuckets::kLabels[b]},
                           {"tokens", report.buckets[b].tokens},
                           {"ppl", report.buckets[b].tokens ? json(report.buckets[b].ppl()) : json(nullptr)}});
    }
    return {{"mode", to_string(report.config.mode)},
            {"split", split},
            {"tokenizer", tokenizer},
            {"tokens", report.tokens},
            {"nll", report.nll},
            {"mean_nll", report.mean_nll()},
            {"ppl", report.ppl()},
            {"bpc", report.bpc()},
            {"config", config_json(report.config)},
            {"buckets", buckets}};
}

json cmd_ingest(const ExperimentConfig& cfg) {
    const Workspace ws = Workspace::load(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    ws.vocab.save(std::filesystem::path(cfg.out_dir) / "vocab.tsv");
    json stats = {{"tokenizer", to_string(cfg.data.tokenizer)},
                  {"vocab_size", ws.vocab.size()},
                  {"train_docs", ws.train.size()},
                  {"train_tokens", token_count(ws.train)},
                  {"dev_docs", ws.dev.size()},
                  {"dev_tokens", token_count(ws.dev)},
                  {"test_docs", ws.test.size()},
                  {"test_tokens", token_count(ws.test)}};
    write_json(std::filesystem::path(cfg.out_dir) / "corpus_stats.json", stats);
    return stats;
}

TrainRun cmd_train(const ExperimentConfig& cfg, bool resume, std::optional<std::size_t> stop_at) {
    const Workspace ws = Workspace::load(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    ws.vocab.save(std::filesystem::path(cfg.out_dir) / "vocab.tsv");
    {
        std::ofstream os(std::filesystem::path(cfg.out_dir) / "experiment.cfg", std::ios::trunc);
        os << cfg.serialize();
    }
    TrainRunOptions opt;
    opt.out_dir = cfg.out_dir;
    opt.resume = resume;
    opt.stop_at = stop_at;
    return run_training(cfg, ws.train, ws.vocab, opt);
}

json cmd_build_datastore(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                         const std::string& split, const std::filesystem::path& out, bool force) {
    if (std::filesystem::exists(out) && !force) {
        throw Error(out.string() + " already exists (use --force to overwrite)");
    }
    const Workspace ws = Workspace::load(cfg);
    const Checkpoint ck = load_compatible(checkpoint, ws.vocab);
    const Corpus corpus = ws.split(split, cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const Datastore ds = build_datastore(ck.config, ck.params, corpus, cfg.eval.window, cfg.eval.stride);
    if (out.has_parent_path()) {
        std::filesystem::create_directories(out.parent_path());
    }
    save_datastore(out, ds);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream msg;
    msg << "datastore: N=" << ds.size() << " d=" << ds.dim << " elapsed=" << std::fixed << std::setprecision(2)
        << secs << "s";
    log_info(msg.str());
    return {{"entries", ds.size()}, {"dim", ds.dim}, {"split", split}, {"pairs", pair_count(corpus)}};
}

json cmd_eval(const ExperimentConfig& cfg, const EvalRequest& req) {
    const Workspace ws = Workspace::load(cfg);
    const Checkpoint ck = load_compatible(req.checkpoint, ws.vocab);
    EvalConfig ecfg = cfg.eval;
    if (req.mode) {
        ecfg.mode = *req.mode;
    }
    std::optional<Datastore> ds;
    if (req.datastore) {
        ds = load_datastore(*req.datastore);
    }
    if (uses_datastore(ecfg.mode) && !ds) {
        throw ConfigError("evaluation mode " + to_string(ecfg.mode) + " needs --datastore");
    }
    std::vector<double> per_token;
    json j = tune_and_evaluate(cfg, ck.config, ck.params, ws.dev, ws.split(req.split, cfg), ecfg,
                               ds ? &*ds : nullptr, ws.vocab, req.split, req.per_token.has_value(),
                               req.per_token ? &per_token : nullptr);
    j["checkpoint"] = req.checkpoint.filename().string();
    if (req.report) {
        write_json(*req.report, j);
    }
    if (req.per_token) {
        write_per_token(*req.per_token, per_token);
    }
    return j;
}

json cmd_adapt(const ExperimentConfig& cfg, const AdaptRequest& req) {
    const std::string before = file_bytes(req.checkpoint);
    const Workspace ws = Workspace::load(cfg);
    const Checkpoint ck = load_compatible(req.checkpoint, ws.vocab);
    const TokenizerMode mode = cfg.data.tokenizer;
    const Corpus target_dev = req.target_dev.empty() ? Corpus{} : encode_file(req.target_dev, mode, ws.vocab);
    const Corpus target_test = encode_file(req.target_test, mode, ws.vocab);

    EvalConfig ecfg = cfg.eval;
    std::optional<Datastore> ds;
    if (req.datastore_source == "none") {
        ecfg.mode = EvalMode::vanilla;
    } else {
        if (!uses_datastore(ecfg.mode)) {
            ecfg.mode = EvalMode::trime_ext;
        }
        Corpus source;
        if (req.datastore_source == "source") {
            source = ws.train;
        } else if (req.datastore_source == "target") {
            source = encode_file(req.target_train, mode, ws.vocab);
        } else {
            throw ConfigError("datastore source must be source, target or none");
        }
        ecfg.datastore_shares_corpus = false;
        ds = build_datastore(ck.config, ck.params, source, ecfg.window, ecfg.stride);
    }
    json j = tune_and_evaluate(cfg, ck.config, ck.params, target_dev, target_test, ecfg, ds ? &*ds : nullptr,
                               ws.vocab, "target_test", false, nullptr);
    j["checkpoint"] = req.checkpoint.filename().string();
    j["datastore_source"] = req.datastore_source;
    if (file_bytes(req.checkpoint) != before) {
        throw Error("checkpoint changed during adaptation");
    }
    if (req.report) {
        write_json(*req.report, j);
    }
    return j;
}

std::string cmd_analyze(const std::vector<std::filesystem::path>& reports,
                        const std::optional<std::filesystem::path>& csv) {
    if (reports.empty()) {
        throw Error("analyze needs at least one report");
    }
    std::vector<json> js;
    for (const auto& p : reports) {
        js.push_back(read_json(p));
    }
    std::ostringstream out;
    out << std::fixed;
    auto name = [&](std::size_t i) { return reports[i].filename().string(); };

    out << std::left << std::setw(28) << "report" << std::setw(12) << "mode" << std::right << std::setw(10)
        << "tokens" << std::setw(12) << "ppl" << std::setw(10) << "bpc" << std::setw(12) << "delta_ppl"
        << std::setw(12) << "delta_bpc" << "\n";
    const double ppl0 = js[0].at("ppl").get<double>();
    const double bpc0 = js[0].at("bpc").get<double>();
    for (std::size_t i = 0; i < js.size(); ++i) {
        const double ppl = js[i].at("ppl").get<double>();
        const double bpc = js[i].at("bpc").get<double>();
        out << std::left << std::setw(28) << name(i) << std::setw(12) << js[i].at("mode").get<std::string>()
            << std::right << std::setw(10) << js[i].at("tokens").get<std::uint64_t>() << std::setprecision(3)
            << std::setw(12) << ppl << std::setprecision(4) << std::setw(10) << bpc << std::setprecision(3)
            << std::setw(12) << ppl - ppl0 << std::setprecision(4) << std::setw(12) << bpc - bpc0 << "\n";
    }

    out << "\nper-frequency-bucket perplexity\n" << std::left << std::setw(28) << "report" << std::right;
    for (const char* label : FreqBuckets::kLabels) {
        out << std::setw(12) << label;
    }
    out << "\n";
    std::string csv_text = "report";
    for (const char* label : FreqBuckets::kLabels) {
        csv_text += std::string(",") + label;
    }
    csv_text += "\n";
    for (std::size_t i = 0; i < js.size(); ++i) {
        out << std::left << std::setw(28) << name(i) << std::right << std::setprecision(3);
        csv_text += name(i);
        const json& b = js[i].at("buckets");
        for (std::size_t k = 0; k < FreqBuckets::kCount; ++k) {
            const json& v = b.at(k).at("ppl");
            if (v.is_null()) {
                out << std::setw(12) << "-";
                csv_text += ",";
                continue;
            }
            const double ppl = v.get<double>();
            out << std::setw(12) << ppl;
            char buf[64];
            std::snprintf(buf, sizeof(buf), ",%.6f", ppl);
            csv_text += buf;
        }
        out << "\n";
        csv_text += "\n";
    }

    bool any_retrieval = false;
    for (const json& j : js) {
        any_retrieval |= j.contains("retrieval_accuracy");
    }
    if (any_retrieval) {
        out << "\nretrieval accuracy\n";
        for (std::size_t i = 0; i < js.size(); ++i) {
            if (!js[i].contains("retrieval_accuracy")) {
                continue;
            }
            out << std::left << std::setw(28) << name(i) << std::right << std::setprecision(4);
            for (const json& e : js[i].at("retrieval_accuracy")) {
                out << "  @" << e.at("k").get<std::size_t>() << "=" << e.at("accuracy").get<double>();
            }
            out << "\n";
        }
    }
    if (csv) {
        std::ofstream os(*csv, std::ios::trunc);
        os << csv_text;
    }
    return out.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << text;
}

std::size_t scaled(std::size_t n, double scale) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(n) * scale));
}

void write_splits(const std::filesystem::path& dir, const Splits& s, TokenizerMode mode, std::uint64_t seed,
                  std::optional<Instantiation> inst) {
    std::filesystem::create_directories(dir);
    const auto abs = std::filesystem::absolute(dir);
    write_text(dir / "train.txt", s.train);
    write_text(dir / "dev.txt", s.dev);
    write_text(dir / "test.txt", s.test);
    ExperimentConfig cfg;
    cfg.set_seed(seed);
    cfg.data.train = "train.txt";
    cfg.data.dev = "dev.txt";
    cfg.data.test = "test.txt";
    cfg.data.tokenizer = mode;
    cfg.train.instantiation = inst;
    if (inst == Instantiation::trime_ext) {
        cfg.eval.mode = EvalMode::trime_ext;
        cfg.eval.datastore_shares_corpus = false;
    }
    cfg.out_dir = (abs / "run").string();
    write_text(dir / "experiment.cfg", cfg.serialize());
}

}  // namespace

void cmd_generate(const std::string& kind, const std::filesystem::path& out_dir, std::uint64_t seed, double scale) {
    if (!(scale > 0.0)) {
        throw ConfigError("generator scale must be positive");
    }
    if (kind == "copy") {
        CopyCorpusOptions o;
        o.seed = seed;
        o.train_lines = scaled(o.train_lines, scale);
        o.dev_lines = scaled(o.dev_lines, scale);
        o.test_lines = scaled(o.test_lines, scale);
        write_splits(out_dir, copy_corpus(o), TokenizerMode::char_level, seed, Instantiation::trime);
    } else if (kind == "dupfamily" || kind == "dupexact") {
        DupFamilyOptions o;
        o.seed = seed;
        o.families = scaled(o.families, scale);
        o.exact_eval_copies = kind == "dupexact";
        write_splits(out_dir, dup_family_corpus(o), TokenizerMode::word, seed, Instantiation::trime_ext);
    } else if (kind == "domainshift") {
        DomainShiftOptions o;
        o.seed = seed;
        o.docs_per_split = scaled(o.docs_per_split, scale);
        const DomainShiftCorpus c = domain_shift_corpus(o);
        write_splits(out_dir / "a", c.a, TokenizerMode::word, seed, Instantiation::trime_ext);
        write_splits(out_dir / "b", c.b, TokenizerMode::word, seed, Instantiation::trime_ext);
    } else {
        throw ConfigError("unknown generator '" + kind + "' (copy, dupfamily, dupexact, domainshift)");
    }
}

}  // namespace trime
