#include <cmath>
#include <fstream>

#include "doctest.h"

#include "trime/commands.hpp"
#include "trime/error.hpp"
#include "trime/log.hpp"
#include "trime/synthetic.hpp"
#include "trime/training.hpp"

using namespace trime;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::path(TRIME_TEST_TMP) / "cmd" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string bytes(const std::filesystem::path& p) { return read_text_file(p); }

// A tiny word-level experiment on the duplicate-family generator.
ExperimentConfig tiny_experiment(const std::filesystem::path& dir, std::optional<Instantiation> inst) {
    DupFamilyOptions o;
    o.families = 6;
    o.train_members = 3;
    o.doc_words = 40;
    o.vocab_words = 60;
    const Splits s = dup_family_corpus(o);
    for (const auto& [name, text] : {std::pair{"train.txt", s.train}, {"dev.txt", s.dev}, {"test.txt", s.test}}) {
        std::ofstream(dir / name) << text;
    }
    ExperimentConfig cfg;
    cfg.data.train = (dir / "train.txt").string();
    cfg.data.dev = (dir / "dev.txt").string();
    cfg.data.test = (dir / "test.txt").string();
    cfg.data.tokenizer = TokenizerMode::word;
    cfg.model.dim = 16;
    cfg.model.layers = 1;
    cfg.model.heads = 2;
    cfg.model.segment_len = 16;
    cfg.model.ffn_dim = 32;
    cfg.train.instantiation = inst;
    cfg.train.total_steps = 12;
    cfg.train.warmup_fraction = 0.25;
    cfg.batching.batch_size = 4;
    cfg.log_every = 1;
    cfg.eval.window = 16;
    cfg.eval.stride = 8;
    cfg.eval.k = 32;
    cfg.grid.tau = {0.5, 1.0};
    cfg.grid.tau_prime = {1.0};
    cfg.grid.lambda = {0.0, 0.25};
    cfg.grid.long_memory_tokens = {0, 16};
    cfg.retrieval_ks = {1, 8};
    cfg.out_dir = (dir / "run").string();
    return cfg;
}

}  // namespace

TEST_CASE("zero steps writes the initial checkpoint") {
    const auto dir = fresh_dir("zero");
    ExperimentConfig cfg = tiny_experiment(dir, Instantiation::trime);
    cfg.train.total_steps = 0;
    const TrainRun run = cmd_train(cfg);
    CHECK(run.steps_done == 0);
    const Checkpoint ck = load_checkpoint(dir / "run" / "model.ckpt");
    const ModelParams init = init_params(ck.config);
    const auto a = ck.params.tensors();
    const auto b = init.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::equal(a[i].data().begin(), a[i].data().end(), b[i].data().begin()));
    }
}

TEST_CASE("interrupted and resumed training equals an uninterrupted run") {
    for (auto inst : {std::optional<Instantiation>{}, std::optional{Instantiation::trime_ext},
                      std::optional{Instantiation::trime_long}}) {
        const auto dir = fresh_dir("resume");
        ExperimentConfig cfg = tiny_experiment(dir, inst);
        cfg.train.local_drop_prob = 0.5;
        cfg.checkpoint_every = 3;
        cmd_train(cfg);
        const std::string full_ckpt = bytes(dir / "run" / "model.ckpt");
        const std::string full_log = bytes(dir / "run" / "train_log.jsonl");

        cfg.out_dir = (dir / "run2").string();
        CHECK(cmd_train(cfg, false, 7).steps_done == 7);
        CHECK(cmd_train(cfg, true).steps_done == 12);
        CHECK(bytes(dir / "run2" / "model.ckpt") == full_ckpt);
        CHECK(bytes(dir / "run2" / "train_log.jsonl") == full_log);
    }
}

TEST_CASE("a diverging run stops with the last good checkpoint on disk") {
    const auto dir = fresh_dir("nan");
    ExperimentConfig cfg = tiny_experiment(dir, Instantiation::trime);
    cfg.train.learning_rate = 1e300;
    cfg.train.warmup_fraction = 0.0;
    cfg.checkpoint_every = 1;
    const LogLevel level = log_level();
    set_log_level(LogLevel::quiet);
    CHECK_THROWS_AS(cmd_train(cfg), NonFiniteError);
    set_log_level(level);
    const Checkpoint ck = load_checkpoint(dir / "run" / "model.ckpt");
    for (const Tensor& t : ck.params.tensors()) {
        for (double v : t.data()) REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("datastore command counts every pair and refuses to overwrite") {
    const auto dir = fresh_dir("ds");
    ExperimentConfig cfg = tiny_experiment(dir, Instantiation::trime_ext);
    cmd_train(cfg);
    const auto ws = Workspace::load(cfg);
    const auto out = dir / "ds.bin";
    const auto info = cmd_build_datastore(cfg, dir / "run" / "model.ckpt", "train", out, false);
    CHECK(info.at("entries").get<std::size_t>() == pair_count(ws.train));
    CHECK(info.at("pairs").get<std::size_t>() == pair_count(ws.train));
    CHECK_THROWS_AS(cmd_build_datastore(cfg, dir / "run" / "model.ckpt", "train", out, false), Error);
    CHECK_NOTHROW(cmd_build_datastore(cfg, dir / "run" / "model.ckpt", "train", out, true));
}

TEST_CASE("eval tunes on dev and records the chosen settings") {
    const auto dir = fresh_dir("eval");
    ExperimentConfig cfg = tiny_experiment(dir, Instantiation::trime_ext);
    cmd_train(cfg);
    cmd_build_datastore(cfg, dir / "run" / "model.ckpt", "train", dir / "ds.bin", false);
    EvalRequest req;
    req.checkpoint = dir / "run" / "model.ckpt";
    req.datastore = dir / "ds.bin";
    req.mode = EvalMode::trime_ext;
    req.report = dir / "report.json";
    req.per_token = dir / "nll.f64";
    const auto j = cmd_eval(cfg, req);
    CHECK(j.at("mode") == "trime_ext");
    CHECK(j.at("tuning").at("points").get<std::size_t>() == 2 * 1 * 2 * 2);
    CHECK(j.contains("retrieval_accuracy"));
    CHECK(std::filesystem::file_size(dir / "nll.f64") == 8 * j.at("tokens").get<std::size_t>());
    const std::string first = bytes(dir / "report.json");
    cmd_eval(cfg, req);
    CHECK(bytes(dir / "report.json") == first);

    req.mode = EvalMode::knnlm;
    req.datastore.reset();
    CHECK_THROWS_AS(cmd_eval(cfg, req), ConfigError);

    ExperimentConfig other = cfg;
    other.data.train = cfg.data.dev;
    req.mode = EvalMode::vanilla;
    CHECK_THROWS_AS(cmd_eval(other, req), FormatError);
}

TEST_CASE("adapt evaluates without touching the checkpoint") {
    const auto dir = fresh_dir("adapt");
    ExperimentConfig cfg = tiny_experiment(dir, Instantiation::trime_ext);
    cmd_train(cfg);
    const auto ckpt = dir / "run" / "model.ckpt";
    const std::string before = bytes(ckpt);
    const auto time_before = std::filesystem::last_write_time(ckpt);
    for (const char* source : {"source", "target", "none"}) {
        AdaptRequest req;
        req.checkpoint = ckpt;
        req.target_train = cfg.data.train;
        req.target_dev = cfg.data.dev;
        req.target_test = cfg.data.test;
        req.datastore_source = source;
        const auto j = cmd_adapt(cfg, req);
        CHECK(j.at("datastore_source") == source);
        CHECK(j.at("mode") == (std::string(source) == "none" ? "vanilla" : "trime_ext"));
    }
    CHECK(bytes(ckpt) == before);
    CHECK(std::filesystem::last_write_time(ckpt) == time_before);
}

TEST_CASE("analyze tables") {
    const auto dir = fresh_dir("analyze");
    auto report = [&](const std::string& name, double ppl, std::uint64_t tokens) {
        nlohmann::json j = {{"mode", "vanilla"}, {"tokens", tokens}, {"ppl", ppl}, {"bpc", std::log2(ppl)}};
        nlohmann::json b = nlohmann::json::array();
        for (std::size_t k = 0; k < FreqBuckets::kCount; ++k) {
            b.push_back({{"label", FreqBuckets::kLabels[k]}, {"tokens", k}, {"ppl", k ? nlohmann::json(ppl + k) : nlohmann::json(nullptr)}});
        }
        j["buckets"] = b;
        write_json(dir / name, j);
        return dir / name;
    };
    const auto a = report("a.json", 10.0, 100);
    const auto b = report("b.json", 7.5, 100);
    const std::string one = cmd_analyze({a});
    CHECK(one.find("a.json") != std::string::npos);
    CHECK(one.find("0.000") != std::string::npos);
    const std::string two = cmd_analyze({a, b}, dir / "buckets.csv");
    CHECK(two.find("-2.500") != std::string::npos);
    CHECK(two.find(">10k") < two.find("1k-10k"));
    CHECK(two.find("100-1k") < two.find("<=10"));
    const std::string csv = bytes(dir / "buckets.csv");
    CHECK(csv.rfind("report,>10k,1k-10k,100-1k,10-100,<=10\n", 0) == 0);
    CHECK_THROWS(cmd_analyze({}));
}

TEST_CASE("generated corpora come with a runnable config") {
    const auto dir = fresh_dir("gen");
    cmd_generate("dupfamily", dir / "dup", 3, 0.2);
    const ExperimentConfig cfg = ExperimentConfig::load(dir / "dup" / "experiment.cfg");
    CHECK(cfg.train.instantiation == Instantiation::trime_ext);
    CHECK(cfg.seed == 3);
    CHECK(Workspace::load(cfg).train.size() > 0);
    cmd_generate("dupfamily", dir / "again", 3, 0.2);
    CHECK(bytes(dir / "dup" / "train.txt") == bytes(dir / "again" / "train.txt"));
    cmd_generate("domainshift", dir / "shift", 1, 0.1);
    CHECK(std::filesystem::exists(dir / "shift" / "b" / "test.txt"));
    CHECK_THROWS_AS(cmd_generate("nope", dir / "x", 1), ConfigError);
}
