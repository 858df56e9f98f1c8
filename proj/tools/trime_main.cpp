// trime: train, index and evaluate language models with in-batch memories.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "trime/commands.hpp"
#include "trime/error.hpp"
#include "trime/log.hpp"
#include "trime/parallel.hpp"

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force{false};
    std::optional<std::size_t> threads;
};

trime::ExperimentConfig load_config(const Globals& g) {
    if (g.config.empty()) {
        throw trime::ConfigError("this command needs --config");
    }
    trime::ExperimentConfig cfg = trime::ExperimentConfig::load(g.config);
    if (g.seed) {
        cfg.set_seed(*g.seed);
    }
    if (!g.out.empty()) {
        cfg.out_dir = g.out;
    }
    cfg.validate();
    return cfg;
}

std::size_t env_threads() {
    const char* v = std::getenv("TRIME_THREADS");
    if (v == nullptr || *v == '\0') {
        return 0;
    }
    try {
        return static_cast<std::size_t>(std::stoul(v));
    } catch (const std::exception&) {
        throw trime::ConfigError(std::string("TRIME_THREADS is not a number: ") + v);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trime: language models trained with in-batch memories"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "experiment config file");
    app.add_option("--seed", g.seed, "override the config seed");
    app.add_option("--out", g.out, "output directory (overrides output.dir)");
    app.add_flag("--force", g.force, "overwrite existing outputs");
    app.add_option("--threads", g.threads, "worker threads (0: all cores)");
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "only print warnings");

    auto* ingest = app.add_subcommand("ingest", "build the vocabulary and corpus statistics");

    auto* train = app.add_subcommand("train", "train a model");
    bool resume = false;
    std::optional<std::size_t> stop_at;
    train->add_flag("--resume", resume, "continue from the checkpoint in the output directory");
    train->add_option("--stop-at", stop_at, "stop after this many total steps");

    auto* build = app.add_subcommand("build-datastore", "encode a corpus into a kNN datastore");
    std::string build_ckpt, build_split = "train", build_output;
    build->add_option("--checkpoint", build_ckpt, "model checkpoint (default: <out>/model.ckpt)");
    build->add_option("--split", build_split, "train, dev, test or a text file");
    build->add_option("--output", build_output, "datastore file (default: <out>/datastore.bin)");

    auto* eval = app.add_subcommand("eval", "tune on dev and evaluate a split");
    std::string eval_ckpt, eval_split = "test", eval_mode, eval_ds, eval_report, eval_per_token;
    eval->add_option("--checkpoint", eval_ckpt, "model checkpoint (default: <out>/model.ckpt)");
    eval->add_option("--split", eval_split, "train, dev, test or a text file");
    eval->add_option("--mode", eval_mode, "vanilla, trime, trime_long, trime_ext, cache or knnlm");
    eval->add_option("--datastore", eval_ds, "datastore file");
    eval->add_option("--report", eval_report, "report path (default: <out>/report_<mode>.json)");
    eval->add_option("--per-token", eval_per_token, "write per-token NLL as little-endian f64");

    auto* adapt = app.add_subcommand("adapt", "evaluate on another domain without updating the model");
    trime::AdaptRequest areq;
    std::string adapt_ckpt, adapt_report;
    adapt->add_option("--checkpoint", adapt_ckpt, "model checkpoint (default: <out>/model.ckpt)");
    adapt->add_option("--target-train", areq.target_train, "target-domain text for the datastore");
    adapt->add_option("--target-dev", areq.target_dev, "target-domain dev text for tuning");
    adapt->add_option("--target-test", areq.target_test, "target-domain test text")->required();
    adapt->add_option("--datastore-source", areq.datastore_source, "source, target or none")
        ->check(CLI::IsMember({"source", "target", "none"}));
    adapt->add_option("--report", adapt_report, "report path");

    auto* analyze = app.add_subcommand("analyze", "compare evaluation reports");
    std::vector<std::string> reports;
    std::string csv;
    analyze->add_option("reports", reports, "report files")->required();
    analyze->add_option("--csv", csv, "write the bucket table as CSV");

    auto* generate = app.add_subcommand("generate", "write a synthetic corpus and config");
    std::string kind;
    double scale = 1.0;
    generate->add_option("kind", kind, "copy, dupfamily, dupexact or domainshift")
        ->required()
        ->check(CLI::IsMember({"copy", "dupfamily", "dupexact", "domainshift"}));
    generate->add_option("--scale", scale, "size multiplier");

    CLI11_PARSE(app, argc, argv);

    try {
        if (quiet) {
            trime::set_log_level(trime::LogLevel::warning);
        }
        trime::set_num_threads(g.threads ? *g.threads : env_threads());

        if (*generate) {
            const std::string out = g.out.empty() ? "data" : g.out;
            trime::cmd_generate(kind, out, g.seed.value_or(1), scale);
            std::cout << "wrote " << kind << " corpus to " << out << "\n";
            return 0;
        }
        if (*analyze) {
            std::vector<std::filesystem::path> paths(reports.begin(), reports.end());
            std::optional<std::filesystem::path> csv_path;
            if (!csv.empty()) {
                csv_path = csv;
            }
            std::cout << trime::cmd_analyze(paths, csv_path);
            return 0;
        }

        const trime::ExperimentConfig cfg = load_config(g);
        const std::filesystem::path out_dir = cfg.out_dir;
        auto default_ckpt = [&](const std::string& s) {
            return s.empty() ? out_dir / "model.ckpt" : std::filesystem::path(s);
        };

        if (*ingest) {
            std::cout << trime::cmd_ingest(cfg).dump(2) << "\n";
        } else if (*train) {
            if (!resume && !g.force && std::filesystem::exists(out_dir / "model.ckpt")) {
                throw trime::Error((out_dir / "model.ckpt").string() +
                                   " already exists (use --force to overwrite or --resume)");
            }
            const trime::TrainRun run = trime::cmd_train(cfg, resume, stop_at);
            std::cout << "trained " << run.steps_done << " steps; checkpoint in " << out_dir.string() << "\n";
        } else if (*build) {
            const std::filesystem::path output =
                build_output.empty() ? out_dir / "datastore.bin" : std::filesystem::path(build_output);
            std::cout << trime::cmd_build_datastore(cfg, default_ckpt(build_ckpt), build_split, output, g.force)
                             .dump(2)
                      << "\n";
        } else if (*eval) {
            trime::EvalRequest req;
            req.checkpoint = default_ckpt(eval_ckpt);
            req.split = eval_split;
            if (!eval_mode.empty()) {
                req.mode = trime::parse_eval_mode(eval_mode);
            }
            if (!eval_ds.empty()) {
                req.datastore = eval_ds;
            }
            const std::string mode_name = trime::to_string(req.mode.value_or(cfg.eval.mode));
            req.report = eval_report.empty() ? out_dir / ("report_" + mode_name + ".json")
                                             : std::filesystem::path(eval_report);
            if (!eval_per_token.empty()) {
                req.per_token = eval_per_token;
            }
            if (std::filesystem::exists(*req.report) && !g.force) {
                throw trime::Error(req.report->string() + " already exists (use --force to overwrite)");
            }
            const auto j = trime::cmd_eval(cfg, req);
            std::cout << j.at("mode").get<std::string>() << " " << j.at("split").get<std::string>()
                      << ": ppl=" << j.at("ppl").get<double>() << " bpc=" << j.at("bpc").get<double>()
                      << " tokens=" << j.at("tokens").get<std::size_t>() << "\n";
        } else if (*adapt) {
            areq.checkpoint = default_ckpt(adapt_ckpt);
            areq.report = adapt_report.empty()
                              ? out_dir / ("adapt_" + areq.datastore_source + ".json")
                              : std::filesystem::path(adapt_report);
            if (std::filesystem::exists(*areq.report) && !g.force) {
                throw trime::Error(areq.report->string() + " already exists (use --force to overwrite)");
            }
            const auto j = trime::cmd_adapt(cfg, areq);
            std::cout << "adapt (" << areq.datastore_source << " datastore): ppl=" << j.at("ppl").get<double>()
                      << " tokens=" << j.at("tokens").get<std::size_t>() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
