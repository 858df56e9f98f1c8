#pragma once

// The command layer behind the CLI verbs. Each command is deterministic
// for a fixed config and seed; outputs carry no timestamps.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "trime/config.hpp"
#include "trime/datastore.hpp"
#include "trime/inference.hpp"
#include "trime/text.hpp"
#include "trime/training.hpp"

namespace trime {

/// Vocabulary and encoded splits of an experiment. The vocabulary always
/// comes from the training split.
struct Workspace {
    Vocab vocab;
    Corpus train;
    Corpus dev;
    Corpus test;

    static Workspace load(const ExperimentConfig& cfg);
    /// "train", "dev", "test" or a path to a text file.
    Corpus split(const std::string& name, const ExperimentConfig& cfg) const;
};

/// Writes vocab.tsv and corpus_stats.json into cfg.out_dir.
nlohmann::json cmd_ingest(const ExperimentConfig& cfg);

TrainRun cmd_train(const ExperimentConfig& cfg, bool resume = false,
                   std::optional<std::size_t> stop_at = std::nullopt);

/// Refuses to overwrite `out` unless `force`.
nlohmann::json cmd_build_datastore(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                                   const std::string& split, const std::filesystem::path& out, bool force);

struct EvalRequest {
    std::filesystem::path checkpoint;
    std::string split{"test"};
    std::optional<EvalMode> mode;  // overrides cfg.eval.mode
    std::optional<std::filesystem::path> datastore;
    std::optional<std::filesystem::path> report;  // where to write the JSON
    std::optional<std::filesystem::path> per_token;  // f64 NLL stream
};

/// Tunes on dev (when cfg.tune and a dev split exist), then evaluates the
/// split with the tuned settings. Returns the report.
nlohmann::json cmd_eval(const ExperimentConfig& cfg, const EvalRequest& req);

struct AdaptRequest {
    std::filesystem::path checkpoint;
    std::string target_train;  // source of the target-domain datastore
    std::string target_dev;
    std::string target_test;
    std::string datastore_source{"target"};  // "source", "target" or "none"
    std::optional<std::filesystem::path> report;
};

/// Evaluates a model on another domain without touching its parameters.
nlohmann::json cmd_adapt(const ExperimentConfig& cfg, const AdaptRequest& req);

/// Side-by-side tables of reports: perplexity/bpc with deltas against the
/// first report, frequency buckets and retrieval accuracy. Optionally
/// writes the bucket table as CSV.
std::string cmd_analyze(const std::vector<std::filesystem::path>& reports,
                        const std::optional<std::filesystem::path>& csv = std::nullopt);

/// Writes a synthetic corpus (copy, dupfamily, dupexact, domainshift) and a
/// matching experiment.cfg into `out_dir`.
void cmd_generate(const std::string& kind, const std::filesystem::path& out_dir, std::uint64_t seed,
                  double scale = 1.0);

/// Report JSON shared by eval and adapt.
nlohmann::json report_json(const EvalReport& report, const std::string& split, const std::string& tokenizer);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace trime
