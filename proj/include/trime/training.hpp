#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "trime/config.hpp"
#include "trime/objective.hpp"
#include "trime/text.hpp"

namespace trime {

/// Deterministic 64-bit mix of a seed and a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

struct TrainRunOptions {
    std::filesystem::path out_dir;  // empty: nothing is written
    bool resume{false};
    /// Stop (checkpointing) after this many total steps, as if interrupted.
    std::optional<std::size_t> stop_at;
};

struct TrainRun {
    ModelConfig model;
    ModelParams params;
    std::size_t steps_done{0};
    std::vector<StepReport> log;  // logged steps of this invocation
};

/// Full training loop: segmentation, per-epoch batching, training memories
/// and Adam steps. With an output directory it writes model.ckpt and
/// train_state.bin (every checkpoint_every steps and at the end) and
/// train_log.jsonl. Resuming continues from those files and produces the
/// same result as an uninterrupted run.
TrainRun run_training(const ExperimentConfig& cfg, const Corpus& train, const Vocab& vocab,
                      const TrainRunOptions& opt = {});

}  // namespace trime
