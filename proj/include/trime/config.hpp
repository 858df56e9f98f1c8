#pragma once

// Experiment configuration.
//
// File grammar: UTF-8 text, one `key = value` per line. Blank lines and
// lines starting with '#' are ignored; surrounding whitespace is trimmed.
// Keys are dotted (model.dim, train.lr, ...). Lists are comma separated.
// Every key is optional; unknown keys are an error.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trime/batching.hpp"
#include "trime/inference.hpp"
#include "trime/model.hpp"
#include "trime/objective.hpp"

namespace trime {

enum class TokenizerMode { char_level, word };

std::string to_string(TokenizerMode mode);
TokenizerMode parse_tokenizer_mode(const std::string& s);

struct DataConfig {
    std::string train;
    std::string dev;
    std::string test;
    TokenizerMode tokenizer{TokenizerMode::word};

    bool operator==(const DataConfig&) const = default;
};

struct BatchConfig {
    std::optional<BatchStrategy> strategy;  // empty: chosen from the instantiation
    std::size_t batch_size{8};
    std::size_t run_length{4};  // m for consecutive batching
    std::size_t bm25_k{20};

    bool operator==(const BatchConfig&) const = default;
};

struct ExperimentConfig {
    std::uint64_t seed{1};
    DataConfig data;
    ModelConfig model;  // vocab_size is taken from the vocabulary
    TrainConfig train;
    BatchConfig batching;
    std::size_t log_every{10};
    std::size_t checkpoint_every{0};  // 0: only at the end
    EvalConfig eval;
    bool tune{true};
    TuneGrid grid;
    std::vector<std::size_t> retrieval_ks{1, 8, 64, 1024};
    std::string out_dir{"run"};

    ExperimentConfig();

    /// Copies `seed` into the model and training configs.
    void set_seed(std::uint64_t s);
    /// Range checks on every numeric field.
    void validate() const;

    static ExperimentConfig parse(const std::string& text);
    /// Parses, resolves relative data paths against the config file's
    /// directory and checks that the referenced files exist.
    static ExperimentConfig load(const std::filesystem::path& path);
    /// Every key in a fixed order; parse(serialize()) reproduces the config.
    std::string serialize() const;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Batching actually used for training: the configured strategy or, when
/// unset, random for vanilla/trime, consecutive for trime_long and BM25
/// with m = 1 for trime_ext.
BatchStrategy effective_strategy(const ExperimentConfig& cfg);

}  // namespace trime
