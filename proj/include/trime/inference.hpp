#pragma once

// Memory-augmented evaluation.
//
// Per scored token the model's logits are combined with an evaluation
// memory of (similarity, target) entries gathered from three places:
//   local     earlier contexts of the current evaluation window
//   long      contexts before the window (most recent first, capped)
//   external  top-k neighbours from a datastore
//
// Modes:
//   vanilla     softmax only
//   trime       one normalization over logits and local memory, sims / tau
//   trime_long  as trime with local and long memory
//   trime_ext   as trime_long plus external memory, then interpolated with
//               a memory-only distribution (tau', lambda)
//   cache       softmax interpolated with a memory-only distribution over
//               local and long memory
//   knnlm       softmax interpolated with a memory-only distribution over
//               external memory

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trime/corpus.hpp"
#include "trime/datastore.hpp"
#include "trime/model.hpp"

namespace trime {

enum class EvalMode { vanilla, trime, trime_long, trime_ext, cache, knnlm };

std::string to_string(EvalMode mode);
EvalMode parse_eval_mode(const std::string& s);

bool uses_local_memory(EvalMode mode);
bool uses_long_memory(EvalMode mode);
bool uses_datastore(EvalMode mode);
/// Modes whose output goes through interpolate().
bool uses_interpolation(EvalMode mode);

struct EvalConfig {
    EvalMode mode{EvalMode::trime};
    double tau{1.0};
    double tau_prime{1.0};
    double lambda{0.0};
    std::size_t k{1024};
    std::size_t long_memory_tokens{0};
    std::size_t window{64};
    std::size_t stride{32};
    /// The datastore was built from the evaluated corpus: neighbours from
    /// the query's own document are skipped.
    bool datastore_shares_corpus{false};

    void validate() const;
    bool operator==(const EvalConfig&) const = default;
};

enum class MemorySource : std::uint8_t { local, long_term, external };

struct MemoryEntry {
    double sim{0.0};
    TokenId target{0};
    MemorySource source{MemorySource::local};
    std::uint32_t doc{0};
    std::uint32_t pos{0};

    bool operator==(const MemoryEntry&) const = default;
};

/// Union of the components the mode uses, in the order local, long,
/// external. Long memory is given most recent first and truncated to
/// cfg.long_memory_tokens. When the datastore shares the evaluated corpus,
/// neighbours with the same (doc, pos) as a local or long entry are
/// dropped. Throws when the mode needs a datastore and `knn` is null.
std::vector<MemoryEntry> assemble_eval_memory(const EvalConfig& cfg, std::span<const MemoryEntry> local,
                                              std::span<const MemoryEntry> long_recent_first,
                                              const std::vector<MemoryEntry>* knn);

/// P(w) proportional to exp(logit_w) + sum over entries with target w of
/// exp(sim / tau).
std::vector<double> eval_next_token_dist(std::span<const double> logits, std::span<const double> sims,
                                         std::span<const TokenId> targets, double tau);

/// P'(w) proportional to the sum over entries with target w of
/// exp(sim / tau_prime). Throws on empty memory.
std::vector<double> memory_dist(std::span<const double> sims, std::span<const TokenId> targets, double tau_prime,
                                std::size_t vocab_size);

/// (1 - lambda) P + lambda P'.
std::vector<double> interpolate(std::span<const double> p, std::span<const double> p_mem, double lambda);

/// Token frequency classes: >10k, 1k-10k, 100-1k, 10-100, <=10.
struct FreqBuckets {
    static constexpr std::size_t kCount = 5;
    static const std::array<const char*, kCount> kLabels;

    std::vector<std::uint8_t> bucket_of;  // per token id

    static FreqBuckets from_frequencies(std::span<const std::uint64_t> freq);
    static std::size_t bucket_for(std::uint64_t freq);
    std::size_t bucket(TokenId id) const;
};

struct BucketStat {
    std::uint64_t tokens{0};
    double nll{0.0};
    double ppl() const;
};

struct EvalReport {
    EvalConfig config;
    std::uint64_t tokens{0};
    double nll{0.0};  // summed, natural log
    std::array<BucketStat, FreqBuckets::kCount> buckets{};
    std::vector<double> per_token_nll;  // document order, when requested

    double mean_nll() const;
    double ppl() const;
    double bpc() const;
};

EvalReport evaluate(const ModelConfig& model_cfg, const ModelParams& params, const Corpus& corpus,
                    const EvalConfig& cfg, const Datastore* datastore = nullptr,
                    const FreqBuckets* buckets = nullptr, bool keep_per_token = false);

/// Fraction of scored tokens whose top-K neighbours contain the gold next
/// token, for each K in `ks`.
std::vector<double> retrieval_accuracy(const ModelConfig& model_cfg, const ModelParams& params,
                                       const Datastore& datastore, const Corpus& corpus,
                                       std::span<const std::size_t> ks, const EvalConfig& cfg);

struct TuneGrid {
    std::vector<double> tau;
    std::vector<double> tau_prime;
    std::vector<double> lambda;
    std::vector<std::size_t> long_memory_tokens;

    /// tau, tau' in {0.25 .. 8}, lambda in {0, 0.05 .. 0.5}, long memory in
    /// {0, L, 2L .. 32L} for window length L.
    static TuneGrid defaults(std::size_t window);
    bool operator==(const TuneGrid&) const = default;
};

struct TuneResult {
    EvalConfig best;
    double best_nll{0.0};  // summed dev NLL of `best`
    std::uint64_t tokens{0};
    std::size_t points{0};  // grid points compared
};

/// Exhaustive search over the grid dimensions relevant to cfg.mode (others
/// keep their values from `cfg`). Ties go to the smaller value, compared in
/// the order long_memory_tokens, tau, tau', lambda.
TuneResult tune(const ModelConfig& model_cfg, const ModelParams& params, const Corpus& dev, const EvalConfig& cfg,
                const TuneGrid& grid, const Datastore* datastore = nullptr);

}  // namespace trime
