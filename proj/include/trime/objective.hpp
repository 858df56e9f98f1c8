#pragma once

// The memory-augmented next-token distribution and its training loss.
//
// For a query context c with output representation f and memory
// representation g, and memory pairs (c_j, x_j) with keys g_j:
//
//   P(w | c) ∝ exp(E_w . f) + Σ_{j : x_j = w} exp(sim(g, g_j) / τ)
//
// with sim the scaled dot product and τ = 1 during training. All
// evaluation happens in log space.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "trime/batching.hpp"
#include "trime/memory.hpp"
#include "trime/model.hpp"
#include "trime/tensor.hpp"

namespace trime {

/// log P(target) with memory similarities `sims` (already scaled dot
/// products) whose targets are `mem_targets`; sims are divided by
/// `temperature`. With no memory this is the plain log-softmax.
double trime_log_prob(std::span<const double> logits, std::span<const double> sims,
                      std::span<const TokenId> mem_targets, TokenId target, double temperature = 1.0);

double vanilla_log_prob(std::span<const double> logits, TokenId target);

/// Differentiable single-query form of trime_log_prob (temperature 1).
Tensor trime_log_prob(const Tensor& logits, const Tensor& sims, std::span<const TokenId> mem_targets,
                      TokenId target);

/// Mean negative log-likelihood over the queries of `memory`.
/// logits: queries x |V|; sims: queries x queries (entry (q, j) is the
/// similarity of query q to pair j, used only where memory.allows(q, j)).
Tensor trime_loss(const Tensor& logits, const Tensor& sims, const MemorySpec& memory);

/// Mean negative log-likelihood of `targets` under the row-wise softmax.
Tensor vanilla_loss(const Tensor& logits, std::span<const TokenId> targets);

struct TrainConfig {
    std::optional<Instantiation> instantiation;  // empty: vanilla objective throughout
    double local_drop_prob{0.9};
    double warmup_fraction{0.05};
    std::size_t total_steps{1000};
    double learning_rate{1e-3};
    double beta1{0.9};
    double beta2{0.999};
    double adam_eps{1e-8};
    double clip_norm{0.0};  // 0 disables clipping
    std::uint64_t seed{1};

    void validate() const;
    /// Steps trained with the vanilla objective (and linear lr warmup).
    std::size_t warmup_steps() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup over warmup_steps(), inverse square root decay after.
double learning_rate_at(const TrainConfig& cfg, std::size_t step);

struct StepReport {
    std::size_t step{0};
    double loss{0.0};          // mean NLL
    double mem_hit_frac{0.0};  // queries whose memory holds their target
    double grad_norm{0.0};
    double lr{0.0};
    bool memory_objective{false};
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t{0};

    static AdamState for_params(const ModelParams& params);
    bool operator==(const AdamState&) const = default;
};

/// Encodes the batch, computes the vanilla (during warmup) or memory
/// loss, back-propagates through both the query and the memory
/// representations, and applies one Adam update.
StepReport train_step(const ModelConfig& model_cfg, ModelParams& params, AdamState& adam,
                      std::span<const Segment> segments, const Batch& batch, const MemorySpec& memory,
                      const TrainConfig& cfg, std::size_t step);

/// Loss of a batch without updating anything (objective chosen as in
/// train_step). Gradients are left on the parameters when `with_grad`.
double batch_loss(const ModelConfig& model_cfg, const ModelParams& params, std::span<const Segment> segments,
                  const Batch& batch, const MemorySpec& memory, bool memory_objective, bool with_grad = false);

// Optimizer state for resuming: magic "TRMS", version, step, Adam moments.
void save_train_state(const std::filesystem::path& path, std::uint64_t step, const AdamState& adam);
std::uint64_t load_train_state(const std::filesystem::path& path, AdamState& adam);

}  // namespace trime
