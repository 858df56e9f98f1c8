#pragma once

// Small pre-layer-norm causal transformer with tied input/output embeddings.
//
// Per position it exposes two representations:
//   f  the final output (after the last block and the final layer norm);
//      vocabulary logits are E f.
//   g  the input of the last block's feed-forward sublayer, i.e. the
//      layer-normed residual stream right after the last attention
//      sublayer's residual add. Memory similarity uses g.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "trime/tensor.hpp"

namespace trime {

using TokenId = std::int32_t;

struct ModelConfig {
    std::size_t vocab_size{0};
    std::size_t dim{64};
    std::size_t layers{2};
    std::size_t heads{2};
    std::size_t segment_len{64};
    std::size_t ffn_dim{256};
    std::uint64_t seed{1};

    /// Throws ConfigError describing the first violated constraint.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct BlockParams {
    Tensor ln1_gain, ln1_bias;
    Tensor w_qkv, b_qkv;  // d x 3d, 3d
    Tensor w_out, b_out;  // d x d, d
    Tensor ln2_gain, ln2_bias;
    Tensor w_ff1, b_ff1;  // d x ffn, ffn
    Tensor w_ff2, b_ff2;  // ffn x d, d
};

struct ModelParams {
    Tensor token_embedding;     // |V| x d, shared with the output layer
    Tensor position_embedding;  // L x d
    std::vector<BlockParams> blocks;
    Tensor final_gain, final_bias;

    /// Every parameter tensor in declaration (= checkpoint) order.
    std::vector<Tensor> tensors() const;
    std::vector<std::string> names() const;
    std::size_t count() const;
    /// Deep copy; the result shares no storage with this.
    ModelParams clone() const;
};

struct SegmentEncoding {
    Tensor f;  // rows x d
    Tensor g;  // rows x d
};

/// Stacked encoding of several independent segments: segment i occupies
/// rows [offsets[i], offsets[i] + lengths[i]).
struct BatchEncoding {
    Tensor f;
    Tensor g;
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> lengths;
};

/// Normal(0, 0.02) weights, zero biases, unit layer-norm gains; fully
/// determined by cfg.seed.
ModelParams init_params(const ModelConfig& cfg);

SegmentEncoding encode_segment(const ModelConfig& cfg, const ModelParams& params,
                               std::span<const TokenId> tokens);

BatchEncoding encode_batch(const ModelConfig& cfg, const ModelParams& params,
                           std::span<const std::vector<TokenId>> segments);

/// E f_row for every vocabulary entry.
Tensor vocab_logits(const ModelParams& params, const Tensor& f_row);
/// Row-wise logits for a stack of output representations (rows x |V|).
Tensor vocab_logits_rows(const ModelParams& params, const Tensor& f);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params);

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trime
