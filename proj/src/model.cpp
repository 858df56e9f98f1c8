#include "trime/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "trime/binary_io.hpp"
#include "trime/error.hpp"

namespace trime {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kInitStd = 0.02;

Tensor normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> dist(0.0, kInitStd);
    std::vector<double> values(rows * cols);
    for (double& v : values) {
        v = dist(rng);
    }
    return Tensor({rows, cols}, std::move(values), true);
}

Tensor constant_vector(std::size_t n, double value) {
    return Tensor::full({n}, value, true);
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size == 0) {
        throw ConfigError("model.vocab_size must be positive");
    }
    if (dim == 0 || heads == 0 || layers == 0 || ffn_dim == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (dim % heads != 0) {
        throw ConfigError("model.dim (" + std::to_string(dim) + ") must be divisible by model.heads (" +
                          std::to_string(heads) + ")");
    }
    if (segment_len < 1) {
        throw ConfigError("model.segment_len must be at least 1");
    }
}

std::vector<Tensor> ModelParams::tensors() const {
    std::vector<Tensor> out{token_embedding, position_embedding};
    for (const BlockParams& b : blocks) {
        out.insert(out.end(), {b.ln1_gain, b.ln1_bias, b.w_qkv, b.b_qkv, b.w_out, b.b_out, b.ln2_gain,
                               b.ln2_bias, b.w_ff1, b.b_ff1, b.w_ff2, b.b_ff2});
    }
    out.push_back(final_gain);
    out.push_back(final_bias);
    return out;
}

std::vector<std::string> ModelParams::names() const {
    std::vector<std::string> out{"token_embedding", "position_embedding"};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        for (const char* n : {"ln1_gain", "ln1_bias", "w_qkv", "b_qkv", "w_out", "b_out", "ln2_gain", "ln2_bias",
                              "w_ff1", "b_ff1", "w_ff2", "b_ff2"}) {
            out.push_back(p + n);
        }
    }
    out.emplace_back("final_gain");
    out.emplace_back("final_bias");
    return out;
}

std::size_t ModelParams::count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors()) {
        n += t.numel();
    }
    return n;
}

ModelParams ModelParams::clone() const {
    auto copy = [](const Tensor& t) {
        Tensor c = t.detach();
        c.set_requires_grad(t.requires_grad());
        return c;
    };
    ModelParams out;
    out.token_embedding = copy(token_embedding);
    out.position_embedding = copy(position_embedding);
    for (const BlockParams& b : blocks) {
        out.blocks.push_back({copy(b.ln1_gain), copy(b.ln1_bias), copy(b.w_qkv), copy(b.b_qkv), copy(b.w_out),
                              copy(b.b_out), copy(b.ln2_gain), copy(b.ln2_bias), copy(b.w_ff1), copy(b.b_ff1),
                              copy(b.w_ff2), copy(b.b_ff2)});
    }
    out.final_gain = copy(final_gain);
    out.final_bias = copy(final_bias);
    return out;
}

ModelParams init_params(const ModelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.dim;
    ModelParams p;
    p.token_embedding = normal_matrix(rng, cfg.vocab_size, d);
    p.position_embedding = normal_matrix(rng, cfg.segment_len, d);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        BlockParams b;
        b.ln1_gain = constant_vector(d, 1.0);
        b.ln1_bias = constant_vector(d, 0.0);
        b.w_qkv = normal_matrix(rng, d, 3 * d);
        b.b_qkv = constant_vector(3 * d, 0.0);
        b.w_out = normal_matrix(rng, d, d);
        b.b_out = constant_vector(d, 0.0);
        b.ln2_gain = constant_vector(d, 1.0);
        b.ln2_bias = constant_vector(d, 0.0);
        b.w_ff1 = normal_matrix(rng, d, cfg.ffn_dim);
        b.b_ff1 = constant_vector(cfg.ffn_dim, 0.0);
        b.w_ff2 = normal_matrix(rng, cfg.ffn_dim, d);
        b.b_ff2 = constant_vector(d, 0.0);
        p.blocks.push_back(std::move(b));
    }
    p.final_gain = constant_vector(d, 1.0);
    p.final_bias = constant_vector(d, 0.0);
    return p;
}

BatchEncoding encode_batch(const ModelConfig& cfg, const ModelParams& params,
                           std::span<const std::vector<TokenId>> segments) {
    const std::size_t d = cfg.dim;
    const std::size_t head_dim = d / cfg.heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    BatchEncoding enc;
    std::vector<TokenId> flat;
    std::vector<std::int32_t> positions;
    for (const auto& seg : segments) {
        if (seg.empty()) {
            throw DimensionError("encode: empty segment");
        }
        if (seg.size() > cfg.segment_len) {
            throw DimensionError("encode: segment of length " + std::to_string(seg.size()) +
                                 " exceeds positional capacity " + std::to_string(cfg.segment_len));
        }
        enc.offsets.push_back(flat.size());
        enc.lengths.push_back(seg.size());
        for (std::size_t t = 0; t < seg.size(); ++t) {
            if (seg[t] < 0 || static_cast<std::size_t>(seg[t]) >= cfg.vocab_size) {
                throw IndexError("encode: token id " + std::to_string(seg[t]) + " outside vocabulary of size " +
                                 std::to_string(cfg.vocab_size));
            }
            flat.push_back(seg[t]);
            positions.push_back(static_cast<std::int32_t>(t));
        }
    }
    if (flat.empty()) {
        throw DimensionError("encode: no tokens");
    }

    Tensor x = add(gather_rows(params.token_embedding, flat), gather_rows(params.position_embedding, positions));
    Tensor g;
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const BlockParams& b = params.blocks[l];
        const Tensor h = layer_norm(x, b.ln1_gain, b.ln1_bias);
        const Tensor qkv = add_row(matmul(h, b.w_qkv), b.b_qkv);
        std::vector<Tensor> seg_out;
        seg_out.reserve(segments.size());
        for (std::size_t s = 0; s < segments.size(); ++s) {
            const Tensor rows = slice_rows(qkv, enc.offsets[s], enc.lengths[s]);
            std::vector<Tensor> heads;
            heads.reserve(cfg.heads);
            for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
                const Tensor q = slice_cols(rows, hd * head_dim, head_dim);
                const Tensor k = slice_cols(rows, d + hd * head_dim, head_dim);
                const Tensor v = slice_cols(rows, 2 * d + hd * head_dim, head_dim);
                const Tensor attn = causal_softmax(scale(matmul_nt(q, k), attn_scale));
                heads.push_back(matmul(attn, v));
            }
            seg_out.push_back(heads.size() == 1 ? heads[0] : concat_cols(heads));
        }
        const Tensor mixed = seg_out.size() == 1 ? seg_out[0] : concat_rows(seg_out);
        x = add(x, add_row(matmul(mixed, b.w_out), b.b_out));

        // FFN input; the last block's value is the memory representation g.
        const Tensor ffn_in = layer_norm(x, b.ln2_gain, b.ln2_bias);
        if (l + 1 == params.blocks.size()) {
            g = ffn_in;
        }
        const Tensor hidden = relu(add_row(matmul(ffn_in, b.w_ff1), b.b_ff1));
        x = add(x, add_row(matmul(hidden, b.w_ff2), b.b_ff2));
    }
    enc.f = layer_norm(x, params.final_gain, params.final_bias);
    enc.g = g;
    return enc;
}

SegmentEncoding encode_segment(const ModelConfig& cfg, const ModelParams& params,
                               std::span<const TokenId> tokens) {
    const std::vector<std::vector<TokenId>> one{std::vector<TokenId>(tokens.begin(), tokens.end())};
    BatchEncoding enc = encode_batch(cfg, params, one);
    return {enc.f, enc.g};
}

Tensor vocab_logits(const ModelParams& params, const Tensor& f_row) {
    const std::size_t d = params.token_embedding.cols();
    if (f_row.numel() != d || f_row.rank() > 2 || (f_row.rank() == 2 && f_row.rows() != 1)) {
        throw DimensionError("vocab_logits: expected a row of dimension " + std::to_string(d) + ", got " +
                             shape_str(f_row.shape()));
    }
    const Tensor row = f_row.rank() == 2 ? f_row : reshape(f_row, {1, d});
    return reshape(matmul_nt(row, params.token_embedding), {params.token_embedding.rows()});
}

Tensor vocab_logits_rows(const ModelParams& params, const Tensor& f) {
    if (f.rank() != 2 || f.cols() != params.token_embedding.cols()) {
        throw DimensionError("vocab_logits_rows: bad input shape " + shape_str(f.shape()));
    }
    return matmul_nt(f, params.token_embedding);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot open checkpoint for writing: " + path.string());
    }
    binio::write_magic(os, "TRMM");
    binio::write_le<std::uint32_t>(os, kCheckpointVersion);
    for (std::size_t v : {cfg.vocab_size, cfg.dim, cfg.layers, cfg.heads, cfg.segment_len, cfg.ffn_dim}) {
        binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
    }
    binio::write_le<std::uint64_t>(os, cfg.seed);
    for (const Tensor& t : params.tensors()) {
        for (double v : t.data()) {
            binio::write_le<double>(os, v);
        }
    }
    if (!os) {
        throw Error("failed writing checkpoint: " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot open checkpoint: " + path.string());
    }
    binio::expect_magic(is, "TRMM");
    const auto version = binio::read_le<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    ModelConfig& cfg = ck.config;
    for (std::size_t* field : {&cfg.vocab_size, &cfg.dim, &cfg.layers, &cfg.heads, &cfg.segment_len, &cfg.ffn_dim}) {
        *field = binio::read_le<std::uint32_t>(is, "config");
    }
    cfg.seed = binio::read_le<std::uint64_t>(is, "config");
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint holds an invalid config: ") + e.what());
    }
    ck.params = init_params(cfg);
    for (Tensor& t : ck.params.tensors()) {
        for (double& v : t.mutable_data()) {
            v = binio::read_le<double>(is, "parameters");
        }
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after checkpoint parameters");
    }
    return ck;
}

}  // namespace trime
