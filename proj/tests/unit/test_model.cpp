#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "trime/error.hpp"
#include "trime/model.hpp"

using namespace trime;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 16;
    cfg.dim = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.segment_len = 12;
    cfg.ffn_dim = 16;
    cfg.seed = 7;
    return cfg;
}

std::filesystem::path tmp_dir() {
    const std::filesystem::path p = std::filesystem::path(TRIME_TEST_TMP) / "model";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent shapes") {
    ModelConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.vocab_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("initialization is a pure function of the seed") {
    const ModelConfig cfg = tiny_config();
    const ModelParams a = init_params(cfg);
    const ModelParams b = init_params(cfg);
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(std::equal(ta[i].data().begin(), ta[i].data().end(), tb[i].data().begin()));
    }
    ModelConfig other = cfg;
    other.seed = 8;
    CHECK_FALSE(std::equal(ta[0].data().begin(), ta[0].data().end(), init_params(other).tensors()[0].data().begin()));
}

TEST_CASE("f and g at position t depend only on tokens up to t") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg);
    std::vector<TokenId> a{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<TokenId> b = a;
    b[5] = 11;
    b[7] = 0;
    const SegmentEncoding ea = encode_segment(cfg, params, a);
    const SegmentEncoding eb = encode_segment(cfg, params, b);
    for (std::size_t t = 0; t < a.size(); ++t) {
        bool same_f = true, same_g = true;
        for (std::size_t c = 0; c < cfg.dim; ++c) {
            same_f &= ea.f.at(t, c) == eb.f.at(t, c);
            same_g &= ea.g.at(t, c) == eb.g.at(t, c);
        }
        CHECK(same_f == (t < 5));
        CHECK(same_g == (t < 5));
    }
}

TEST_CASE("batched encoding equals per-segment encoding") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg);
    const std::vector<std::vector<TokenId>> segs{{1, 2, 3}, {4, 5, 6, 7, 8}, {9}};
    const BatchEncoding batch = encode_batch(cfg, params, segs);
    REQUIRE(batch.offsets == std::vector<std::size_t>{0, 3, 8});
    for (std::size_t s = 0; s < segs.size(); ++s) {
        const SegmentEncoding one = encode_segment(cfg, params, segs[s]);
        for (std::size_t t = 0; t < segs[s].size(); ++t) {
            for (std::size_t c = 0; c < cfg.dim; ++c) {
                CHECK(batch.f.at(batch.offsets[s] + t, c) == doctest::Approx(one.f.at(t, c)).epsilon(1e-12));
                CHECK(batch.g.at(batch.offsets[s] + t, c) == doctest::Approx(one.g.at(t, c)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("encoding validates tokens and length") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg);
    const std::vector<TokenId> bad{1, 16};
    CHECK_THROWS_AS(encode_segment(cfg, params, bad), IndexError);
    const std::vector<TokenId> too_long(cfg.segment_len + 1, 1);
    CHECK_THROWS_AS(encode_segment(cfg, params, too_long), DimensionError);
}

TEST_CASE("logits use the tied embedding") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg);
    const std::vector<TokenId> toks{3, 1, 4};
    const SegmentEncoding enc = encode_segment(cfg, params, toks);
    const Tensor logits = vocab_logits_rows(params, enc.f);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cfg.dim; ++c) {
            dot += params.token_embedding.at(v, c) * enc.f.at(2, c);
        }
        CHECK(logits.at(2, v) == doctest::Approx(dot).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint round trip is bit exact and rejects corruption") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg);
    const auto path = tmp_dir() / "a.ckpt";
    save_checkpoint(path, cfg, params);
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.config == cfg);
    const auto ta = params.tensors();
    const auto tb = ck.params.tensors();
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i].shape() == tb[i].shape());
        CHECK(std::equal(ta[i].data().begin(), ta[i].data().end(), tb[i].data().begin()));
    }

    std::string bytes;
    {
        std::ifstream is(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(is), {});
    }
    {
        std::ofstream os(tmp_dir() / "short.ckpt", std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(tmp_dir() / "short.ckpt"), FormatError);
    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream os(tmp_dir() / "magic.ckpt", std::ios::binary);
        os << bad;
    }
    CHECK_THROWS_AS(load_checkpoint(tmp_dir() / "magic.ckpt"), FormatError);
}

TEST_CASE("clone shares no storage") {
    const ModelParams params = init_params(tiny_config());
    const ModelParams copy = params.clone();
    const auto a = params.tensors();
    const auto b = copy.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK_FALSE(a[i].same_storage(b[i]));
    }
}
