#include <fstream>

#include "doctest.h"

#include "trime/config.hpp"
#include "trime/error.hpp"
#include "trime/text.hpp"

using namespace trime;

namespace {

std::filesystem::path tmp(const std::string& name) {
    const auto dir = std::filesystem::path(TRIME_TEST_TMP) / "text";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << text;
}

std::string slurp(const std::filesystem::path& p) { return read_text_file(p); }

}  // namespace

TEST_CASE("utf8 splitting") {
    CHECK(utf8_chars("ab") == std::vector<std::string>{"a", "b"});
    CHECK(utf8_chars("\xC3\xA9x\xE2\x96\xB8") == std::vector<std::string>{"\xC3\xA9", "x", "\xE2\x96\xB8"});
    CHECK_THROWS_AS(utf8_chars("\xC3"), FormatError);
    CHECK_THROWS_AS(utf8_chars("\x80"), FormatError);
}

TEST_CASE("char vocabulary orders by frequency then bytes") {
    const Vocab v = Vocab::build(split_documents("aab", TokenizerMode::char_level));
    CHECK(v.id("a") == 0);
    CHECK(v.id("b") == 1);
    CHECK(v.frequencies()[0] == 2);
    CHECK(v.frequencies()[1] == 1);
    CHECK(v.token(v.unk()) == Vocab::kUnk);
    CHECK(v.token(v.pad()) == Vocab::kPad);
    CHECK(v.size() == 4);
    CHECK(v.id("z") == v.unk());

    const Vocab w = Vocab::build(split_documents("b a c a b d", TokenizerMode::word));
    CHECK(w.token(0) == "a");
    CHECK(w.token(1) == "b");
    CHECK(w.token(2) == "c");
    CHECK(w.token(3) == "d");
}

TEST_CASE("word mode splits documents on blank lines") {
    const auto docs = split_documents("a b\nc\n\n\n d e \n\n", TokenizerMode::word);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0] == std::vector<std::string>{"a", "b", "c"});
    CHECK(docs[1] == std::vector<std::string>{"d", "e"});
    CHECK(split_documents("x\n\ny", TokenizerMode::char_level).size() == 1);
}

TEST_CASE("char mode decoding reproduces the input") {
    const std::string text = "h\xC3\xA9llo \xE2\x96\xB8 w\torld\n\nbye\r\n";
    const auto docs = split_documents(text, TokenizerMode::char_level);
    const Vocab v = Vocab::build(docs);
    const Corpus c = v.encode(docs);
    CHECK(v.decode(c[0].tokens, TokenizerMode::char_level) == text);
}

TEST_CASE("word mode maps unseen tokens to unk") {
    write_file(tmp("train.txt"), "a b a\n\nc a\n");
    write_file(tmp("dev.txt"), "a z b\n");
    const Ingested in = ingest(tmp("train.txt"), TokenizerMode::word);
    REQUIRE(in.corpus.size() == 2);
    const Corpus dev = encode_file(tmp("dev.txt"), TokenizerMode::word, in.vocab);
    CHECK(dev[0].tokens == std::vector<TokenId>{in.vocab.id("a"), in.vocab.unk(), in.vocab.id("b")});
    write_file(tmp("empty.txt"), "  \n\n");
    CHECK_THROWS_AS(ingest(tmp("empty.txt"), TokenizerMode::word), Error);
    CHECK_THROWS_AS(ingest(tmp("missing.txt"), TokenizerMode::word), Error);
}

TEST_CASE("vocab file round trip with escaped tokens is byte stable") {
    const std::string text = "x\ty\\z\nq\r";
    const Vocab v = Vocab::build(split_documents(text, TokenizerMode::char_level));
    v.save(tmp("v1.tsv"));
    const Vocab back = Vocab::load(tmp("v1.tsv"));
    CHECK(back == v);
    back.save(tmp("v2.tsv"));
    CHECK(slurp(tmp("v1.tsv")) == slurp(tmp("v2.tsv")));
    const std::string tsv = slurp(tmp("v1.tsv"));
    CHECK(tsv.find("\\t\t") != std::string::npos);

    write_file(tmp("again.txt"), "the cat the end");
    const Ingested a = ingest(tmp("again.txt"), TokenizerMode::word);
    const Ingested b = ingest(tmp("again.txt"), TokenizerMode::word);
    a.vocab.save(tmp("a.tsv"));
    b.vocab.save(tmp("b.tsv"));
    CHECK(slurp(tmp("a.tsv")) == slurp(tmp("b.tsv")));
}

TEST_CASE("config parse and serialize round trip") {
    ExperimentConfig cfg;
    cfg.set_seed(99);
    cfg.data.train = "t.txt";
    cfg.data.tokenizer = TokenizerMode::char_level;
    cfg.model.dim = 32;
    cfg.train.instantiation = Instantiation::trime_ext;
    cfg.train.local_drop_prob = 0.3;
    cfg.train.learning_rate = 3e-4;
    cfg.batching.strategy = BatchStrategy::bm25;
    cfg.eval.mode = EvalMode::knnlm;
    cfg.eval.lambda = 0.1;
    cfg.grid.tau = {0.1, 1.0 / 3.0};
    cfg.retrieval_ks = {1, 2};
    cfg.out_dir = "some dir";
    const ExperimentConfig back = ExperimentConfig::parse(cfg.serialize());
    CHECK(back == cfg);
    CHECK(back.serialize() == cfg.serialize());
    CHECK(back.model.seed == 99);
    CHECK(back.train.seed == 99);
}

TEST_CASE("config grammar") {
    const ExperimentConfig cfg = ExperimentConfig::parse(
        "# comment\n\n  model.dim = 16  \nmodel.heads=4\neval.grid.lambda = 0, 0.5 ,1\nbatch.strategy = auto\n");
    CHECK(cfg.model.dim == 16);
    CHECK(cfg.model.heads == 4);
    CHECK(cfg.grid.lambda == std::vector<double>{0.0, 0.5, 1.0});
    CHECK_FALSE(cfg.batching.strategy);
    CHECK_THROWS_AS(ExperimentConfig::parse("model.nope = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("model.dim\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("model.dim = x\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("model.dim = -3\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("train.p = 2\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("eval.mode = fancy\n"), ConfigError);
}

TEST_CASE("config load resolves data paths and checks they exist") {
    write_file(tmp("corpus.txt"), "a b\n");
    write_file(tmp("ok.cfg"), "data.train = corpus.txt\n");
    const ExperimentConfig cfg = ExperimentConfig::load(tmp("ok.cfg"));
    CHECK(std::filesystem::equivalent(cfg.data.train, tmp("corpus.txt")));
    write_file(tmp("bad.cfg"), "data.train = nowhere.txt\n");
    CHECK_THROWS_AS(ExperimentConfig::load(tmp("bad.cfg")), ConfigError);
}

TEST_CASE("batching follows the instantiation unless overridden") {
    ExperimentConfig cfg;
    CHECK(effective_strategy(cfg) == BatchStrategy::random);
    cfg.train.instantiation = Instantiation::trime_long;
    CHECK(effective_strategy(cfg) == BatchStrategy::consecutive);
    cfg.train.instantiation = Instantiation::trime_ext;
    CHECK(effective_strategy(cfg) == BatchStrategy::bm25);
    cfg.batching.strategy = BatchStrategy::random;
    CHECK(effective_strategy(cfg) == BatchStrategy::random);
}
