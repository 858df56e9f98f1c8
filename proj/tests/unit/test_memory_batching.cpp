#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"

#include "trime/batching.hpp"
#include "trime/error.hpp"
#include "trime/memory.hpp"

using namespace trime;

namespace {

Corpus random_corpus(std::mt19937_64& rng, std::size_t docs, std::size_t max_len, std::size_t vocab) {
    Corpus c;
    for (std::size_t d = 0; d < docs; ++d) {
        Document doc{static_cast<std::uint32_t>(d), {}};
        const std::size_t n = 1 + rng() % max_len;
        for (std::size_t i = 0; i < n; ++i) {
            doc.tokens.push_back(static_cast<TokenId>(rng() % vocab));
        }
        c.push_back(doc);
    }
    return c;
}

std::vector<std::size_t> flatten(const std::vector<Batch>& batches) {
    std::vector<std::size_t> all;
    for (const Batch& b : batches) {
        all.insert(all.end(), b.slots.begin(), b.slots.end());
    }
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

std::vector<std::vector<std::uint32_t>> id_terms(const std::vector<Segment>& segs) {
    std::vector<std::vector<std::uint32_t>> out;
    for (const Segment& s : segs) {
        out.emplace_back(s.tokens.begin(), s.tokens.end());
    }
    return out;
}

}  // namespace

TEST_CASE("local memory of the t-th context is the t-1 earlier pairs") {
    CHECK(local_memory(1).empty());
    CHECK(local_memory(2) == std::vector<std::size_t>{0});
    CHECK(local_memory(4) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("segmentation covers every pair exactly once") {
    const Corpus c{{0, {1, 2, 3, 4, 5, 6, 7}}, {1, {8}}, {2, {}}, {3, {9, 10, 11}}};
    const auto segs = segment_corpus(c, 3);
    REQUIRE(segs.size() == 5);
    CHECK(segs[0].tokens == std::vector<TokenId>{1, 2, 3});
    CHECK(segs[0].continuation == 4);
    CHECK(segs[2].tokens == std::vector<TokenId>{7});
    CHECK_FALSE(segs[2].continuation);
    CHECK(segs[2].ordinal == 2);
    CHECK(segs[3].pair_count() == 0);
    std::size_t pairs = 0;
    for (const Segment& s : segs) pairs += s.pair_count();
    CHECK(pairs == pair_count(c));
    CHECK(segs[0].target(2) == 4);
    CHECK_THROWS_AS(segs[2].target(0), IndexError);
}

TEST_CASE("training memory masks per instantiation") {
    const Corpus c{{0, {1, 2, 3, 4, 5, 6}}, {1, {7, 8, 9}}};
    const auto segs = segment_corpus(c, 3);  // doc0: [1 2 3|4] [4 5 6], doc1: [7 8 9]

    SUBCASE("trime: only earlier positions of the same segment") {
        Batch b;
        b.slots = {0, 2};
        const MemorySpec m = build_train_memory(b, segs, Instantiation::trime, 0.0, 0);
        REQUIRE(m.size() == 5);
        CHECK(m.accessible(0).empty());
        CHECK(m.accessible(2).size() == 2);
        CHECK(m.accessible(4) == std::vector<PairRef>{{1, 0, 8, 1, 0}});
    }
    SUBCASE("trime_long adds earlier segments of the same document") {
        Batch b;
        b.strategy = BatchStrategy::consecutive;
        b.run_length = 2;
        b.slots = {0, 1};
        const MemorySpec m = build_train_memory(b, segs, Instantiation::trime_long, 0.0, 0);
        REQUIRE(m.size() == 5);
        CHECK(m.accessible(3).size() == 3);
        CHECK(m.accessible(4).size() == 4);
        CHECK(m.accessible(1).size() == 1);
        Batch bad = b;
        bad.run_length = 1;
        CHECK_THROWS_AS(build_train_memory(bad, segs, Instantiation::trime_long, 0.0, 0), ConfigError);
    }
    SUBCASE("trime_ext: every other segment, local dropped with p") {
        Batch b;
        b.slots = {0, 1, 2};
        const MemorySpec keep = build_train_memory(b, segs, Instantiation::trime_ext, 0.0, 0);
        CHECK(keep.accessible(2).size() == 2 + 4);
        const MemorySpec drop = build_train_memory(b, segs, Instantiation::trime_ext, 1.0, 0);
        for (std::size_t q = 0; q < drop.size(); ++q) {
            CHECK(drop.local_dropped[q] == 1);
            for (const PairRef& p : drop.accessible(q)) {
                CHECK(p.batch_slot != drop.pairs[q].batch_slot);
            }
        }
    }
    SUBCASE("empty memory") {
        Batch b;
        b.slots = {0, 1, 2};
        CHECK_FALSE(empty_memory(b, segs).any_memory());
    }
}

TEST_CASE("local dropout rate follows p") {
    std::mt19937_64 rng(2);
    const Corpus c = random_corpus(rng, 40, 30, 10);
    const auto segs = segment_corpus(c, 16);
    Batch b;
    b.slots = iota(segs.size());
    const MemorySpec m = build_train_memory(b, segs, Instantiation::trime_ext, 0.3, 9);
    double dropped = 0.0;
    for (auto d : m.local_dropped) dropped += d;
    CHECK(dropped / static_cast<double>(m.size()) == doctest::Approx(0.3).epsilon(0.2));
}

TEST_CASE("all strategies partition the segments") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const Corpus c = random_corpus(rng, 1 + rng() % 12, 50, 12);
        const auto segs = segment_corpus(c, 4 + rng() % 6);
        const std::size_t B = 1 + rng() % 6;
        CHECK(flatten(batch_random(segs.size(), B, trial)) == iota(segs.size()));
        CHECK(flatten(batch_consecutive(segs, B, 1 + rng() % 3, trial)) == iota(segs.size()));
        const Bm25Index index(id_terms(segs));
        CHECK(flatten(pack_bm25(index, B, 1 + rng() % 5, trial)) == iota(segs.size()));
    }
}

TEST_CASE("consecutive batches keep document order within a batch") {
    std::mt19937_64 rng(4);
    const Corpus c = random_corpus(rng, 6, 60, 8);
    const auto segs = segment_corpus(c, 5);
    for (const Batch& b : batch_consecutive(segs, 6, 3, 1)) {
        CHECK(b.strategy == BatchStrategy::consecutive);
        for (std::size_t i = 1; i < b.slots.size(); ++i) {
            const Segment& prev = segs[b.slots[i - 1]];
            const Segment& cur = segs[b.slots[i]];
            if (prev.doc == cur.doc) {
                CHECK(cur.ordinal == prev.ordinal + 1);
            }
        }
    }
}

TEST_CASE("batches are a pure function of the seed") {
    std::mt19937_64 rng(8);
    const Corpus c = random_corpus(rng, 10, 40, 10);
    const auto segs = segment_corpus(c, 6);
    const Bm25Index index(id_terms(segs));
    auto slots = [](const std::vector<Batch>& bs) {
        std::vector<std::vector<std::size_t>> out;
        for (const Batch& b : bs) out.push_back(b.slots);
        return out;
    };
    CHECK(slots(pack_bm25(index, 4, 3, 5)) == slots(pack_bm25(index, 4, 3, 5)));
    CHECK(slots(batch_random(segs.size(), 4, 5)) == slots(batch_random(segs.size(), 4, 5)));
    CHECK(slots(batch_random(segs.size(), 4, 5)) != slots(batch_random(segs.size(), 4, 6)));
}

TEST_CASE("BM25 on a three-document toy matches a hand computation") {
    // terms: 1 = "the", 2 = "cat", 3 = "sat", 4 = "dog", 5 = "ran"
    const std::vector<std::vector<std::uint32_t>> docs{{1, 2, 3}, {1, 4, 3, 1}, {2, 5}};
    const Bm25Index index(docs);
    CHECK(index.avg_length() == doctest::Approx(3.0));
    CHECK(index.doc_freq(1) == 2);
    CHECK(index.term_freq(1, 1) == 2);
    // idf = ln(1 + (N - n + 0.5) / (n + 0.5))
    const double idf_the = std::log(1.0 + 1.5 / 2.5);
    const double idf_sat = idf_the;
    const double idf_cat = idf_the;
    CHECK(index.idf(1) == doctest::Approx(idf_the).epsilon(1e-15));
    auto w = [](double tf, double len) { return tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / 3.0)); };
    // query doc 0 {the, cat, sat} against doc 1 (len 4): the tf 2, sat tf 1
    const double s01 = idf_the * w(2, 4) + idf_sat * w(1, 4);
    CHECK(std::abs(index.score(0, 1) - s01) < 1e-12);
    // against doc 2 (len 2): cat tf 1
    CHECK(std::abs(index.score(0, 2) - idf_cat * w(1, 2)) < 1e-12);
    CHECK(index.most_similar(0, 2) == std::vector<std::size_t>{1, 2});
    CHECK(index.most_similar(2, 5).size() == 2);
}

TEST_CASE("BM25 packing groups lexically similar segments") {
    // Two interleaved topics with disjoint terms.
    std::vector<std::vector<std::uint32_t>> terms;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 64; ++i) {
        std::vector<std::uint32_t> t;
        for (int k = 0; k < 10; ++k) t.push_back(static_cast<std::uint32_t>((i % 2) * 100 + rng() % 20));
        terms.push_back(t);
    }
    const Bm25Index index(terms);
    const auto packed = pack_bm25(index, 8, 5, 1);
    const auto random = batch_random(terms.size(), 8, 1);
    CHECK(mean_within_batch_bm25(index, packed) > 1.5 * mean_within_batch_bm25(index, random));
}

TEST_CASE("batch order cache round trip") {
    std::mt19937_64 rng(6);
    const Corpus c = random_corpus(rng, 5, 30, 8);
    const auto segs = segment_corpus(c, 4);
    const auto batches = batch_consecutive(segs, 4, 2, 3);
    const auto path = std::filesystem::path(TRIME_TEST_TMP) / "order.txt";
    std::filesystem::create_directories(path.parent_path());
    write_batch_order(path, batches, segs);
    const auto back = read_batch_order(path, segs, BatchStrategy::consecutive, 2);
    REQUIRE(back.size() == batches.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].slots == batches[i].slots);
    }
}
