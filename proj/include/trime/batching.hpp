#pragma once

// Segmentation of documents and the three batch constructions: random
// segments, runs of consecutive segments per document, and chains of
// lexically similar segments ranked by BM25.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "trime/corpus.hpp"

namespace trime {

struct Segment {
    std::uint32_t doc{0};
    std::uint32_t ordinal{0};  // 0 is the document start
    std::vector<TokenId> tokens;
    /// First token of the next segment of the same document, if any. The
    /// last position of the segment predicts it.
    std::optional<TokenId> continuation;

    /// Context-target pairs this segment contributes: one per position
    /// that has a next token.
    std::size_t pair_count() const { return tokens.size() - 1 + (continuation ? 1 : 0); }
    /// Next token after position `pos` (0-based).
    TokenId target(std::size_t pos) const;
};

/// Splits each document into ceil(len / segment_len) segments; the final
/// short segment is kept. Empty documents are skipped with a warning.
std::vector<Segment> segment_corpus(const Corpus& corpus, std::size_t segment_len);

enum class BatchStrategy { random, consecutive, bm25 };

std::string to_string(BatchStrategy s);
BatchStrategy parse_batch_strategy(const std::string& s);

struct Batch {
    BatchStrategy strategy{BatchStrategy::random};
    std::size_t run_length{1};         // m: consecutive segments per document
    std::vector<std::size_t> slots;    // indices into the segment list
};

std::vector<Batch> batch_random(std::size_t num_segments, std::size_t batch_size, std::uint64_t seed);

/// Runs of `run_length` consecutive segments from one document, whole runs
/// shuffled and packed into batches of about batch_size / run_length
/// documents. A document's segments within a batch keep ordinal order.
std::vector<Batch> batch_consecutive(std::span<const Segment> segments, std::size_t batch_size,
                                     std::size_t run_length, std::uint64_t seed);

// ---------------------------------------------------------------------------
// BM25

struct Bm25Params {
    double k1{1.2};
    double b{0.75};
};

/// Term statistics over a fixed set of segments (each segment is one
/// "document" for ranking purposes).
class Bm25Index {
public:
    Bm25Index(std::vector<std::vector<std::uint32_t>> segment_terms, Bm25Params params = {});

    std::size_t size() const { return lengths_.size(); }
    double avg_length() const { return avg_length_; }
    std::size_t doc_freq(std::uint32_t term) const;
    std::size_t term_freq(std::size_t segment, std::uint32_t term) const;
    double idf(std::uint32_t term) const;
    const Bm25Params& params() const { return params_; }

    /// Score of `candidate` for the distinct terms of `query`.
    double score(std::size_t query, std::size_t candidate) const;
    double score(std::span<const std::uint32_t> query_terms, std::size_t candidate) const;

    /// The k segments most similar to `query` (never `query` itself), by
    /// descending score then ascending segment id. Zero-score segments are
    /// eligible so the list has min(k, size() - 1) entries.
    std::vector<std::size_t> most_similar(std::size_t query, std::size_t k) const;

private:
    struct Posting {
        std::uint32_t segment;
        std::uint32_t tf;
    };

    Bm25Params params_;
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> term_counts_;  // sorted by term
    std::vector<std::size_t> lengths_;
    std::unordered_map<std::uint32_t, std::vector<Posting>> postings_;
    double avg_length_{0.0};

    double term_weight(std::uint32_t tf, std::size_t segment, double idf) const;
};

/// Greedy chaining: start from a random unused segment, repeatedly follow
/// the best-ranked unused segment among its top-k neighbours, restart from
/// a random unused segment when all of them are used, then cut the chain
/// into batches of batch_size.
std::vector<Batch> pack_bm25(const Bm25Index& index, std::size_t batch_size, std::size_t k, std::uint64_t seed);

/// Mean BM25 score over ordered pairs of distinct segments sharing a batch.
double mean_within_batch_bm25(const Bm25Index& index, std::span<const Batch> batches);

// Batch order cache: one line per batch of comma-separated "doc:ordinal".
void write_batch_order(const std::filesystem::path& path, std::span<const Batch> batches,
                       std::span<const Segment> segments);
std::vector<Batch> read_batch_order(const std::filesystem::path& path, std::span<const Segment> segments,
                                    BatchStrategy strategy, std::size_t run_length);

}  // namespace trime
