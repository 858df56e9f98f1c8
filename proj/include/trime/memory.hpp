#pragma once

// Training memories built from the segments of one batch.
//
// Every (context, next token) pair in the batch is both a query and a
// potential memory entry. A MemorySpec records, per query, which other
// pairs it may attend to in the objective's memory term.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trime/batching.hpp"

namespace trime {

enum class Instantiation { trime, trime_long, trime_ext };

std::string to_string(Instantiation inst);
Instantiation parse_instantiation(const std::string& s);

/// Scaled dot product q.k / sqrt(d), the one similarity used for training
/// memories, evaluation memories and datastore search.
inline double similarity_scale(std::size_t dim) {
    return 1.0 / std::sqrt(static_cast<double>(dim));
}

inline double similarity(std::span<const double> q, std::span<const double> k) {
    double dot = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        dot += q[i] * k[i];
    }
    return dot * similarity_scale(q.size());
}

struct PairRef {
    std::size_t batch_slot{0};
    std::size_t position{0};  // 0-based context position within the segment
    TokenId target{0};
    std::uint32_t doc{0};
    std::uint32_t ordinal{0};

    bool operator==(const PairRef&) const = default;
};

/// Positions of the local memory of the t-th context of a segment, with t
/// counted from 1 as in c_t = x_1..x_{t-1}: the pairs (c_j, x_j), j <= t-1,
/// which sit at 0-based positions 0..t-2.
std::vector<std::size_t> local_memory(std::size_t t);

/// Pairs of the segments of `doc` that precede its `segment_index`-th
/// segment (counted from 1), drawn from the slots of `batch`.
std::vector<PairRef> long_memory(const Batch& batch, std::span<const Segment> segments, std::uint32_t doc,
                                 std::size_t segment_index);

struct MemorySpec {
    Instantiation mode{Instantiation::trime};
    std::vector<PairRef> pairs;              // queries, in slot-then-position order
    std::vector<std::size_t> slot_offsets;   // first pair index per slot
    std::vector<std::uint8_t> mask;          // pairs x pairs, row = query
    std::vector<std::uint8_t> local_dropped; // per query

    std::size_t size() const { return pairs.size(); }
    bool allows(std::size_t query, std::size_t entry) const { return mask[query * pairs.size() + entry] != 0; }
    std::vector<PairRef> accessible(std::size_t query) const;
    bool any_memory() const;
};

/// trime:      local memory only.
/// trime_long: local plus every pair of earlier segments of the same
///             document in the batch (needs consecutive batching, m > 1).
/// trime_ext:  local plus every pair of every other segment in the batch;
///             each query independently loses its local memory with
///             probability `local_drop_prob` (needs m = 1).
MemorySpec build_train_memory(const Batch& batch, std::span<const Segment> segments, Instantiation inst,
                              double local_drop_prob, std::uint64_t seed);

/// A query sees no memory at all; used for the vanilla objective.
MemorySpec empty_memory(const Batch& batch, std::span<const Segment> segments);

}  // namespace trime
