#pragma once

// External memory: one (key, next token) entry per context of a corpus,
// searched exactly by scaled dot product.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "trime/corpus.hpp"
#include "trime/model.hpp"

namespace trime {

struct Datastore {
    std::size_t dim{0};
    std::vector<double> keys;  // N x dim, values representable as f32
    std::vector<TokenId> targets;
    std::vector<std::uint32_t> doc;
    std::vector<std::uint32_t> pos;  // context position; the target is token pos + 1

    std::size_t size() const { return targets.size(); }
    std::span<const double> key(std::size_t i) const { return {keys.data() + i * dim, dim}; }
    bool operator==(const Datastore&) const = default;
};

struct Hit {
    std::size_t index{0};
    double score{0.0};
    TokenId target{0};

    bool operator==(const Hit&) const = default;
};

/// One encoding call of a sliding-window pass over a document: contexts
/// [begin, end) are encoded (context p ends at token p and predicts token
/// p + 1) and contexts [score_begin, end) are the ones it is responsible for.
struct EvalWindow {
    std::size_t begin{0};
    std::size_t score_begin{0};
    std::size_t end{0};

    bool operator==(const EvalWindow&) const = default;
};

/// Windows of at most `window` contexts advancing by `stride`, covering the
/// n_tokens - 1 contexts of a document so that each is scored exactly once.
/// stride == window gives disjoint windows.
std::vector<EvalWindow> sliding_windows(std::size_t n_tokens, std::size_t window, std::size_t stride);

/// Encodes every document with sliding_windows(window, stride) and stores g
/// for each context, taken from the window that scores it, together with
/// its next token. Entries are ordered by (doc, pos).
Datastore build_datastore(const ModelConfig& cfg, const ModelParams& params, const Corpus& corpus,
                          std::size_t window, std::size_t stride);

/// Top-k entries by q.key / sqrt(d), descending, ties to the lower index.
std::vector<Hit> knn_search(const Datastore& ds, std::span<const double> query, std::size_t k);

/// knn_search for each row of `queries` (rows x d, row-major). Entries whose
/// doc equals `exclude_doc[r]` are skipped for row r when that list is given.
std::vector<std::vector<Hit>> knn_search_batch(const Datastore& ds, std::span<const double> queries,
                                               std::size_t k,
                                               std::span<const std::uint32_t> exclude_doc = {});

void save_datastore(const std::filesystem::path& path, const Datastore& ds);
Datastore load_datastore(const std::filesystem::path& path);

}  // namespace trime
