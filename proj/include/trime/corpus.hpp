#pragma once

#include <cstdint>
#include <vector>

#include "trime/model.hpp"

namespace trime {

struct Document {
    std::uint32_t id{0};
    std::vector<TokenId> tokens;
};

using Corpus = std::vector<Document>;

/// Number of (context, next token) pairs: one per token after the first.
inline std::size_t pair_count(const Corpus& corpus) {
    std::size_t n = 0;
    for (const Document& doc : corpus) {
        n += doc.tokens.empty() ? 0 : doc.tokens.size() - 1;
    }
    return n;
}

inline std::size_t token_count(const Corpus& corpus) {
    std::size_t n = 0;
    for (const Document& doc : corpus) {
        n += doc.tokens.size();
    }
    return n;
}

}  // namespace trime
