#include "trime/datastore.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "trime/binary_io.hpp"
#include "trime/error.hpp"
#include "trime/memory.hpp"
#include "trime/parallel.hpp"

namespace trime {

namespace {

constexpr std::uint32_t kVersion = 1;

// Top-k of one score row; ties go to the lower index.
std::vector<Hit> top_k(const Datastore& ds, const double* scores, std::size_t k, const std::uint32_t* exclude) {
    std::vector<std::size_t> order;
    order.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (exclude == nullptr || ds.doc[i] != *exclude) {
            order.push_back(i);
        }
    }
    auto better = [scores](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    };
    const std::size_t take = std::min(k, order.size());
    auto mid = order.begin() + static_cast<std::ptrdiff_t>(take);
    if (take < order.size()) {
        std::nth_element(order.begin(), mid, order.end(), better);
    }
    std::sort(order.begin(), mid, better);
    std::vector<Hit> hits;
    hits.reserve(take);
    for (std::size_t r = 0; r < take; ++r) {
        hits.push_back({order[r], scores[order[r]], ds.targets[order[r]]});
    }
    return hits;
}

}  // namespace

std::vector<EvalWindow> sliding_windows(std::size_t n_tokens, std::size_t window, std::size_t stride) {
    if (window == 0 || stride == 0 || stride > window) {
        throw ConfigError("sliding windows need 1 <= stride <= window");
    }
    std::vector<EvalWindow> out;
    if (n_tokens < 2) {
        return out;
    }
    const std::size_t contexts = n_tokens - 1;
    std::size_t end = std::min(window, contexts);
    out.push_back({0, 0, end});
    while (end < contexts) {
        const std::size_t next = std::min(end + stride, contexts);
        out.push_back({next > window ? next - window : 0, end, next});
        end = next;
    }
    return out;
}

Datastore build_datastore(const ModelConfig& cfg, const ModelParams& params, const Corpus& corpus,
                          std::size_t window, std::size_t stride) {
    if (window == 0 || window > cfg.segment_len) {
        throw ConfigError("datastore window must lie in [1, " + std::to_string(cfg.segment_len) + "]");
    }
    std::vector<std::vector<double>> keys(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t d) {
        Tape::NoGrad no_grad;
        const auto& toks = corpus[d].tokens;
        for (const EvalWindow& w : sliding_windows(toks.size(), window, stride)) {
            const SegmentEncoding enc =
                encode_segment(cfg, params, std::span<const TokenId>(toks.data() + w.begin, w.end - w.begin));
            const auto g = enc.g.data();
            keys[d].insert(keys[d].end(), g.begin() + static_cast<std::ptrdiff_t>((w.score_begin - w.begin) * cfg.dim),
                           g.end());
        }
    });

    Datastore ds;
    ds.dim = cfg.dim;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        const Document& doc = corpus[d];
        for (double k : keys[d]) {
            ds.keys.push_back(static_cast<double>(static_cast<float>(k)));
        }
        for (std::size_t p = 0; p + 1 < doc.tokens.size(); ++p) {
            ds.targets.push_back(doc.tokens[p + 1]);
            ds.doc.push_back(doc.id);
            ds.pos.push_back(static_cast<std::uint32_t>(p));
        }
    }
    return ds;
}

std::vector<std::vector<Hit>> knn_search_batch(const Datastore& ds, std::span<const double> queries, std::size_t k,
                                               std::span<const std::uint32_t> exclude_doc) {
    if (k == 0) {
        throw Error("knn_search: k must be at least 1");
    }
    if (ds.dim == 0 || queries.size() % ds.dim != 0) {
        throw DimensionError("knn_search: query buffer of " + std::to_string(queries.size()) +
                             " values does not match datastore dimension " + std::to_string(ds.dim));
    }
    const std::size_t rows = queries.size() / ds.dim;
    if (!exclude_doc.empty() && exclude_doc.size() != rows) {
        throw DimensionError("knn_search: one excluded doc per query expected");
    }
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMat> q(queries.data(), static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(ds.dim));
    const Eigen::Map<const RowMat> keys(ds.keys.data(), static_cast<Eigen::Index>(ds.size()),
                                        static_cast<Eigen::Index>(ds.dim));
    RowMat scores = (q * keys.transpose()) * similarity_scale(ds.dim);
    std::vector<std::vector<Hit>> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        out[r] = top_k(ds, scores.data() + r * ds.size(), k, exclude_doc.empty() ? nullptr : &exclude_doc[r]);
    }
    return out;
}

std::vector<Hit> knn_search(const Datastore& ds, std::span<const double> query, std::size_t k) {
    if (query.size() != ds.dim) {
        throw DimensionError("knn_search: query has dimension " + std::to_string(query.size()) +
                             ", datastore " + std::to_string(ds.dim));
    }
    return knn_search_batch(ds, query, k).front();
}

void save_datastore(const std::filesystem::path& path, const Datastore& ds) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot write datastore: " + path.string());
    }
    binio::write_magic(os, "TRDS");
    binio::write_le<std::uint32_t>(os, kVersion);
    binio::write_le<std::uint64_t>(os, ds.size());
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.dim));
    for (double k : ds.keys) {
        binio::write_le<float>(os, static_cast<float>(k));
    }
    for (TokenId t : ds.targets) {
        binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t));
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        binio::write_le<std::uint32_t>(os, ds.doc[i]);
        binio::write_le<std::uint32_t>(os, ds.pos[i]);
    }
    if (!os) {
        throw Error("failed writing datastore: " + path.string());
    }
}

Datastore load_datastore(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot read datastore: " + path.string());
    }
    binio::expect_magic(is, "TRDS");
    const auto version = binio::read_le<std::uint32_t>(is, "version");
    if (version != kVersion) {
        throw FormatError("unsupported datastore version " + std::to_string(version));
    }
    const auto n = binio::read_le<std::uint64_t>(is, "entry count");
    const auto dim = binio::read_le<std::uint32_t>(is, "dimension");
    const auto file_size = std::filesystem::file_size(path);
    const std::uint64_t expected = 4 + 4 + 8 + 4 + n * (4ull * dim + 4 + 8);
    if ((dim == 0 && n != 0) || file_size != expected) {
        throw FormatError("datastore size " + std::to_string(file_size) + " does not match header (expected " +
                          std::to_string(expected) + ")");
    }
    Datastore ds;
    ds.dim = dim;
    ds.keys.resize(n * dim);
    ds.targets.resize(n);
    ds.doc.resize(n);
    ds.pos.resize(n);
    for (double& k : ds.keys) {
        k = binio::read_le<float>(is, "keys");
    }
    for (TokenId& t : ds.targets) {
        t = static_cast<TokenId>(binio::read_le<std::uint32_t>(is, "targets"));
    }
    for (std::size_t i = 0; i < n; ++i) {
        ds.doc[i] = binio::read_le<std::uint32_t>(is, "provenance");
        ds.pos[i] = binio::read_le<std::uint32_t>(is, "provenance");
    }
    return ds;
}

}  // namespace trime
