#include "trime/batching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "trime/error.hpp"
#include "trime/log.hpp"

namespace trime {

TokenId Segment::target(std::size_t pos) const {
    if (pos + 1 < tokens.size()) {
        return tokens[pos + 1];
    }
    if (pos + 1 == tokens.size() && continuation) {
        return *continuation;
    }
    throw IndexError("segment position " + std::to_string(pos) + " has no target");
}

std::vector<Segment> segment_corpus(const Corpus& corpus, std::size_t segment_len) {
    if (segment_len < 2) {
        throw ConfigError("segment length must be at least 2");
    }
    std::vector<Segment> out;
    for (const Document& doc : corpus) {
        if (doc.tokens.empty()) {
            log_warning("skipping empty document " + std::to_string(doc.id));
            continue;
        }
        const std::size_t n = doc.tokens.size();
        std::uint32_t ordinal = 0;
        for (std::size_t begin = 0; begin < n; begin += segment_len, ++ordinal) {
            const std::size_t end = std::min(n, begin + segment_len);
            Segment seg;
            seg.doc = doc.id;
            seg.ordinal = ordinal;
            seg.tokens.assign(doc.tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                              doc.tokens.begin() + static_cast<std::ptrdiff_t>(end));
            if (end < n) {
                seg.continuation = doc.tokens[end];
            }
            out.push_back(std::move(seg));
        }
    }
    return out;
}

std::string to_string(BatchStrategy s) {
    switch (s) {
        case BatchStrategy::random:
            return "random";
        case BatchStrategy::consecutive:
            return "consecutive";
        case BatchStrategy::bm25:
            return "bm25";
    }
    return "?";
}

BatchStrategy parse_batch_strategy(const std::string& s) {
    if (s == "random") {
        return BatchStrategy::random;
    }
    if (s == "consecutive") {
        return BatchStrategy::consecutive;
    }
    if (s == "bm25") {
        return BatchStrategy::bm25;
    }
    throw ConfigError("unknown batching strategy '" + s + "'");
}

namespace {

std::vector<Batch> chunk(std::span<const std::size_t> order, std::size_t batch_size, BatchStrategy strategy) {
    if (batch_size == 0) {
        throw ConfigError("batch size must be at least 1");
    }
    std::vector<Batch> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        Batch b;
        b.strategy = strategy;
        b.run_length = 1;
        const std::size_t end = std::min(order.size(), i + batch_size);
        b.slots.assign(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

std::vector<Batch> batch_random(std::size_t num_segments, std::size_t batch_size, std::uint64_t seed) {
    std::vector<std::size_t> order(num_segments);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return chunk(order, batch_size, BatchStrategy::random);
}

std::vector<Batch> batch_consecutive(std::span<const Segment> segments, std::size_t batch_size,
                                     std::size_t run_length, std::uint64_t seed) {
    if (run_length == 0) {
        throw ConfigError("consecutive batching needs m >= 1");
    }
    if (batch_size == 0) {
        throw ConfigError("batch size must be at least 1");
    }
    // Group segment indices by document in ordinal order.
    std::map<std::uint32_t, std::vector<std::size_t>> by_doc;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        by_doc[segments[i].doc].push_back(i);
    }
    std::vector<std::vector<std::size_t>> runs;
    for (auto& [doc, idx] : by_doc) {
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return segments[a].ordinal < segments[b].ordinal; });
        for (std::size_t i = 0; i < idx.size(); i += run_length) {
            const std::size_t end = std::min(idx.size(), i + run_length);
            runs.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i), idx.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    std::mt19937_64 rng(seed);
    std::shuffle(runs.begin(), runs.end(), rng);

    std::vector<Batch> out;
    Batch current;
    current.strategy = BatchStrategy::consecutive;
    current.run_length = run_length;
    for (const auto& run : runs) {
        if (!current.slots.empty() && current.slots.size() + run.size() > batch_size) {
            out.push_back(current);
            current.slots.clear();
        }
        current.slots.insert(current.slots.end(), run.begin(), run.end());
    }
    if (!current.slots.empty()) {
        out.push_back(std::move(current));
    }
    return out;
}

// ---------------------------------------------------------------------------
// BM25

Bm25Index::Bm25Index(std::vector<std::vector<std::uint32_t>> segment_terms, Bm25Params params)
    : params_(params) {
    term_counts_.reserve(segment_terms.size());
    std::size_t total = 0;
    for (std::size_t s = 0; s < segment_terms.size(); ++s) {
        auto& terms = segment_terms[s];
        lengths_.push_back(terms.size());
        total += terms.size();
        std::sort(terms.begin(), terms.end());
        std::vector<std::pair<std::uint32_t, std::uint32_t>> counts;
        for (std::uint32_t t : terms) {
            if (!counts.empty() && counts.back().first == t) {
                ++counts.back().second;
            } else {
                counts.emplace_back(t, 1);
            }
        }
        for (const auto& [t, tf] : counts) {
            postings_[t].push_back({static_cast<std::uint32_t>(s), tf});
        }
        term_counts_.push_back(std::move(counts));
    }
    avg_length_ = lengths_.empty() || total == 0 ? 1.0 : static_cast<double>(total) / static_cast<double>(lengths_.size());
}

std::size_t Bm25Index::doc_freq(std::uint32_t term) const {
    const auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

std::size_t Bm25Index::term_freq(std::size_t segment, std::uint32_t term) const {
    const auto& counts = term_counts_.at(segment);
    const auto it = std::lower_bound(counts.begin(), counts.end(), std::make_pair(term, std::uint32_t{0}));
    return it != counts.end() && it->first == term ? it->second : 0;
}

double Bm25Index::idf(std::uint32_t term) const {
    const auto n = static_cast<double>(size());
    const auto df = static_cast<double>(doc_freq(term));
    return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double Bm25Index::term_weight(std::uint32_t tf, std::size_t segment, double idf) const {
    const double f = tf;
    const double norm = 1.0 - params_.b + params_.b * static_cast<double>(lengths_[segment]) / avg_length_;
    return idf * (f * (params_.k1 + 1.0)) / (f + params_.k1 * norm);
}

double Bm25Index::score(std::span<const std::uint32_t> query_terms, std::size_t candidate) const {
    std::vector<std::uint32_t> distinct(query_terms.begin(), query_terms.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    double total = 0.0;
    for (std::uint32_t t : distinct) {
        const std::size_t tf = term_freq(candidate, t);
        if (tf > 0) {
            total += term_weight(static_cast<std::uint32_t>(tf), candidate, idf(t));
        }
    }
    return total;
}

double Bm25Index::score(std::size_t query, std::size_t candidate) const {
    double total = 0.0;
    for (const auto& [t, qtf] : term_counts_.at(query)) {
        const std::size_t tf = term_freq(candidate, t);
        if (tf > 0) {
            total += term_weight(static_cast<std::uint32_t>(tf), candidate, idf(t));
        }
    }
    return total;
}

std::vector<std::size_t> Bm25Index::most_similar(std::size_t query, std::size_t k) const {
    const std::size_t n = size();
    std::vector<double> scores(n, 0.0);
    for (const auto& [t, qtf] : term_counts_.at(query)) {
        const double w = idf(t);
        for (const Posting& p : postings_.at(t)) {
            scores[p.segment] += term_weight(p.tf, p.segment, w);
        }
    }
    std::vector<std::size_t> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i != query) {
            ids.push_back(i);
        }
    }
    const std::size_t take = std::min(k, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) {
                              return scores[a] > scores[b];
                          }
                          return a < b;
                      });
    ids.resize(take);
    return ids;
}

std::vector<Batch> pack_bm25(const Bm25Index& index, std::size_t batch_size, std::size_t k, std::uint64_t seed) {
    if (k == 0) {
        throw ConfigError("bm25 packing needs k >= 1");
    }
    const std::size_t n = index.size();
    // Unused set with O(1) removal and uniform sampling.
    std::vector<std::size_t> pool(n), where(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::iota(where.begin(), where.end(), std::size_t{0});
    std::vector<bool> unused(n, true);
    auto remove = [&](std::size_t s) {
        const std::size_t at = where[s];
        const std::size_t last = pool.back();
        pool[at] = last;
        where[last] = at;
        pool.pop_back();
        unused[s] = false;
    };

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> chain;
    chain.reserve(n);
    std::optional<std::size_t> current;
    while (!pool.empty()) {
        if (!current) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            current = pool[pick(rng)];
        }
        chain.push_back(*current);
        remove(*current);
        std::optional<std::size_t> next;
        for (std::size_t cand : index.most_similar(*current, k)) {
            if (unused[cand]) {
                next = cand;
                break;
            }
        }
        current = next;
    }
    return chunk(chain, batch_size, BatchStrategy::bm25);
}

double mean_within_batch_bm25(const Bm25Index& index, std::span<const Batch> batches) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (const Batch& b : batches) {
        for (std::size_t i = 0; i < b.slots.size(); ++i) {
            for (std::size_t j = 0; j < b.slots.size(); ++j) {
                if (i != j) {
                    total += index.score(b.slots[i], b.slots[j]);
                    ++pairs;
                }
            }
        }
    }
    return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

void write_batch_order(const std::filesystem::path& path, std::span<const Batch> batches,
                       std::span<const Segment> segments) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw Error("cannot write batch order: " + path.string());
    }
    for (const Batch& b : batches) {
        for (std::size_t i = 0; i < b.slots.size(); ++i) {
            const Segment& s = segments[b.slots[i]];
            os << (i ? "," : "") << s.doc << ':' << s.ordinal;
        }
        os << '\n';
    }
}

std::vector<Batch> read_batch_order(const std::filesystem::path& path, std::span<const Segment> segments,
                                    BatchStrategy strategy, std::size_t run_length) {
    std::ifstream is(path);
    if (!is) {
        throw Error("cannot read batch order: " + path.string());
    }
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> lookup;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        lookup[{segments[i].doc, segments[i].ordinal}] = i;
    }
    std::vector<Batch> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        Batch b;
        b.strategy = strategy;
        b.run_length = run_length;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) {
                throw FormatError("bad batch order entry '" + item + "'");
            }
            const auto doc = static_cast<std::uint32_t>(std::stoul(item.substr(0, colon)));
            const auto ord = static_cast<std::uint32_t>(std::stoul(item.substr(colon + 1)));
            const auto it = lookup.find({doc, ord});
            if (it == lookup.end()) {
                throw FormatError("batch order references unknown segment " + item);
            }
            b.slots.push_back(it->second);
        }
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace trime
