#pragma once

// Synthetic corpora for the desk experiments. Every generator is a pure
// function of its options (including the seed).

#include <cstdint>
#include <string>
#include <vector>

namespace trime {

struct Splits {
    std::string train;
    std::string dev;
    std::string test;
};

/// Character-level lines "prefix ▸ prefix\n" with random lowercase
/// prefixes; the second copy is predictable only by copying.
struct CopyCorpusOptions {
    std::size_t train_lines{2000};
    std::size_t dev_lines{200};
    std::size_t test_lines{200};
    std::size_t min_prefix{8};
    std::size_t max_prefix{12};
    std::uint64_t seed{1};
};

inline constexpr const char* kCopyMarker = "\xE2\x96\xB8";  // U+25B8

Splits copy_corpus(const CopyCorpusOptions& opt);

/// Word-level families of near-duplicate documents: each family has a base
/// text and members that replace a fraction of its words. Members are split
/// between train, dev and test. With `exact_eval_copies`, dev and test
/// documents are verbatim copies of training members instead.
struct DupFamilyOptions {
    std::size_t families{40};
    std::size_t train_members{4};
    std::size_t dev_members{1};
    std::size_t test_members{1};
    std::size_t doc_words{120};
    std::size_t vocab_words{2000};
    double mutation_rate{0.15};
    bool exact_eval_copies{false};
    std::uint64_t seed{1};
};

Splits dup_family_corpus(const DupFamilyOptions& opt);

/// Two word-level domains with disjoint topic vocabularies over a shared
/// set of function words. Domain A's training split ends with a glossary
/// document listing every topic word of both domains, so a vocabulary
/// built from it covers domain B.
struct DomainShiftOptions {
    std::size_t docs_per_split{40};
    std::size_t doc_words{100};
    std::size_t topic_words{300};
    std::size_t phrases{30};
    std::uint64_t seed{1};
};

struct DomainShiftCorpus {
    Splits a;
    Splits b;
};

DomainShiftCorpus domain_shift_corpus(const DomainShiftOptions& opt);

}  // namespace trime
