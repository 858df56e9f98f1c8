#include "trime/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "trime/error.hpp"

namespace trime {

namespace {

std::string copy_lines(std::size_t n, const CopyCorpusOptions& opt, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> len(opt.min_prefix, opt.max_prefix);
    std::uniform_int_distribution<int> letter(0, 25);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string prefix;
        const std::size_t l = len(rng);
        for (std::size_t k = 0; k < l; ++k) {
            prefix += static_cast<char>('a' + letter(rng));
        }
        out += prefix + " " + kCopyMarker + " " + prefix + "\n";
    }
    return out;
}

// Zipf(1) sampler over [0, n).
class Zipf {
public:
    explicit Zipf(std::size_t n) {
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = 1.0 / static_cast<double>(i + 1);
        }
        dist_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
    }
    std::size_t operator()(std::mt19937_64& rng) { return dist_(rng); }

private:
    std::discrete_distribution<std::size_t> dist_;
};

std::string word(const char* stem, std::size_t i) { return stem + std::to_string(i); }

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        out += (i ? " " : "") + words[i];
    }
    return out;
}

std::string join_docs(const std::vector<std::string>& docs) {
    std::string out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        out += (i ? "\n\n" : "") + docs[i];
    }
    return out + "\n";
}

}  // namespace

Splits copy_corpus(const CopyCorpusOptions& opt) {
    if (opt.min_prefix == 0 || opt.min_prefix > opt.max_prefix) {
        throw ConfigError("copy corpus needs 1 <= min_prefix <= max_prefix");
    }
    std::mt19937_64 rng(opt.seed);
    Splits s;
    s.train = copy_lines(opt.train_lines, opt, rng);
    s.dev = copy_lines(opt.dev_lines, opt, rng);
    s.test = copy_lines(opt.test_lines, opt, rng);
    return s;
}

Splits dup_family_corpus(const DupFamilyOptions& opt) {
    if (opt.families == 0 || opt.train_members == 0 || opt.doc_words == 0 || opt.vocab_words == 0) {
        throw ConfigError("duplicate-family corpus needs positive sizes");
    }
    std::mt19937_64 rng(opt.seed);
    Zipf zipf(opt.vocab_words);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto mutate = [&](const std::vector<std::string>& base) {
        std::vector<std::string> m = base;
        for (auto& w : m) {
            if (unit(rng) < opt.mutation_rate) {
                w = word("w", zipf(rng));
            }
        }
        return m;
    };

    std::vector<std::string> train, dev, test;
    for (std::size_t f = 0; f < opt.families; ++f) {
        std::vector<std::string> base(opt.doc_words);
        for (auto& w : base) {
            w = word("w", zipf(rng));
        }
        std::vector<std::string> members;
        for (std::size_t m = 0; m < opt.train_members; ++m) {
            members.push_back(join_words(mutate(base)));
            train.push_back(members.back());
        }
        for (std::size_t m = 0; m < opt.dev_members; ++m) {
            dev.push_back(opt.exact_eval_copies ? members[m % members.size()] : join_words(mutate(base)));
        }
        for (std::size_t m = 0; m < opt.test_members; ++m) {
            test.push_back(opt.exact_eval_copies ? members[(m + opt.dev_members) % members.size()]
                                                 : join_words(mutate(base)));
        }
    }
    std::shuffle(train.begin(), train.end(), rng);
    return {join_docs(train), join_docs(dev), join_docs(test)};
}

DomainShiftCorpus domain_shift_corpus(const DomainShiftOptions& opt) {
    if (opt.topic_words == 0 || opt.phrases == 0 || opt.doc_words == 0) {
        throw ConfigError("domain-shift corpus needs positive sizes");
    }
    static const std::vector<std::string> function_words = {"the", "of",   "and",  "a",    "to",  "in",
                                                            "is",  "was",  "for",  "on",   "with", "as",
                                                            "by",  "that", "from", "this", "at",  "it"};
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<std::size_t> phrase_len(5, 10);

    auto make_domain = [&](const char* stem) {
        std::uniform_int_distribution<std::size_t> topic(0, opt.topic_words - 1);
        std::uniform_int_distribution<std::size_t> fw(0, function_words.size() - 1);
        std::uniform_int_distribution<std::size_t> pick(0, opt.phrases - 1);
        std::vector<std::vector<std::string>> phrases(opt.phrases);
        for (auto& p : phrases) {
            const std::size_t n = phrase_len(rng);
            for (std::size_t i = 0; i < n; ++i) {
                p.push_back(i % 2 == 0 ? word(stem, topic(rng)) : function_words[fw(rng)]);
            }
        }
        auto make_split = [&] {
            std::vector<std::string> docs;
            for (std::size_t d = 0; d < opt.docs_per_split; ++d) {
                std::vector<std::string> words;
                while (words.size() < opt.doc_words) {
                    const auto& p = phrases[pick(rng)];
                    words.insert(words.end(), p.begin(), p.end());
                }
                words.resize(opt.doc_words);
                docs.push_back(join_words(words));
            }
            return docs;
        };
        auto train = make_split();
        auto dev = make_split();
        auto test = make_split();
        return std::array<std::vector<std::string>, 3>{train, dev, test};
    };

    auto a = make_domain("a");
    auto b = make_domain("b");
    std::vector<std::string> glossary;
    for (const char* stem : {"a", "b"}) {
        for (std::size_t i = 0; i < opt.topic_words; ++i) {
            glossary.push_back(word(stem, i));
        }
    }
    glossary.insert(glossary.end(), function_words.begin(), function_words.end());
    a[0].push_back(join_words(glossary));

    DomainShiftCorpus out;
    out.a = {join_docs(a[0]), join_docs(a[1]), join_docs(a[2])};
    out.b = {join_docs(b[0]), join_docs(b[1]), join_docs(b[2])};
    return out;
}

}  // namespace trime
