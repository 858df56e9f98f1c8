#pragma once

// Tokenization and vocabularies.
//
// char mode: a file is one document; tokens are Unicode code points.
// word mode: documents are separated by blank lines; tokens are
// whitespace-delimited words.

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "trime/config.hpp"
#include "trime/corpus.hpp"

namespace trime {

/// Splits UTF-8 text into code points (each returned as its UTF-8 bytes).
/// Throws FormatError on malformed input.
std::vector<std::string> utf8_chars(const std::string& text);

/// Raw documents of a text under the given mode, as token strings.
std::vector<std::vector<std::string>> split_documents(const std::string& text, TokenizerMode mode);

class Vocab {
public:
    static constexpr const char* kUnk = "<unk>";
    static constexpr const char* kPad = "<pad>";

    /// Regular tokens sorted by frequency (descending) then bytewise, then
    /// <unk> and <pad>.
    static Vocab build(const std::vector<std::vector<std::string>>& docs);

    std::size_t size() const { return tokens_.size(); }
    TokenId unk() const { return unk_; }
    TokenId pad() const { return pad_; }
    /// Id of a token, unk when absent.
    TokenId id(const std::string& token) const;
    const std::string& token(TokenId id) const;
    const std::vector<std::uint64_t>& frequencies() const { return freq_; }

    Corpus encode(const std::vector<std::vector<std::string>>& docs) const;
    /// Concatenation (char mode) or space-joined words (word mode).
    std::string decode(std::span<const TokenId> ids, TokenizerMode mode) const;

    /// TSV "token<TAB>id<TAB>frequency"; tab, newline, carriage return and
    /// backslash inside tokens are written as \t, \n, \r and \\.
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_ && freq_ == other.freq_; }

private:
    std::vector<std::string> tokens_;
    std::vector<std::uint64_t> freq_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId unk_{0};
    TokenId pad_{0};

    void reindex();
};

std::string read_text_file(const std::filesystem::path& path);

struct Ingested {
    Vocab vocab;
    Corpus corpus;
};

/// Builds the vocabulary from a training file and encodes it.
Ingested ingest(const std::filesystem::path& path, TokenizerMode mode);

/// Encodes another split with an existing vocabulary (OOV maps to unk).
Corpus encode_file(const std::filesystem::path& path, TokenizerMode mode, const Vocab& vocab);

/// BM25 terms per segment: token ids in word mode, whitespace words of
/// the decoded text in char mode.
std::vector<std::vector<std::uint32_t>> bm25_terms(std::span<const Segment> segments, const Vocab& vocab,
                                                   TokenizerMode mode);

}  // namespace trime
