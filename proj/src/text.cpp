#include "trime/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "trime/error.hpp"

namespace trime {

std::vector<std::string> utf8_chars(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        if (c < 0x80) {
            len = 1;
        } else if ((c >> 5) == 0x6) {
            len = 2;
        } else if ((c >> 4) == 0xE) {
            len = 3;
        } else if ((c >> 3) == 0x1E) {
            len = 4;
        } else {
            throw FormatError("invalid UTF-8 lead byte at offset " + std::to_string(i));
        }
        if (i + len > text.size()) {
            throw FormatError("truncated UTF-8 sequence at offset " + std::to_string(i));
        }
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) >> 6) != 0x2) {
                throw FormatError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
            }
        }
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

std::vector<std::vector<std::string>> split_documents(const std::string& text, TokenizerMode mode) {
    std::vector<std::vector<std::string>> docs;
    if (mode == TokenizerMode::char_level) {
        auto chars = utf8_chars(text);
        if (!chars.empty()) {
            docs.push_back(std::move(chars));
        }
        return docs;
    }
    utf8_chars(text);  // validates
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> current;
    auto flush = [&] {
        if (!current.empty()) {
            docs.push_back(std::move(current));
            current.clear();
        }
    };
    while (std::getline(in, line)) {
        std::istringstream words(line);
        std::string w;
        bool any = false;
        while (words >> w) {
            current.push_back(w);
            any = true;
        }
        if (!any) {
            flush();
        }
    }
    flush();
    return docs;
}

// ---------------------------------------------------------------------------
// Vocab

void Vocab::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        index_.emplace(tokens_[i], static_cast<TokenId>(i));
    }
    const auto u = index_.find(kUnk);
    const auto p = index_.find(kPad);
    if (u == index_.end() || p == index_.end()) {
        throw FormatError("vocabulary lacks the <unk>/<pad> entries");
    }
    unk_ = u->second;
    pad_ = p->second;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& docs) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& doc : docs) {
        for (const auto& t : doc) {
            ++counts[t];
        }
    }
    counts.erase(kUnk);
    counts.erase(kPad);
    std::vector<std::pair<std::string, std::uint64_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (auto& [tok, n] : items) {
        v.tokens_.push_back(tok);
        v.freq_.push_back(n);
    }
    v.tokens_.emplace_back(kUnk);
    v.freq_.push_back(0);
    v.tokens_.emplace_back(kPad);
    v.freq_.push_back(0);
    v.reindex();
    return v;
}

TokenId Vocab::id(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? unk_ : it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

Corpus Vocab::encode(const std::vector<std::vector<std::string>>& docs) const {
    Corpus corpus;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        Document doc;
        doc.id = static_cast<std::uint32_t>(d);
        doc.tokens.reserve(docs[d].size());
        for (const auto& t : docs[d]) {
            doc.tokens.push_back(id(t));
        }
        corpus.push_back(std::move(doc));
    }
    return corpus;
}

std::string Vocab::decode(std::span<const TokenId> ids, TokenizerMode mode) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (mode == TokenizerMode::word && i > 0) {
            out += ' ';
        }
        out += token(ids[i]);
    }
    return out;
}

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '\t':
                out += "\\t";
                break;
            case '\n':
                out += "\\n";
                break;
            case '\r':
                out += "\\r";
                break;
            case '\\':
                out += "\\\\";
                break;
            default:
                out += c;
        }
    }
    return out;
}

std::string unescape(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out += s[i];
            continue;
        }
        if (i + 1 == s.size()) {
            throw FormatError("dangling escape in vocabulary entry");
        }
        const char n = s[++i];
        out += n == 't' ? '\t' : n == 'n' ? '\n' : n == 'r' ? '\r' : n;
    }
    return out;
}

}  // namespace

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot write vocabulary: " + path.string());
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        os << escape(tokens_[i]) << '\t' << i << '\t' << freq_[i] << '\n';
    }
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot read vocabulary: " + path.string());
    }
    Vocab v;
    std::string line;
    while (std::getline(is, line)) {
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw FormatError("malformed vocabulary line: " + line);
        }
        const std::size_t id = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
        if (id != v.tokens_.size()) {
            throw FormatError("vocabulary ids must be dense and ordered");
        }
        v.tokens_.push_back(unescape(line.substr(0, t1)));
        v.freq_.push_back(std::stoull(line.substr(t2 + 1)));
    }
    v.reindex();
    return v;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot read " + path.string());
    }
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Ingested ingest(const std::filesystem::path& path, TokenizerMode mode) {
    const auto docs = split_documents(read_text_file(path), mode);
    if (docs.empty()) {
        throw Error("corpus " + path.string() + " is empty");
    }
    Ingested out{Vocab::build(docs), {}};
    out.corpus = out.vocab.encode(docs);
    return out;
}

Corpus encode_file(const std::filesystem::path& path, TokenizerMode mode, const Vocab& vocab) {
    const auto docs = split_documents(read_text_file(path), mode);
    if (docs.empty()) {
        throw Error("corpus " + path.string() + " is empty");
    }
    return vocab.encode(docs);
}

std::vector<std::vector<std::uint32_t>> bm25_terms(std::span<const Segment> segments, const Vocab& vocab,
                                                   TokenizerMode mode) {
    std::vector<std::vector<std::uint32_t>> out;
    out.reserve(segments.size());
    if (mode == TokenizerMode::word) {
        for (const Segment& s : segments) {
            out.emplace_back(s.tokens.begin(), s.tokens.end());
        }
        return out;
    }
    std::unordered_map<std::string, std::uint32_t> words;
    for (const Segment& s : segments) {
        std::istringstream in(vocab.decode(s.tokens, mode));
        std::vector<std::uint32_t> terms;
        std::string w;
        while (in >> w) {
            auto [it, inserted] = words.emplace(w, static_cast<std::uint32_t>(words.size()));
            terms.push_back(it->second);
        }
        out.push_back(std::move(terms));
    }
    return out;
}

}  // namespace trime
