#include "trime/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "trime/error.hpp"

namespace trime {

std::string to_string(TokenizerMode mode) { return mode == TokenizerMode::char_level ? "char" : "word"; }

TokenizerMode parse_tokenizer_mode(const std::string& s) {
    if (s == "char") {
        return TokenizerMode::char_level;
    }
    if (s == "word") {
        return TokenizerMode::word;
    }
    throw ConfigError("unknown tokenizer mode '" + s + "' (expected char or word)");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(key + ": '" + v + "' is not a number");
    }
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    if (trim(v).empty()) {
        return out;
    }
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(trim(item));
    }
    return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F&& fmt) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + fmt(v[i]);
    }
    return out;
}

struct Field {
    const char* key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define SIZE_FIELD(KEY, MEMBER)                                                                     \
    Field {                                                                                         \
        KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },                    \
            [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_uint(KEY, v); }        \
    }
#define DOUBLE_FIELD(KEY, MEMBER)                                                                   \
    Field {                                                                                         \
        KEY, [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); },                        \
            [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); }      \
    }
#define STRING_FIELD(KEY, MEMBER)                                                                   \
    Field {                                                                                         \
        KEY, [](const ExperimentConfig& c) { return c.MEMBER; },                                    \
            [](ExperimentConfig& c, const std::string& v) { c.MEMBER = v; }                         \
    }
#define DOUBLE_LIST_FIELD(KEY, MEMBER)                                                              \
    Field {                                                                                         \
        KEY, [](const ExperimentConfig& c) { return join(c.MEMBER, fmt_double); },                  \
            [](ExperimentConfig& c, const std::string& v) {                                         \
                c.MEMBER.clear();                                                                   \
                for (const auto& s : split_list(v)) c.MEMBER.push_back(parse_double(KEY, s));       \
            }                                                                                       \
    }
#define SIZE_LIST_FIELD(KEY, MEMBER)                                                                \
    Field {                                                                                         \
        KEY, [](const ExperimentConfig& c) {                                                        \
            return join(c.MEMBER, [](std::size_t x) { return std::to_string(x); });                 \
        },                                                                                          \
            [](ExperimentConfig& c, const std::string& v) {                                         \
                c.MEMBER.clear();                                                                   \
                for (const auto& s : split_list(v)) c.MEMBER.push_back(parse_uint(KEY, s));         \
            }                                                                                       \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
              [](ExperimentConfig& c, const std::string& v) { c.set_seed(parse_uint("seed", v)); }},
        STRING_FIELD("data.train", data.train),
        STRING_FIELD("data.dev", data.dev),
        STRING_FIELD("data.test", data.test),
        Field{"data.tokenizer", [](const ExperimentConfig& c) { return to_string(c.data.tokenizer); },
              [](ExperimentConfig& c, const std::string& v) { c.data.tokenizer = parse_tokenizer_mode(v); }},
        SIZE_FIELD("model.dim", model.dim),
        SIZE_FIELD("model.layers", model.layers),
        SIZE_FIELD("model.heads", model.heads),
        SIZE_FIELD("model.segment_len", model.segment_len),
        SIZE_FIELD("model.ffn_dim", model.ffn_dim),
        Field{"train.instantiation",
              [](const ExperimentConfig& c) {
                  return c.train.instantiation ? to_string(*c.train.instantiation) : std::string("vanilla");
              },
              [](ExperimentConfig& c, const std::string& v) {
                  c.train.instantiation = v == "vanilla" ? std::nullopt
                                                         : std::optional<Instantiation>(parse_instantiation(v));
              }},
        DOUBLE_FIELD("train.p", train.local_drop_prob),
        DOUBLE_FIELD("train.warmup_fraction", train.warmup_fraction),
        SIZE_FIELD("train.steps", train.total_steps),
        DOUBLE_FIELD("train.lr", train.learning_rate),
        DOUBLE_FIELD("train.beta1", train.beta1),
        DOUBLE_FIELD("train.beta2", train.beta2),
        DOUBLE_FIELD("train.adam_eps", train.adam_eps),
        DOUBLE_FIELD("train.clip_norm", train.clip_norm),
        SIZE_FIELD("train.log_every", log_every),
        SIZE_FIELD("train.checkpoint_every", checkpoint_every),
        Field{"batch.strategy",
              [](const ExperimentConfig& c) {
                  return c.batching.strategy ? to_string(*c.batching.strategy) : std::string("auto");
              },
              [](ExperimentConfig& c, const std::string& v) {
                  c.batching.strategy = v == "auto" ? std::nullopt
                                                    : std::optional<BatchStrategy>(parse_batch_strategy(v));
              }},
        SIZE_FIELD("batch.size", batching.batch_size),
        SIZE_FIELD("batch.m", batching.run_length),
        SIZE_FIELD("batch.bm25_k", batching.bm25_k),
        Field{"eval.mode", [](const ExperimentConfig& c) { return to_string(c.eval.mode); },
              [](ExperimentConfig& c, const std::string& v) { c.eval.mode = parse_eval_mode(v); }},
        DOUBLE_FIELD("eval.tau", eval.tau),
        DOUBLE_FIELD("eval.tau_prime", eval.tau_prime),
        DOUBLE_FIELD("eval.lambda", eval.lambda),
        SIZE_FIELD("eval.k", eval.k),
        SIZE_FIELD("eval.long_memory_tokens", eval.long_memory_tokens),
        SIZE_FIELD("eval.window", eval.window),
        SIZE_FIELD("eval.stride", eval.stride),
        Field{"eval.datastore_shares_corpus",
              [](const ExperimentConfig& c) { return std::string(c.eval.datastore_shares_corpus ? "true" : "false"); },
              [](ExperimentConfig& c, const std::string& v) {
                  c.eval.datastore_shares_corpus = parse_bool("eval.datastore_shares_corpus", v);
              }},
        Field{"eval.tune", [](const ExperimentConfig& c) { return std::string(c.tune ? "true" : "false"); },
              [](ExperimentConfig& c, const std::string& v) { c.tune = parse_bool("eval.tune", v); }},
        DOUBLE_LIST_FIELD("eval.grid.tau", grid.tau),
        DOUBLE_LIST_FIELD("eval.grid.tau_prime", grid.tau_prime),
        DOUBLE_LIST_FIELD("eval.grid.lambda", grid.lambda),
        SIZE_LIST_FIELD("eval.grid.long_memory_tokens", grid.long_memory_tokens),
        SIZE_LIST_FIELD("eval.retrieval_ks", retrieval_ks),
        STRING_FIELD("output.dir", out_dir),
    };
    return table;
}

}  // namespace

ExperimentConfig::ExperimentConfig() : grid(TuneGrid::defaults(64)) { set_seed(seed); }

void ExperimentConfig::set_seed(std::uint64_t s) {
    seed = s;
    model.seed = s;
    train.seed = s;
}

void ExperimentConfig::validate() const {
    ModelConfig m = model;
    if (m.vocab_size == 0) {
        m.vocab_size = 1;
    }
    m.validate();
    train.validate();
    eval.validate();
    if (batching.batch_size == 0) {
        throw ConfigError("batch.size must be at least 1");
    }
    if (batching.run_length == 0) {
        throw ConfigError("batch.m must be at least 1");
    }
    if (batching.bm25_k == 0) {
        throw ConfigError("batch.bm25_k must be at least 1");
    }
    if (log_every == 0) {
        throw ConfigError("train.log_every must be at least 1");
    }
    if (eval.window > model.segment_len) {
        throw ConfigError("eval.window exceeds model.segment_len");
    }
    for (std::size_t k : retrieval_ks) {
        if (k == 0) {
            throw ConfigError("eval.retrieval_ks entries must be positive");
        }
    }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        bool found = false;
        for (const Field& f : fields()) {
            if (key == f.key) {
                f.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) {
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << is.rdbuf();
    ExperimentConfig cfg = parse(ss.str());
    const std::filesystem::path base = path.parent_path();
    for (std::string* p : {&cfg.data.train, &cfg.data.dev, &cfg.data.test}) {
        if (!p->empty() && std::filesystem::path(*p).is_relative()) {
            *p = (base / *p).lexically_normal().string();
        }
        if (!p->empty() && !std::filesystem::exists(*p)) {
            throw ConfigError("data file not found: " + *p);
        }
    }
    return cfg;
}

std::string ExperimentConfig::serialize() const {
    std::string out;
    for (const Field& f : fields()) {
        out += std::string(f.key) + " = " + f.get(*this) + "\n";
    }
    return out;
}

BatchStrategy effective_strategy(const ExperimentConfig& cfg) {
    if (cfg.batching.strategy) {
        return *cfg.batching.strategy;
    }
    if (!cfg.train.instantiation) {
        return BatchStrategy::random;
    }
    switch (*cfg.train.instantiation) {
        case Instantiation::trime:
            return BatchStrategy::random;
        case Instantiation::trime_long:
            return BatchStrategy::consecutive;
        case Instantiation::trime_ext:
            return BatchStrategy::bm25;
    }
    return BatchStrategy::random;
}

}  // namespace trime
