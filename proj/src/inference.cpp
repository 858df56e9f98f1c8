#include "trime/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trime/error.hpp"
#include "trime/memory.hpp"
#include "trime/parallel.hpp"

namespace trime {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Streaming log-sum-exp.
struct Lse {
    double m{kNegInf};
    double s{0.0};

    void add(double x) {
        if (x == kNegInf) {
            return;
        }
        if (x <= m) {
            s += std::exp(x - m);
        } else {
            s = s * std::exp(m - x) + 1.0;
            m = x;
        }
    }
    double value() const { return s == 0.0 ? kNegInf : m + std::log(s); }
};

double log_add(double a, double b) {
    if (a == kNegInf) {
        return b;
    }
    if (b == kNegInf) {
        return a;
    }
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

std::string to_string(EvalMode mode) {
    switch (mode) {
        case EvalMode::vanilla:
            return "vanilla";
        case EvalMode::trime:
            return "trime";
        case EvalMode::trime_long:
            return "trime_long";
        case EvalMode::trime_ext:
            return "trime_ext";
        case EvalMode::cache:
            return "cache";
        case EvalMode::knnlm:
            return "knnlm";
    }
    return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
    for (EvalMode m : {EvalMode::vanilla, EvalMode::trime, EvalMode::trime_long, EvalMode::trime_ext, EvalMode::cache,
                       EvalMode::knnlm}) {
        if (to_string(m) == s) {
            return m;
        }
    }
    if (s == "none") {
        return EvalMode::vanilla;
    }
    throw ConfigError("unknown evaluation mode '" + s + "'");
}

bool uses_local_memory(EvalMode mode) {
    return mode == EvalMode::trime || mode == EvalMode::trime_long || mode == EvalMode::trime_ext ||
           mode == EvalMode::cache;
}

bool uses_long_memory(EvalMode mode) {
    return mode == EvalMode::trime_long || mode == EvalMode::trime_ext || mode == EvalMode::cache;
}

bool uses_datastore(EvalMode mode) { return mode == EvalMode::trime_ext || mode == EvalMode::knnlm; }

bool uses_interpolation(EvalMode mode) {
    return mode == EvalMode::trime_ext || mode == EvalMode::cache || mode == EvalMode::knnlm;
}

void EvalConfig::validate() const {
    if (!(tau > 0.0) || !(tau_prime > 0.0)) {
        throw ConfigError("eval temperatures must be positive");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("eval.lambda must lie in [0, 1]");
    }
    if (k == 0) {
        throw ConfigError("eval.k must be at least 1");
    }
    if (window == 0 || stride == 0 || stride > window) {
        throw ConfigError("eval needs 1 <= stride <= window");
    }
}

// ---------------------------------------------------------------------------
// Distributions

std::vector<MemoryEntry> assemble_eval_memory(const EvalConfig& cfg, std::span<const MemoryEntry> local,
                                              std::span<const MemoryEntry> long_recent_first,
                                              const std::vector<MemoryEntry>* knn) {
    if (uses_datastore(cfg.mode) && knn == nullptr) {
        throw Error("evaluation mode " + to_string(cfg.mode) + " needs a datastore");
    }
    std::vector<MemoryEntry> out;
    if (uses_local_memory(cfg.mode)) {
        out.insert(out.end(), local.begin(), local.end());
    }
    if (uses_long_memory(cfg.mode)) {
        const std::size_t n = std::min(cfg.long_memory_tokens, long_recent_first.size());
        out.insert(out.end(), long_recent_first.begin(), long_recent_first.begin() + static_cast<std::ptrdiff_t>(n));
    }
    if (uses_datastore(cfg.mode)) {
        for (const MemoryEntry& e : *knn) {
            const bool dup = cfg.datastore_shares_corpus &&
                             std::any_of(out.begin(), out.end(), [&](const MemoryEntry& o) {
                                 return o.doc == e.doc && o.pos == e.pos;
                             });
            if (!dup) {
                out.push_back(e);
            }
        }
    }
    return out;
}

std::vector<double> eval_next_token_dist(std::span<const double> logits, std::span<const double> sims,
                                         std::span<const TokenId> targets, double tau) {
    if (sims.size() != targets.size()) {
        throw DimensionError("eval_next_token_dist: similarity/target length mismatch");
    }
    if (!(tau > 0.0)) {
        throw Error("eval_next_token_dist: tau must be positive");
    }
    // Per-token log mass: logit plus the memory entries with that target.
    std::vector<Lse> per(logits.size());
    for (std::size_t v = 0; v < logits.size(); ++v) {
        per[v].add(logits[v]);
    }
    for (std::size_t j = 0; j < sims.size(); ++j) {
        if (targets[j] < 0 || static_cast<std::size_t>(targets[j]) >= logits.size()) {
            throw IndexError("memory target outside the vocabulary");
        }
        per[static_cast<std::size_t>(targets[j])].add(sims[j] / tau);
    }
    Lse total;
    std::vector<double> logm(logits.size());
    for (std::size_t v = 0; v < logits.size(); ++v) {
        logm[v] = per[v].value();
        total.add(logm[v]);
    }
    const double z = total.value();
    std::vector<double> p(logits.size());
    for (std::size_t v = 0; v < logits.size(); ++v) {
        p[v] = std::exp(logm[v] - z);
    }
    return p;
}

std::vector<double> memory_dist(std::span<const double> sims, std::span<const TokenId> targets, double tau_prime,
                                std::size_t vocab_size) {
    if (sims.empty()) {
        throw Error("memory_dist: memory is empty");
    }
    if (sims.size() != targets.size()) {
        throw DimensionError("memory_dist: similarity/target length mismatch");
    }
    if (!(tau_prime > 0.0)) {
        throw Error("memory_dist: tau' must be positive");
    }
    Lse total;
    for (double s : sims) {
        total.add(s / tau_prime);
    }
    const double z = total.value();
    std::vector<double> p(vocab_size, 0.0);
    for (std::size_t j = 0; j < sims.size(); ++j) {
        if (targets[j] < 0 || static_cast<std::size_t>(targets[j]) >= vocab_size) {
            throw IndexError("memory target outside the vocabulary");
        }
        p[static_cast<std::size_t>(targets[j])] += std::exp(sims[j] / tau_prime - z);
    }
    return p;
}

std::vector<double> interpolate(std::span<const double> p, std::span<const double> p_mem, double lambda) {
    if (p.size() != p_mem.size()) {
        throw DimensionError("interpolate: distributions differ in size");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw Error("interpolate: lambda must lie in [0, 1]");
    }
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = lambda == 0.0 ? p[i] : lambda == 1.0 ? p_mem[i] : (1.0 - lambda) * p[i] + lambda * p_mem[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Buckets and reports

const std::array<const char*, FreqBuckets::kCount> FreqBuckets::kLabels = {">10k", "1k-10k", "100-1k", "10-100",
                                                                            "<=10"};

std::size_t FreqBuckets::bucket_for(std::uint64_t freq) {
    if (freq > 10000) {
        return 0;
    }
    if (freq > 1000) {
        return 1;
    }
    if (freq > 100) {
        return 2;
    }
    if (freq > 10) {
        return 3;
    }
    return 4;
}

FreqBuckets FreqBuckets::from_frequencies(std::span<const std::uint64_t> freq) {
    FreqBuckets b;
    b.bucket_of.reserve(freq.size());
    for (std::uint64_t f : freq) {
        b.bucket_of.push_back(static_cast<std::uint8_t>(bucket_for(f)));
    }
    return b;
}

std::size_t FreqBuckets::bucket(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= bucket_of.size()) {
        throw IndexError("token " + std::to_string(id) + " has no frequency bucket");
    }
    return bucket_of[static_cast<std::size_t>(id)];
}

double BucketStat::ppl() const { return tokens == 0 ? 0.0 : std::exp(nll / static_cast<double>(tokens)); }

double EvalReport::mean_nll() const { return tokens == 0 ? 0.0 : nll / static_cast<double>(tokens); }
double EvalReport::ppl() const { return std::exp(mean_nll()); }
double EvalReport::bpc() const { return mean_nll() / std::log(2.0); }

// ---------------------------------------------------------------------------
// Scanning

namespace {

struct ScoredToken {
    TokenId target{0};
    double lse_vocab{0.0};
    double logit_target{0.0};
    std::vector<double> local_sims;
    std::vector<TokenId> local_targets;
    std::vector<double> long_sims;  // most recent first
    std::vector<TokenId> long_targets;
    std::vector<double> ext_sims;  // rank order
    std::vector<TokenId> ext_targets;
};

struct ScanOptions {
    std::size_t window{64};
    std::size_t stride{32};
    bool local{false};
    std::size_t long_cap{0};
    const Datastore* datastore{nullptr};
    std::size_t k{0};
    bool exclude_own_doc{false};
};

template <typename OnToken>
void scan_document(const ModelConfig& model_cfg, const ModelParams& params, const Document& doc,
                   const ScanOptions& opt, OnToken&& on_token) {
    Tape::NoGrad no_grad;
    const std::size_t d = model_cfg.dim;
    const auto& toks = doc.tokens;
    std::vector<double> g_cache;  // g of every scored context, in order
    if (opt.long_cap > 0 && toks.size() > 1) {
        g_cache.resize((toks.size() - 1) * d);
    }
    ScoredToken tok;
    for (const EvalWindow& w : sliding_windows(toks.size(), opt.window, opt.stride)) {
        const SegmentEncoding enc =
            encode_segment(model_cfg, params, std::span<const TokenId>(toks.data() + w.begin, w.end - w.begin));
        const std::size_t first = w.score_begin - w.begin;
        const std::size_t count = w.end - w.score_begin;
        const Tensor logits = vocab_logits_rows(params, slice_rows(enc.f, first, count));
        const auto g = enc.g.data();
        const std::size_t vocab = logits.cols();

        std::vector<std::vector<Hit>> hits;
        if (opt.datastore != nullptr) {
            std::vector<std::uint32_t> exclude;
            if (opt.exclude_own_doc) {
                exclude.assign(count, doc.id);
            }
            hits = knn_search_batch(*opt.datastore, g.subspan(first * d, count * d), opt.k, exclude);
        }

        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t r = first + i;
            const std::size_t p = w.begin + r;
            const std::span<const double> q = g.subspan(r * d, d);
            tok.target = toks[p + 1];
            const double* row = logits.data().data() + i * vocab;
            double mx = kNegInf;
            for (std::size_t v = 0; v < vocab; ++v) {
                mx = std::max(mx, row[v]);
            }
            double acc = 0.0;
            for (std::size_t v = 0; v < vocab; ++v) {
                acc += std::exp(row[v] - mx);
            }
            tok.lse_vocab = mx + std::log(acc);
            tok.logit_target = row[tok.target];

            tok.local_sims.clear();
            tok.local_targets.clear();
            if (opt.local) {
                for (std::size_t j = 0; j < r; ++j) {
                    tok.local_sims.push_back(similarity(q, g.subspan(j * d, d)));
                    tok.local_targets.push_back(toks[w.begin + j + 1]);
                }
            }
            tok.long_sims.clear();
            tok.long_targets.clear();
            for (std::size_t back = 1; back <= std::min(opt.long_cap, w.begin); ++back) {
                const std::size_t c = w.begin - back;
                tok.long_sims.push_back(similarity(q, std::span<const double>(g_cache.data() + c * d, d)));
                tok.long_targets.push_back(toks[c + 1]);
            }
            tok.ext_sims.clear();
            tok.ext_targets.clear();
            if (opt.datastore != nullptr) {
                for (const Hit& h : hits[i]) {
                    tok.ext_sims.push_back(h.score);
                    tok.ext_targets.push_back(h.target);
                }
            }
            on_token(tok);
        }
        if (!g_cache.empty()) {
            std::copy(g.begin() + static_cast<std::ptrdiff_t>(first * d), g.end(),
                      g_cache.begin() + static_cast<std::ptrdiff_t>(w.score_begin * d));
        }
    }
}

void add_entries(Lse& all, Lse* tgt, std::span<const double> sims, std::span<const TokenId> targets, std::size_t n,
                 double temp, TokenId target) {
    for (std::size_t j = 0; j < n; ++j) {
        const double x = sims[j] / temp;
        all.add(x);
        if (tgt != nullptr && targets[j] == target) {
            tgt->add(x);
        }
    }
}

// Which memory components feed the joint distribution and the memory-only
// distribution for a mode.
struct ModeParts {
    bool main_local{false}, main_long{false}, main_ext{false};
    bool mem_local{false}, mem_long{false}, mem_ext{false};
    bool interpolated{false};
};

ModeParts parts_for(EvalMode mode) {
    ModeParts m;
    switch (mode) {
        case EvalMode::vanilla:
            break;
        case EvalMode::trime:
            m.main_local = true;
            break;
        case EvalMode::trime_long:
            m.main_local = m.main_long = true;
            break;
        case EvalMode::trime_ext:
            m.main_local = m.main_long = m.main_ext = true;
            m.mem_local = m.mem_long = m.mem_ext = true;
            m.interpolated = true;
            break;
        case EvalMode::cache:
            m.mem_local = m.mem_long = true;
            m.interpolated = true;
            break;
        case EvalMode::knnlm:
            m.mem_ext = true;
            m.interpolated = true;
            break;
    }
    return m;
}

// Log-probabilities of the target for each long-memory length in
// `lmts` (ascending). Components are added local, external, then long, so
// that each prefix is a snapshot of one running sum. With `joint` the
// vocabulary term is included; otherwise the memory-only distribution is
// computed and an empty memory yields nullopt.
std::vector<std::optional<double>> prefix_log_probs(const ScoredToken& tok, bool local, bool ext, bool use_long,
                                                    std::span<const std::size_t> lmts, double temp, bool joint) {
    Lse all, tgt;
    std::size_t size = 0;
    if (joint) {
        all.add(tok.lse_vocab);
        tgt.add(tok.logit_target);
    }
    if (local) {
        add_entries(all, &tgt, tok.local_sims, tok.local_targets, tok.local_sims.size(), temp, tok.target);
        size += tok.local_sims.size();
    }
    if (ext) {
        add_entries(all, &tgt, tok.ext_sims, tok.ext_targets, tok.ext_sims.size(), temp, tok.target);
        size += tok.ext_sims.size();
    }
    std::vector<std::optional<double>> out;
    out.reserve(lmts.size());
    std::size_t added = 0;
    for (std::size_t lmt : lmts) {
        if (use_long) {
            const std::size_t upto = std::min(lmt, tok.long_sims.size());
            for (; added < upto; ++added) {
                const double x = tok.long_sims[added] / temp;
                all.add(x);
                if (tok.long_targets[added] == tok.target) {
                    tgt.add(x);
                }
                ++size;
            }
        }
        if (!joint && size == 0) {
            out.emplace_back(std::nullopt);
        } else {
            out.emplace_back(tgt.value() - all.value());
        }
    }
    return out;
}

double combine(double log_p, const std::optional<double>& log_p_mem, double lambda) {
    if (!log_p_mem || lambda == 0.0) {
        return log_p;
    }
    if (lambda == 1.0) {
        return *log_p_mem;
    }
    return log_add(std::log1p(-lambda) + log_p, std::log(lambda) + *log_p_mem);
}

double token_log_prob(const ScoredToken& tok, const EvalConfig& cfg) {
    const ModeParts m = parts_for(cfg.mode);
    const std::size_t lmt[1] = {cfg.long_memory_tokens};
    const double log_p = *prefix_log_probs(tok, m.main_local, m.main_ext, m.main_long, lmt, cfg.tau, true)[0];
    if (!m.interpolated) {
        return log_p;
    }
    const auto log_mem = prefix_log_probs(tok, m.mem_local, m.mem_ext, m.mem_long, lmt, cfg.tau_prime, false)[0];
    return combine(log_p, log_mem, cfg.lambda);
}

void check_eval_inputs(const ModelConfig& model_cfg, const EvalConfig& cfg, const Datastore* datastore) {
    cfg.validate();
    if (cfg.window > model_cfg.segment_len) {
        throw ConfigError("eval.window " + std::to_string(cfg.window) + " exceeds the model's positional capacity " +
                          std::to_string(model_cfg.segment_len));
    }
    if (uses_datastore(cfg.mode)) {
        if (datastore == nullptr) {
            throw Error("evaluation mode " + to_string(cfg.mode) + " needs a datastore");
        }
        if (datastore->dim != model_cfg.dim) {
            throw DimensionError("datastore dimension " + std::to_string(datastore->dim) + " does not match model " +
                                 std::to_string(model_cfg.dim));
        }
    }
}

ScanOptions scan_options(const EvalConfig& cfg, std::size_t long_cap, const Datastore* datastore) {
    ScanOptions opt;
    opt.window = cfg.window;
    opt.stride = cfg.stride;
    opt.local = uses_local_memory(cfg.mode);
    opt.long_cap = uses_long_memory(cfg.mode) ? long_cap : 0;
    if (uses_datastore(cfg.mode)) {
        opt.datastore = datastore;
        opt.k = cfg.k;
        opt.exclude_own_doc = cfg.datastore_shares_corpus;
    }
    return opt;
}

}  // namespace

EvalReport evaluate(const ModelConfig& model_cfg, const ModelParams& params, const Corpus& corpus,
                    const EvalConfig& cfg, const Datastore* datastore, const FreqBuckets* buckets,
                    bool keep_per_token) {
    check_eval_inputs(model_cfg, cfg, datastore);
    const ScanOptions opt = scan_options(cfg, cfg.long_memory_tokens, datastore);

    struct DocResult {
        std::vector<double> nll;
        std::vector<std::uint8_t> bucket;
    };
    std::vector<DocResult> results(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t i) {
        DocResult& res = results[i];
        scan_document(model_cfg, params, corpus[i], opt, [&](const ScoredToken& tok) {
            res.nll.push_back(-token_log_prob(tok, cfg));
            res.bucket.push_back(buckets != nullptr ? static_cast<std::uint8_t>(buckets->bucket(tok.target)) : 0);
        });
    });

    EvalReport report;
    report.config = cfg;
    for (const DocResult& res : results) {
        double doc_nll = 0.0;
        for (std::size_t t = 0; t < res.nll.size(); ++t) {
            report.tokens += 1;
            doc_nll += res.nll[t];
            if (buckets != nullptr) {
                report.buckets[res.bucket[t]].tokens += 1;
                report.buckets[res.bucket[t]].nll += res.nll[t];
            }
        }
        report.nll += doc_nll;
        if (keep_per_token) {
            report.per_token_nll.insert(report.per_token_nll.end(), res.nll.begin(), res.nll.end());
        }
    }
    return report;
}

std::vector<double> retrieval_accuracy(const ModelConfig& model_cfg, const ModelParams& params,
                                       const Datastore& datastore, const Corpus& corpus,
                                       std::span<const std::size_t> ks, const EvalConfig& cfg) {
    if (ks.empty()) {
        return {};
    }
    EvalConfig ecfg = cfg;
    ecfg.mode = EvalMode::knnlm;
    ecfg.k = *std::max_element(ks.begin(), ks.end());
    check_eval_inputs(model_cfg, ecfg, &datastore);
    const ScanOptions opt = scan_options(ecfg, 0, &datastore);

    // Rank of the first neighbour with the gold target, or k if none.
    std::vector<std::vector<std::size_t>> ranks(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t i) {
        scan_document(model_cfg, params, corpus[i], opt, [&](const ScoredToken& tok) {
            const auto it = std::find(tok.ext_targets.begin(), tok.ext_targets.end(), tok.target);
            ranks[i].push_back(static_cast<std::size_t>(it - tok.ext_targets.begin()));
        });
    });
    std::vector<double> acc(ks.size(), 0.0);
    std::size_t total = 0;
    for (const auto& doc_ranks : ranks) {
        for (std::size_t rank : doc_ranks) {
            ++total;
            for (std::size_t j = 0; j < ks.size(); ++j) {
                if (rank < ks[j]) {
                    acc[j] += 1.0;
                }
            }
        }
    }
    for (double& a : acc) {
        a = total == 0 ? 0.0 : a / static_cast<double>(total);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Tuning

TuneGrid TuneGrid::defaults(std::size_t window) {
    TuneGrid g;
    g.tau = {0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
    g.tau_prime = g.tau;
    g.lambda = {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
    g.long_memory_tokens = {0};
    for (std::size_t mult : {1, 2, 4, 8, 16, 32}) {
        g.long_memory_tokens.push_back(mult * window);
    }
    return g;
}

namespace {

template <typename T>
std::vector<T> sorted_unique(std::vector<T> v, T fallback, bool relevant) {
    if (!relevant || v.empty()) {
        return {fallback};
    }
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

}  // namespace

TuneResult tune(const ModelConfig& model_cfg, const ModelParams& params, const Corpus& dev, const EvalConfig& cfg,
                const TuneGrid& grid, const Datastore* datastore) {
    check_eval_inputs(model_cfg, cfg, datastore);
    const ModeParts m = parts_for(cfg.mode);
    const bool main_mem = m.main_local || m.main_long || m.main_ext;
    const auto lmts = sorted_unique(grid.long_memory_tokens, cfg.long_memory_tokens, uses_long_memory(cfg.mode));
    const auto taus = sorted_unique(grid.tau, cfg.tau, main_mem);
    const auto tps = sorted_unique(grid.tau_prime, cfg.tau_prime, m.interpolated);
    const auto lams = sorted_unique(grid.lambda, cfg.lambda, m.interpolated);
    for (double t : taus) {
        if (!(t > 0.0)) {
            throw ConfigError("tuning grid temperatures must be positive");
        }
    }
    for (double t : tps) {
        if (!(t > 0.0)) {
            throw ConfigError("tuning grid temperatures must be positive");
        }
    }
    for (double l : lams) {
        if (!(l >= 0.0 && l <= 1.0)) {
            throw ConfigError("tuning grid lambdas must lie in [0, 1]");
        }
    }

    const std::size_t nl = lmts.size(), nt = taus.size(), np = tps.size(), nlam = lams.size();
    const std::size_t points = nl * nt * np * nlam;
    auto index = [&](std::size_t a, std::size_t b, std::size_t c, std::size_t e) {
        return ((a * nt + b) * np + c) * nlam + e;
    };
    const ScanOptions opt = scan_options(cfg, lmts.back(), datastore);

    struct DocAcc {
        std::vector<double> nll;
        std::uint64_t tokens{0};
    };
    std::vector<DocAcc> acc(dev.size());
    parallel_for(dev.size(), [&](std::size_t i) {
        DocAcc& a = acc[i];
        a.nll.assign(points, 0.0);
        std::vector<std::vector<std::optional<double>>> main(nt), mem(np);
        scan_document(model_cfg, params, dev[i], opt, [&](const ScoredToken& tok) {
            ++a.tokens;
            for (std::size_t b = 0; b < nt; ++b) {
                main[b] = prefix_log_probs(tok, m.main_local, m.main_ext, m.main_long, lmts, taus[b], true);
            }
            if (m.interpolated) {
                for (std::size_t c = 0; c < np; ++c) {
                    mem[c] = prefix_log_probs(tok, m.mem_local, m.mem_ext, m.mem_long, lmts, tps[c], false);
                }
            }
            for (std::size_t l = 0; l < nl; ++l) {
                for (std::size_t b = 0; b < nt; ++b) {
                    const double lp = *main[b][l];
                    for (std::size_t c = 0; c < np; ++c) {
                        for (std::size_t e = 0; e < nlam; ++e) {
                            const double v = m.interpolated ? combine(lp, mem[c][l], lams[e]) : lp;
                            a.nll[index(l, b, c, e)] -= v;
                        }
                    }
                }
            }
        });
    });

    std::vector<double> total(points, 0.0);
    TuneResult result;
    for (const DocAcc& a : acc) {
        result.tokens += a.tokens;
        for (std::size_t j = 0; j < points; ++j) {
            total[j] += a.nll[j];
        }
    }
    result.points = points;
    result.best = cfg;
    bool have = false;
    for (std::size_t l = 0; l < nl; ++l) {
        for (std::size_t b = 0; b < nt; ++b) {
            for (std::size_t c = 0; c < np; ++c) {
                for (std::size_t e = 0; e < nlam; ++e) {
                    const double v = total[index(l, b, c, e)];
                    if (!have || v < result.best_nll) {
                        have = true;
                        result.best_nll = v;
                        result.best.long_memory_tokens = lmts[l];
                        result.best.tau = taus[b];
                        result.best.tau_prime = tps[c];
                        result.best.lambda = lams[e];
                    }
                }
            }
        }
    }
    return result;
}

}  // namespace trime
