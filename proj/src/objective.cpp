#include "trime/objective.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "trime/binary_io.hpp"
#include "trime/error.hpp"

namespace trime {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct LogMasses {
    double all;     // log of the total unnormalized mass
    double target;  // log of the mass assigned to the target token
};

// Log-space masses for one query. `allowed(j)` selects memory entries,
// `target_of(j)` gives their tokens.
template <typename Allowed, typename TargetOf>
LogMasses log_masses(const double* logits, std::size_t vocab, const double* sims, std::size_t mem,
                     Allowed allowed, TargetOf target_of, TokenId target, double temperature) {
    double mx_all = kNegInf;
    double mx_t = logits[target];
    for (std::size_t v = 0; v < vocab; ++v) {
        mx_all = std::max(mx_all, logits[v]);
    }
    for (std::size_t j = 0; j < mem; ++j) {
        if (!allowed(j)) {
            continue;
        }
        const double s = sims[j] / temperature;
        mx_all = std::max(mx_all, s);
        if (target_of(j) == target) {
            mx_t = std::max(mx_t, s);
        }
    }
    double acc_all = 0.0;
    double acc_t = std::exp(logits[target] - mx_t);
    for (std::size_t v = 0; v < vocab; ++v) {
        acc_all += std::exp(logits[v] - mx_all);
    }
    for (std::size_t j = 0; j < mem; ++j) {
        if (!allowed(j)) {
            continue;
        }
        const double s = sims[j] / temperature;
        acc_all += std::exp(s - mx_all);
        if (target_of(j) == target) {
            acc_t += std::exp(s - mx_t);
        }
    }
    return {mx_all + std::log(acc_all), mx_t + std::log(acc_t)};
}

void check_target(TokenId target, std::size_t vocab) {
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
        throw IndexError("target " + std::to_string(target) + " outside vocabulary of size " + std::to_string(vocab));
    }
}

}  // namespace

double trime_log_prob(std::span<const double> logits, std::span<const double> sims,
                      std::span<const TokenId> mem_targets, TokenId target, double temperature) {
    if (sims.size() != mem_targets.size()) {
        throw DimensionError("trime_log_prob: " + std::to_string(sims.size()) + " similarities but " +
                             std::to_string(mem_targets.size()) + " memory targets");
    }
    if (!(temperature > 0.0)) {
        throw Error("trime_log_prob: temperature must be positive");
    }
    check_target(target, logits.size());
    const LogMasses lm = log_masses(
        logits.data(), logits.size(), sims.data(), sims.size(), [](std::size_t) { return true; },
        [&](std::size_t j) { return mem_targets[j]; }, target, temperature);
    return lm.target - lm.all;
}

double vanilla_log_prob(std::span<const double> logits, TokenId target) {
    return trime_log_prob(logits, {}, {}, target);
}

Tensor trime_log_prob(const Tensor& logits, const Tensor& sims, std::span<const TokenId> mem_targets,
                      TokenId target) {
    if (sims.numel() != mem_targets.size()) {
        throw DimensionError("trime_log_prob: similarity/target length mismatch");
    }
    check_target(target, logits.numel());
    const LogMasses lm = log_masses(
        logits.data().data(), logits.numel(), sims.data().data(), sims.numel(), [](std::size_t) { return true; },
        [&](std::size_t j) { return mem_targets[j]; }, target, 1.0);
    std::vector<TokenId> tgts(mem_targets.begin(), mem_targets.end());
    auto li = logits.impl(), si = sims.impl();
    return record_custom("trime_log_prob", {logits, sims}, Tensor::scalar(lm.target - lm.all),
                         [li, si, tgts, target, lm](std::span<const double> og) {
                             // d/dx [lse_target - lse_all] = [x counts for target] p_t(x) - p_all(x)
                             if (li->requires_grad) {
                                 auto& g = li->ensure_grad();
                                 for (std::size_t v = 0; v < g.size(); ++v) {
                                     double d = -std::exp(li->data[v] - lm.all);
                                     if (static_cast<TokenId>(v) == target) {
                                         d += std::exp(li->data[v] - lm.target);
                                     }
                                     g[v] += og[0] * d;
                                 }
                             }
                             if (si->requires_grad) {
                                 auto& g = si->ensure_grad();
                                 for (std::size_t j = 0; j < g.size(); ++j) {
                                     double d = -std::exp(si->data[j] - lm.all);
                                     if (tgts[j] == target) {
                                         d += std::exp(si->data[j] - lm.target);
                                     }
                                     g[j] += og[0] * d;
                                 }
                             }
                         });
}

Tensor trime_loss(const Tensor& logits, const Tensor& sims, const MemorySpec& memory) {
    const std::size_t n = memory.size();
    if (n == 0) {
        throw DimensionError("trime_loss: batch has no context-target pairs");
    }
    if (logits.rank() != 2 || logits.rows() != n || sims.rank() != 2 || sims.rows() != n || sims.cols() != n) {
        throw DimensionError("trime_loss: logits " + shape_str(logits.shape()) + " / sims " +
                             shape_str(sims.shape()) + " do not match " + std::to_string(n) + " queries");
    }
    const std::size_t vocab = logits.cols();
    std::vector<LogMasses> masses(n);
    double total = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
        const TokenId w = memory.pairs[q].target;
        check_target(w, vocab);
        const std::uint8_t* row = memory.mask.data() + q * n;
        masses[q] = log_masses(
            logits.data().data() + q * vocab, vocab, sims.data().data() + q * n, n,
            [row](std::size_t j) { return row[j] != 0; }, [&](std::size_t j) { return memory.pairs[j].target; }, w,
            1.0);
        total += masses[q].all - masses[q].target;
    }
    auto li = logits.impl(), si = sims.impl();
    std::vector<std::uint8_t> mask = memory.mask;
    std::vector<TokenId> targets;
    targets.reserve(n);
    for (const PairRef& p : memory.pairs) {
        targets.push_back(p.target);
    }
    return record_custom(
        "trime_loss", {logits, sims}, Tensor::scalar(total / static_cast<double>(n)),
        [li, si, n, vocab, masses = std::move(masses), mask = std::move(mask),
         targets = std::move(targets)](std::span<const double> og) {
            const double scale = og[0] / static_cast<double>(n);
            if (li->requires_grad) {
                auto& g = li->ensure_grad();
                for (std::size_t q = 0; q < n; ++q) {
                    const double* x = li->data.data() + q * vocab;
                    double* gx = g.data() + q * vocab;
                    const TokenId w = targets[q];
                    for (std::size_t v = 0; v < vocab; ++v) {
                        double d = std::exp(x[v] - masses[q].all);
                        if (static_cast<TokenId>(v) == w) {
                            d -= std::exp(x[v] - masses[q].target);
                        }
                        gx[v] += scale * d;
                    }
                }
            }
            if (si->requires_grad) {
                auto& g = si->ensure_grad();
                for (std::size_t q = 0; q < n; ++q) {
                    const double* s = si->data.data() + q * n;
                    double* gs = g.data() + q * n;
                    const std::uint8_t* row = mask.data() + q * n;
                    const TokenId w = targets[q];
                    for (std::size_t j = 0; j < n; ++j) {
                        if (row[j] == 0) {
                            continue;
                        }
                        double d = std::exp(s[j] - masses[q].all);
                        if (targets[j] == w) {
                            d -= std::exp(s[j] - masses[q].target);
                        }
                        gs[j] += scale * d;
                    }
                }
            }
        });
}

Tensor vanilla_loss(const Tensor& logits, std::span<const TokenId> targets) {
    const std::size_t n = targets.size();
    if (n == 0) {
        throw DimensionError("vanilla_loss: no targets");
    }
    if (logits.rank() != 2 || logits.rows() != n) {
        throw DimensionError("vanilla_loss: logits " + shape_str(logits.shape()) + " for " + std::to_string(n) +
                             " targets");
    }
    const std::size_t vocab = logits.cols();
    std::vector<LogMasses> masses(n);
    double total = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
        check_target(targets[q], vocab);
        masses[q] = log_masses(
            logits.data().data() + q * vocab, vocab, nullptr, 0, [](std::size_t) { return false; },
            [](std::size_t) { return TokenId{-1}; }, targets[q], 1.0);
        total += masses[q].all - masses[q].target;
    }
    auto li = logits.impl();
    std::vector<TokenId> tgts(targets.begin(), targets.end());
    return record_custom("vanilla_loss", {logits}, Tensor::scalar(total / static_cast<double>(n)),
                         [li, n, vocab, masses = std::move(masses), tgts = std::move(tgts)](std::span<const double> og) {
                             const double scale = og[0] / static_cast<double>(n);
                             auto& g = li->ensure_grad();
                             for (std::size_t q = 0; q < n; ++q) {
                                 const double* x = li->data.data() + q * vocab;
                                 double* gx = g.data() + q * vocab;
                                 for (std::size_t v = 0; v < vocab; ++v) {
                                     double d = std::exp(x[v] - masses[q].all);
                                     if (static_cast<TokenId>(v) == tgts[q]) {
                                         d -= std::exp(x[v] - masses[q].target);
                                     }
                                     gx[v] += scale * d;
                                 }
                             }
                         });
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
        throw ConfigError("train.warmup_fraction must lie in [0, 1]");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("train.lr must be positive");
    }
    if (!(local_drop_prob >= 0.0 && local_drop_prob <= 1.0)) {
        throw ConfigError("train.p must lie in [0, 1]");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
        throw ConfigError("invalid Adam settings");
    }
    if (clip_norm < 0.0) {
        throw ConfigError("train.clip_norm must be non-negative");
    }
}

std::size_t TrainConfig::warmup_steps() const {
    return static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
    const double w = static_cast<double>(std::max<std::size_t>(1, cfg.warmup_steps()));
    const double s = static_cast<double>(step + 1);
    return cfg.learning_rate * std::min(s / w, std::sqrt(w / s));
}

AdamState AdamState::for_params(const ModelParams& params) {
    AdamState st;
    for (const Tensor& t : params.tensors()) {
        st.m.emplace_back(t.numel(), 0.0);
        st.v.emplace_back(t.numel(), 0.0);
    }
    return st;
}

namespace {

struct BatchForward {
    Tensor loss;
    double hit_frac{0.0};
};

BatchForward forward_batch(const ModelConfig& model_cfg, const ModelParams& params, std::span<const Segment> segments,
                           const Batch& batch, const MemorySpec& memory, bool memory_objective) {
    std::vector<std::vector<TokenId>> inputs;
    inputs.reserve(batch.slots.size());
    for (std::size_t s : batch.slots) {
        inputs.push_back(segments[s].tokens);
    }
    if (memory.slot_offsets.size() != inputs.size()) {
        throw DimensionError("memory spec was built for a different batch");
    }
    const BatchEncoding enc = encode_batch(model_cfg, params, inputs);

    std::vector<std::int32_t> rows;
    std::vector<TokenId> targets;
    rows.reserve(memory.size());
    for (const PairRef& p : memory.pairs) {
        rows.push_back(static_cast<std::int32_t>(enc.offsets[p.batch_slot] + p.position));
        targets.push_back(p.target);
    }
    const Tensor f = gather_rows(enc.f, rows);
    const Tensor logits = vocab_logits_rows(params, f);

    BatchForward out;
    const std::size_t n = memory.size();
    std::size_t hits = 0;
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t j = 0; j < n; ++j) {
            if (memory.allows(q, j) && memory.pairs[j].target == memory.pairs[q].target) {
                ++hits;
                break;
            }
        }
    }
    out.hit_frac = n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);

    if (memory_objective) {
        const Tensor g = gather_rows(enc.g, rows);
        const Tensor sims = scale(matmul_nt(g, g), similarity_scale(model_cfg.dim));
        out.loss = trime_loss(logits, sims, memory);
    } else {
        out.loss = vanilla_loss(logits, targets);
    }
    return out;
}

}  // namespace

double batch_loss(const ModelConfig& model_cfg, const ModelParams& params, std::span<const Segment> segments,
                  const Batch& batch, const MemorySpec& memory, bool memory_objective, bool with_grad) {
    if (!with_grad) {
        Tape::NoGrad guard;
        return forward_batch(model_cfg, params, segments, batch, memory, memory_objective).loss.item();
    }
    Tape tape;
    Tensor loss;
    {
        Tape::Scope scope(tape);
        loss = forward_batch(model_cfg, params, segments, batch, memory, memory_objective).loss;
    }
    tape.backward(loss);
    return loss.item();
}

StepReport train_step(const ModelConfig& model_cfg, ModelParams& params, AdamState& adam,
                      std::span<const Segment> segments, const Batch& batch, const MemorySpec& memory,
                      const TrainConfig& cfg, std::size_t step) {
    std::vector<Tensor> tensors = params.tensors();
    if (adam.m.size() != tensors.size()) {
        throw Error("optimizer state does not match the parameters");
    }
    for (Tensor& t : tensors) {
        t.zero_grad();
    }
    StepReport report;
    report.step = step;
    report.memory_objective = cfg.instantiation.has_value() && step >= cfg.warmup_steps();

    Tape tape;
    BatchForward fwd;
    {
        Tape::Scope scope(tape);
        fwd = forward_batch(model_cfg, params, segments, batch, memory, report.memory_objective);
    }
    report.loss = fwd.loss.item();
    report.mem_hit_frac = fwd.hit_frac;
    if (!std::isfinite(report.loss)) {
        throw NonFiniteError("non-finite loss at step " + std::to_string(step));
    }
    tape.backward(fwd.loss);

    double sq = 0.0;
    for (const Tensor& t : tensors) {
        if (t.has_grad()) {
            for (double g : t.impl()->grad) {
                sq += g * g;
            }
        }
    }
    report.grad_norm = std::sqrt(sq);
    if (!std::isfinite(report.grad_norm)) {
        throw NonFiniteError("non-finite gradient norm at step " + std::to_string(step));
    }
    const double clip = cfg.clip_norm > 0.0 && report.grad_norm > cfg.clip_norm ? cfg.clip_norm / report.grad_norm : 1.0;

    report.lr = learning_rate_at(cfg, step);
    adam.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (!tensors[i].has_grad()) {
            continue;
        }
        const std::vector<double>& g = tensors[i].impl()->grad;
        auto p = tensors[i].mutable_data();
        auto& m = adam.m[i];
        auto& v = adam.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k] * clip;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            p[k] -= report.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.adam_eps);
        }
        tensors[i].zero_grad();
    }
    return report;
}

// ---------------------------------------------------------------------------
// Optimizer state files

namespace {
constexpr std::uint32_t kStateVersion = 1;
}

void save_train_state(const std::filesystem::path& path, std::uint64_t step, const AdamState& adam) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot write training state: " + path.string());
    }
    binio::write_magic(os, "TRMS");
    binio::write_le<std::uint32_t>(os, kStateVersion);
    binio::write_le<std::uint64_t>(os, step);
    binio::write_le<std::uint64_t>(os, adam.t);
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(adam.m.size()));
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        binio::write_le<std::uint64_t>(os, adam.m[i].size());
        for (double x : adam.m[i]) {
            binio::write_le<double>(os, x);
        }
        for (double x : adam.v[i]) {
            binio::write_le<double>(os, x);
        }
    }
}

std::uint64_t load_train_state(const std::filesystem::path& path, AdamState& adam) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot read training state: " + path.string());
    }
    binio::expect_magic(is, "TRMS");
    if (binio::read_le<std::uint32_t>(is, "version") != kStateVersion) {
        throw FormatError("unsupported training state version");
    }
    const auto step = binio::read_le<std::uint64_t>(is, "step");
    adam.t = binio::read_le<std::uint64_t>(is, "adam step");
    const auto count = binio::read_le<std::uint32_t>(is, "tensor count");
    if (count != adam.m.size()) {
        throw FormatError("training state does not match the model");
    }
    for (std::size_t i = 0; i < count; ++i) {
        const auto n = binio::read_le<std::uint64_t>(is, "tensor size");
        if (n != adam.m[i].size()) {
            throw FormatError("training state tensor size mismatch");
        }
        for (double& x : adam.m[i]) {
            x = binio::read_le<double>(is, "moments");
        }
        for (double& x : adam.v[i]) {
            x = binio::read_le<double>(is, "moments");
        }
    }
    return step;
}

}  // namespace trime
