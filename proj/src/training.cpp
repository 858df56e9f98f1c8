#include "trime/training.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "trime/error.hpp"
#include "trime/log.hpp"
#include "trime/memory.hpp"

namespace trime {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {

constexpr std::uint64_t kBatchStream = 0;
constexpr std::uint64_t kMemoryStream = 1ull << 40;

class EpochPlanner {
public:
    EpochPlanner(const ExperimentConfig& cfg, std::span<const Segment> segments, const Vocab& vocab)
        : cfg_(cfg), segments_(segments), strategy_(effective_strategy(cfg)) {
        if (strategy_ == BatchStrategy::bm25) {
            index_.emplace(bm25_terms(segments, vocab, cfg.data.tokenizer));
        }
    }

    std::vector<Batch> epoch(std::size_t e) const {
        const std::uint64_t seed = mix_seed(cfg_.seed, kBatchStream + e);
        switch (strategy_) {
            case BatchStrategy::random:
                return batch_random(segments_.size(), cfg_.batching.batch_size, seed);
            case BatchStrategy::consecutive:
                return batch_consecutive(segments_, cfg_.batching.batch_size, cfg_.batching.run_length, seed);
            case BatchStrategy::bm25:
                return pack_bm25(*index_, cfg_.batching.batch_size, cfg_.batching.bm25_k, seed);
        }
        return {};
    }

private:
    const ExperimentConfig& cfg_;
    std::span<const Segment> segments_;
    BatchStrategy strategy_;
    std::optional<Bm25Index> index_;
};

void check_strategy(const ExperimentConfig& cfg) {
    if (!cfg.train.instantiation || !cfg.batching.strategy) {
        return;
    }
    const BatchStrategy s = *cfg.batching.strategy;
    if (*cfg.train.instantiation == Instantiation::trime_ext && s != BatchStrategy::bm25) {
        log_warning("trime_ext is normally trained with BM25 batching; using " + to_string(s));
    }
    if (*cfg.train.instantiation == Instantiation::trime_long && s != BatchStrategy::consecutive) {
        log_warning("trime_long needs consecutive batching; using " + to_string(s));
    }
}

nlohmann::json log_record(const StepReport& r) {
    nlohmann::json j;
    j["step"] = r.step;
    j["loss"] = r.loss;
    j["mem_hit_frac"] = r.mem_hit_frac;
    j["grad_norm"] = r.grad_norm;
    j["lr"] = r.lr;
    j["objective"] = r.memory_objective ? "trime" : "vanilla";
    return j;
}

// Keeps log lines of steps before `step`.
void truncate_log(const std::filesystem::path& path, std::size_t step) {
    if (!std::filesystem::exists(path)) {
        return;
    }
    std::ifstream is(path);
    std::string line, kept;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        if (nlohmann::json::parse(line).at("step").get<std::size_t>() < step) {
            kept += line + "\n";
        }
    }
    is.close();
    std::ofstream os(path, std::ios::trunc);
    os << kept;
}

}  // namespace

TrainRun run_training(const ExperimentConfig& cfg, const Corpus& train, const Vocab& vocab,
                      const TrainRunOptions& opt) {
    TrainRun run;
    run.model = cfg.model;
    run.model.vocab_size = vocab.size();
    run.model.seed = cfg.seed;
    run.model.validate();
    TrainConfig tcfg = cfg.train;
    tcfg.seed = cfg.seed;
    tcfg.validate();
    check_strategy(cfg);

    std::vector<Segment> segments;
    for (Segment& s : segment_corpus(train, run.model.segment_len)) {
        if (s.pair_count() > 0) {
            segments.push_back(std::move(s));
        }
    }
    if (segments.empty() && tcfg.total_steps > 0) {
        throw Error("training corpus has no context-target pairs");
    }

    const bool write = !opt.out_dir.empty();
    const auto ckpt_path = opt.out_dir / "model.ckpt";
    const auto state_path = opt.out_dir / "train_state.bin";
    const auto log_path = opt.out_dir / "train_log.jsonl";
    if (write) {
        std::filesystem::create_directories(opt.out_dir);
    }

    run.params = init_params(run.model);
    AdamState adam = AdamState::for_params(run.params);
    std::size_t start = 0;
    if (opt.resume) {
        if (!write || !std::filesystem::exists(state_path) || !std::filesystem::exists(ckpt_path)) {
            throw Error("nothing to resume in " + opt.out_dir.string());
        }
        Checkpoint ck = load_checkpoint(ckpt_path);
        if (!(ck.config == run.model)) {
            throw ConfigError("checkpoint in " + opt.out_dir.string() + " was trained with a different model config");
        }
        run.params = std::move(ck.params);
        start = load_train_state(state_path, adam);
        truncate_log(log_path, start);
        log_info("resuming at step " + std::to_string(start));
    } else if (write) {
        std::ofstream(log_path, std::ios::trunc);
    }

    auto save = [&](std::size_t steps) {
        if (write) {
            save_checkpoint(ckpt_path, run.model, run.params);
            save_train_state(state_path, steps, adam);
        }
    };

    const std::size_t end = std::min(tcfg.total_steps, opt.stop_at.value_or(tcfg.total_steps));
    std::size_t step = start;
    if (step < end) {
        EpochPlanner planner(cfg, segments, vocab);
        std::size_t epoch = 0;
        std::size_t epoch_start = 0;
        std::vector<Batch> batches = planner.epoch(0);
        std::ofstream log_os;
        if (write) {
            log_os.open(log_path, std::ios::app);
        }
        while (step < end) {
            while (step >= epoch_start + batches.size()) {
                epoch_start += batches.size();
                batches = planner.epoch(++epoch);
            }
            const Batch& batch = batches[step - epoch_start];
            const MemorySpec memory =
                tcfg.instantiation
                    ? build_train_memory(batch, segments, *tcfg.instantiation, tcfg.local_drop_prob,
                                         mix_seed(cfg.seed, kMemoryStream + step))
                    : empty_memory(batch, segments);
            StepReport report;
            try {
                report = train_step(run.model, run.params, adam, segments, batch, memory, tcfg, step);
            } catch (const NonFiniteError& e) {
                log_warning(std::string("aborting: ") + e.what() + "; the last saved checkpoint is kept");
                throw;
            }
            ++step;
            if (report.step % cfg.log_every == 0 || step == tcfg.total_steps) {
                run.log.push_back(report);
                if (write) {
                    log_os << log_record(report).dump() << "\n";
                    log_os.flush();
                }
            }
            if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < end) {
                save(step);
            }
        }
    }
    run.steps_done = step;
    save(step);
    return run;
}

}  // namespace trime
