#include "trime/memory.hpp"

#include <random>

#include "trime/error.hpp"

namespace trime {

std::string to_string(Instantiation inst) {
    switch (inst) {
        case Instantiation::trime:
            return "trime";
        case Instantiation::trime_long:
            return "trime_long";
        case Instantiation::trime_ext:
            return "trime_ext";
    }
    return "?";
}

Instantiation parse_instantiation(const std::string& s) {
    if (s == "trime") {
        return Instantiation::trime;
    }
    if (s == "trime_long") {
        return Instantiation::trime_long;
    }
    if (s == "trime_ext") {
        return Instantiation::trime_ext;
    }
    throw ConfigError("unknown instantiation '" + s + "'");
}

std::vector<std::size_t> local_memory(std::size_t t) {
    std::vector<std::size_t> out;
    for (std::size_t pos = 0; pos + 1 < t; ++pos) {
        out.push_back(pos);
    }
    return out;
}

std::vector<PairRef> long_memory(const Batch& batch, std::span<const Segment> segments, std::uint32_t doc,
                                 std::size_t segment_index) {
    std::vector<PairRef> out;
    for (std::size_t slot = 0; slot < batch.slots.size(); ++slot) {
        const Segment& seg = segments[batch.slots[slot]];
        if (seg.doc != doc || static_cast<std::size_t>(seg.ordinal) + 1 >= segment_index) {
            continue;
        }
        for (std::size_t pos = 0; pos < seg.pair_count(); ++pos) {
            out.push_back({slot, pos, seg.target(pos), seg.doc, seg.ordinal});
        }
    }
    return out;
}

std::vector<PairRef> MemorySpec::accessible(std::size_t query) const {
    std::vector<PairRef> out;
    for (std::size_t j = 0; j < pairs.size(); ++j) {
        if (allows(query, j)) {
            out.push_back(pairs[j]);
        }
    }
    return out;
}

bool MemorySpec::any_memory() const {
    for (std::uint8_t m : mask) {
        if (m != 0) {
            return true;
        }
    }
    return false;
}

namespace {

MemorySpec enumerate_pairs(const Batch& batch, std::span<const Segment> segments) {
    MemorySpec spec;
    for (std::size_t slot = 0; slot < batch.slots.size(); ++slot) {
        const Segment& seg = segments[batch.slots.at(slot)];
        spec.slot_offsets.push_back(spec.pairs.size());
        for (std::size_t pos = 0; pos < seg.pair_count(); ++pos) {
            spec.pairs.push_back({slot, pos, seg.target(pos), seg.doc, seg.ordinal});
        }
    }
    spec.mask.assign(spec.pairs.size() * spec.pairs.size(), 0);
    spec.local_dropped.assign(spec.pairs.size(), 0);
    return spec;
}

}  // namespace

MemorySpec empty_memory(const Batch& batch, std::span<const Segment> segments) {
    return enumerate_pairs(batch, segments);
}

MemorySpec build_train_memory(const Batch& batch, std::span<const Segment> segments, Instantiation inst,
                              double local_drop_prob, std::uint64_t seed) {
    if (!(local_drop_prob >= 0.0 && local_drop_prob <= 1.0)) {
        throw ConfigError("local memory drop probability must lie in [0, 1]");
    }
    if (inst == Instantiation::trime_long &&
        (batch.strategy != BatchStrategy::consecutive || batch.run_length < 2)) {
        throw ConfigError("trime_long needs consecutive batching with m > 1");
    }
    if (inst == Instantiation::trime_ext && batch.run_length != 1) {
        throw ConfigError("trime_ext needs batches with m = 1");
    }

    MemorySpec spec = enumerate_pairs(batch, segments);
    spec.mode = inst;
    const std::size_t n = spec.pairs.size();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (std::size_t q = 0; q < n; ++q) {
        const PairRef& query = spec.pairs[q];
        bool drop_local = false;
        if (inst == Instantiation::trime_ext) {
            drop_local = unit(rng) < local_drop_prob;
            spec.local_dropped[q] = drop_local ? 1 : 0;
        }
        std::uint8_t* row = spec.mask.data() + q * n;
        for (std::size_t j = 0; j < n; ++j) {
            const PairRef& entry = spec.pairs[j];
            bool ok = false;
            if (entry.batch_slot == query.batch_slot) {
                ok = !drop_local && entry.position < query.position;
            } else if (inst == Instantiation::trime_long) {
                ok = entry.doc == query.doc && entry.ordinal < query.ordinal;
            } else if (inst == Instantiation::trime_ext) {
                ok = true;
            }
            row[j] = ok ? 1 : 0;
        }
    }
    return spec;
}

}  // namespace trime
