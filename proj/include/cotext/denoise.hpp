#pragma once

// Span corruption: random token spans are replaced in the input by
// successive sentinels, and the target lists each sentinel followed by the
// tokens it hides, closed by EOS.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cotext/error.hpp"
#include "cotext/rng.hpp"
#include "cotext/tokenizer.hpp"

namespace cotext {

struct CorruptionConfig {
    double rate = 0.15;
    int mean_span_length = 3;
    std::uint64_t seed = 0;

    void check() const {
        if (!(rate >= 0.0 && rate <= 1.0)) throw Error(ErrorCode::invalid_config, "corruption rate must be in [0,1]");
        if (mean_span_length < 1) throw Error(ErrorCode::invalid_config, "mean span length must be >= 1");
    }
};

struct SentinelIds {
    int base = 0;
    int count = kNumSentinels;
    int eos = kEosId;

    static SentinelIds of(const Vocabulary& vocab) { return {vocab.sentinel_base(), kNumSentinels, kEosId}; }

    bool is_sentinel(int id) const { return id >= base && id < base + count; }
    int id(int k) const { return base + k; }
};

struct DenoisingExample {
    std::vector<int> input_ids;
    std::vector<int> target_ids;
    int origin_len = 0;

    bool operator==(const DenoisingExample&) const = default;
};

/// Per-record seed for shard-parallel corruption.
inline std::uint64_t record_seed(std::uint64_t seed, std::uint64_t index) { return seed ^ index; }

inline DenoisingExample corrupt(std::span<const int> ids, const CorruptionConfig& cfg, const SentinelIds& sentinels,
                                Rng& rng) {
    cfg.check();
    if (ids.empty()) throw Error(ErrorCode::empty, "cannot corrupt an empty sequence");
    for (int id : ids) {
        if (sentinels.is_sentinel(id)) throw Error(ErrorCode::sentinel_in_input, "input already contains a sentinel");
    }
    const auto n = static_cast<std::int64_t>(ids.size());
    DenoisingExample ex;
    ex.origin_len = static_cast<int>(n);
    if (cfg.rate == 0.0) {
        ex.input_ids.assign(ids.begin(), ids.end());
        ex.target_ids = {sentinels.eos};
        return ex;
    }

    const double expected = static_cast<double>(n) * cfg.rate;
    std::int64_t noise = std::clamp<std::int64_t>(std::llround(expected), 1, n);
    std::int64_t spans = std::max<std::int64_t>(1, std::llround(expected / cfg.mean_span_length));
    spans = std::min(spans, noise);
    // keep spans separated by at least one kept token; adjacent spans would be one span
    while (spans > 1 && noise + spans - 1 > n) --spans;
    spans = std::min<std::int64_t>(spans, sentinels.count);

    std::vector<std::int64_t> lengths(static_cast<std::size_t>(spans));
    const std::int64_t max_len = 2 * cfg.mean_span_length - 1;
    std::int64_t total = 0;
    for (auto& l : lengths) {
        l = rng.between(1, max_len);
        total += l;
    }
    while (total > noise) {
        auto& l = lengths[rng.below(static_cast<std::uint64_t>(spans))];
        if (l > 1) {
            --l;
            --total;
        }
    }
    while (total < noise) {
        ++lengths[rng.below(static_cast<std::uint64_t>(spans))];
        ++total;
    }

    // gaps[0] before the first span, gaps[spans] after the last; interior gaps >= 1
    std::vector<std::int64_t> gaps(static_cast<std::size_t>(spans + 1), 0);
    for (std::int64_t i = 1; i < spans; ++i) gaps[static_cast<std::size_t>(i)] = 1;
    const std::int64_t free_tokens = n - noise - (spans - 1);
    for (std::int64_t i = 0; i < free_tokens; ++i) {
        ++gaps[rng.below(static_cast<std::uint64_t>(spans + 1))];
    }

    std::size_t pos = 0;
    for (std::int64_t s = 0; s <= spans; ++s) {
        const auto gap = static_cast<std::size_t>(gaps[static_cast<std::size_t>(s)]);
        ex.input_ids.insert(ex.input_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos),
                            ids.begin() + static_cast<std::ptrdiff_t>(pos + gap));
        pos += gap;
        if (s == spans) break;
        const auto len = static_cast<std::size_t>(lengths[static_cast<std::size_t>(s)]);
        const int sentinel = sentinels.id(static_cast<int>(s));
        ex.input_ids.push_back(sentinel);
        ex.target_ids.push_back(sentinel);
        ex.target_ids.insert(ex.target_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos),
                             ids.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    ex.target_ids.push_back(sentinels.eos);
    return ex;
}

inline DenoisingExample corrupt(std::span<const int> ids, const CorruptionConfig& cfg, const SentinelIds& sentinels) {
    Rng rng(cfg.seed);
    return corrupt(ids, cfg, sentinels, rng);
}

/// Re-inserts each target span at its sentinel in the input.
inline std::vector<int> splice(const DenoisingExample& ex, const SentinelIds& sentinels) {
    const auto& t = ex.target_ids;
    if (t.empty() || t.back() != sentinels.eos) throw Error(ErrorCode::malformed_example, "target must end with EOS");
    std::vector<std::vector<int>> spans;
    std::vector<int> order;
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        if (sentinels.is_sentinel(t[i])) {
            order.push_back(t[i]);
            spans.emplace_back();
        } else {
            if (spans.empty()) throw Error(ErrorCode::malformed_example, "target does not start with a sentinel");
            spans.back().push_back(t[i]);
        }
    }
    std::vector<int> out;
    std::size_t next = 0;
    for (int id : ex.input_ids) {
        if (!sentinels.is_sentinel(id)) {
            out.push_back(id);
            continue;
        }
        if (next >= order.size() || order[next] != id || id != sentinels.id(static_cast<int>(next))) {
            throw Error(ErrorCode::malformed_example, "sentinel order differs between input and target");
        }
        out.insert(out.end(), spans[next].begin(), spans[next].end());
        ++next;
    }
    if (next != order.size()) throw Error(ErrorCode::malformed_example, "target has sentinels missing from input");
    if (ex.origin_len != static_cast<int>(out.size())) {
        throw Error(ErrorCode::malformed_example, "reconstructed length differs from origin_len");
    }
    return out;
}

inline void write_example(std::ostream& out, const DenoisingExample& ex) {
    nlohmann::ordered_json j;
    j["input_ids"] = ex.input_ids;
    j["target_ids"] = ex.target_ids;
    j["origin_len"] = ex.origin_len;
    out << j.dump() << '\n';
}

inline std::vector<DenoisingExample> read_examples(std::istream& in) {
    std::vector<DenoisingExample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("input_ids") || !j.contains("target_ids") || !j.contains("origin_len")) {
            throw Error(ErrorCode::format_error, "bad example line");
        }
        out.push_back({j["input_ids"].get<std::vector<int>>(), j["target_ids"].get<std::vector<int>>(),
                       j["origin_len"].get<int>()});
    }
    return out;
}

} // namespace cotext
