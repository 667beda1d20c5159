#pragma once

// Small synthetic seq2seq tasks over a toy id space: ids 3..3+symbols-1 are
// content tokens, the next two are task prefix tokens.

#include <vector>

#include "cotext/infer.hpp"
#include "cotext/model.hpp"
#include "cotext/rng.hpp"

namespace testing_support {

inline constexpr int kSymbols = 10;
inline constexpr int kCopyPrefix = cotext::kByteBase + kSymbols;
inline constexpr int kReversePrefix = kCopyPrefix + 1;
inline constexpr int kToyVocab = kReversePrefix + 1;

inline cotext::ModelConfig toy_config(int vocab = kToyVocab) {
    cotext::ModelConfig c;
    c.vocab_size = vocab;
    c.max_input_len = 16;
    c.max_target_len = 16;
    c.dropout = 0.0;
    return c;
}

inline std::vector<int> random_content(cotext::Rng& rng, std::size_t lo, std::size_t hi) {
    std::vector<int> v(static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi))));
    for (auto& x : v) x = cotext::kByteBase + static_cast<int>(rng.below(kSymbols));
    return v;
}

inline cotext::SeqPair prefixed(int prefix, const std::vector<int>& content, bool reverse) {
    cotext::SeqPair p;
    p.input.push_back(prefix);
    p.input.insert(p.input.end(), content.begin(), content.end());
    p.target = content;
    if (reverse) std::reverse(p.target.begin(), p.target.end());
    p.target.push_back(cotext::kEosId);
    return p;
}

inline std::vector<int> without_eos(std::vector<int> t) {
    if (!t.empty() && t.back() == cotext::kEosId) t.pop_back();
    return t;
}

/// Fraction of pairs whose greedy output equals the target.
inline double greedy_exact_match(const cotext::Parameters& p, const cotext::ModelConfig& cfg,
                                 const std::vector<cotext::SeqPair>& pairs) {
    cotext::DecodeConfig dc;
    dc.max_length = cfg.max_target_len;
    std::size_t hit = 0;
    for (const auto& s : pairs) {
        if (cotext::greedy_search(p, cfg, s.input, dc).output() == without_eos(s.target)) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(pairs.size());
}

} // namespace testing_support
