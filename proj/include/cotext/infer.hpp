#pragma once

// Decoding: greedy, length-normalized beam search, and label scoring by
// teacher-forced log-likelihood.

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cotext/error.hpp"
#include "cotext/model.hpp"
#include "cotext/tokenizer.hpp"
#include "cotext/trainer.hpp"

namespace cotext {

enum class DecodeStrategy { greedy, beam };

struct DecodeConfig {
    int max_length = 64;
    DecodeStrategy strategy = DecodeStrategy::greedy;
    int beam_size = 4;
    double length_penalty = 0.6;

    void check() const {
        if (max_length < 1) throw Error(ErrorCode::invalid_config, "max_length must be >= 1");
        if (beam_size < 1) throw Error(ErrorCode::invalid_config, "beam_size must be >= 1");
        if (!std::isfinite(length_penalty)) throw Error(ErrorCode::invalid_config, "length_penalty must be finite");
    }
};

/// Encoder output for one input, reused across decoding steps.
struct EncodedInput {
    Matrix states;
    std::vector<std::uint8_t> mask;
};

inline EncodedInput encode_input(const Parameters& params, const ModelConfig& cfg, std::span<const int> input) {
    if (input.size() > static_cast<std::size_t>(cfg.max_input_len)) {
        throw Error(ErrorCode::input_too_long, "input has " + std::to_string(input.size()) + " tokens, limit " +
                                                   std::to_string(cfg.max_input_len));
    }
    std::vector<int> ids(input.begin(), input.end());
    std::vector<std::uint8_t> mask(ids.size(), 1);
    if (ids.empty()) {
        ids = {kPadId};
        mask = {0};
    }
    for (int id : ids) {
        if (id < 0 || id >= cfg.vocab_size) throw Error(ErrorCode::shape_mismatch, "input id outside vocabulary");
    }
    ad::Tape t(false);
    const ParamVars pv = bind_parameters(t, params);
    const ad::Var enc = build_encoder(t, params, pv, cfg, ids, mask, nullptr);
    return {t.value(enc), std::move(mask)};
}

/// Log-softmax of the next-token distribution after decoder prefix `prefix`
/// (which starts with the start token).
inline std::vector<double> next_token_logprobs(const Parameters& params, const ModelConfig& cfg,
                                               const EncodedInput& enc, std::span<const int> prefix) {
    ad::Tape t(false);
    const ParamVars pv = bind_parameters(t, params);
    const ad::Var e = t.input(enc.states);
    const ad::Var logits = build_decoder(t, params, pv, cfg, e, enc.mask, prefix, nullptr);
    const Matrix& L = t.value(logits);
    const double* row = L.row(L.rows - 1);
    const double mx = *std::max_element(row, row + L.cols);
    double z = 0.0;
    for (std::size_t j = 0; j < L.cols; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    std::vector<double> out(L.cols);
    for (std::size_t j = 0; j < L.cols; ++j) out[j] = row[j] - lz;
    return out;
}

struct Hypothesis {
    std::vector<int> tokens; // generated tokens, including a final EOS when finished
    double logprob = 0.0;
    double score = 0.0;
    bool finished = false;

    /// Tokens without the closing EOS.
    std::vector<int> output() const {
        std::vector<int> o = tokens;
        if (finished && !o.empty() && o.back() == kEosId) o.pop_back();
        return o;
    }
};

/// logprob / ((5 + len) / 6)^alpha
inline double length_normalized(double logprob, std::size_t len, double alpha) {
    return logprob / std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

inline Hypothesis greedy_search(const Parameters& params, const ModelConfig& cfg, std::span<const int> input,
                                const DecodeConfig& dc) {
    dc.check();
    const auto enc = encode_input(params, cfg, input);
    Hypothesis h;
    std::vector<int> prefix = {kPadId};
    for (int step = 0; step < dc.max_length; ++step) {
        const auto lp = next_token_logprobs(params, cfg, enc, prefix);
        const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
        h.tokens.push_back(best);
        h.logprob += lp[static_cast<std::size_t>(best)];
        prefix.push_back(best);
        if (best == kEosId) {
            h.finished = true;
            break;
        }
    }
    h.score = length_normalized(h.logprob, h.tokens.size(), dc.length_penalty);
    return h;
}

inline Hypothesis beam_search(const Parameters& params, const ModelConfig& cfg, std::span<const int> input,
                              const DecodeConfig& dc) {
    dc.check();
    const auto enc = encode_input(params, cfg, input);
    const auto width = static_cast<std::size_t>(dc.beam_size);
    std::vector<Hypothesis> live(1);
    std::vector<Hypothesis> done;
    struct Candidate {
        std::size_t parent;
        int token;
        double logprob;
    };
    for (int step = 0; step < dc.max_length && !live.empty() && done.size() < width; ++step) {
        std::vector<Candidate> cands;
        for (std::size_t h = 0; h < live.size(); ++h) {
            std::vector<int> prefix = {kPadId};
            prefix.insert(prefix.end(), live[h].tokens.begin(), live[h].tokens.end());
            const auto lp = next_token_logprobs(params, cfg, enc, prefix);
            std::vector<int> ids(lp.size());
            std::iota(ids.begin(), ids.end(), 0);
            const std::size_t k = std::min(width, ids.size());
            std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), [&](int a, int b) {
                return lp[static_cast<std::size_t>(a)] != lp[static_cast<std::size_t>(b)]
                           ? lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(b)]
                           : a < b;
            });
            for (std::size_t i = 0; i < k; ++i) {
                cands.push_back({h, ids[i], live[h].logprob + lp[static_cast<std::size_t>(ids[i])]});
            }
        }
        // all candidates share one length, so log-prob order is score order
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) { return a.logprob > b.logprob; });
        std::vector<Hypothesis> next;
        for (const auto& c : cands) {
            if (next.size() >= width) break;
            Hypothesis h = live[c.parent];
            h.tokens.push_back(c.token);
            h.logprob = c.logprob;
            h.score = length_normalized(h.logprob, h.tokens.size(), dc.length_penalty);
            if (c.token == kEosId) {
                h.finished = true;
                if (done.size() < width) done.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
    }
    const auto& pool = done.empty() ? live : done;
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
        if (pool[i].score > pool[best].score) best = i;
    }
    return pool[best];
}

inline Hypothesis decode(const Parameters& params, const ModelConfig& cfg, std::span<const int> input,
                         const DecodeConfig& dc) {
    return dc.strategy == DecodeStrategy::greedy ? greedy_search(params, cfg, input, dc)
                                                 : beam_search(params, cfg, input, dc);
}

/// Teacher-forced log-likelihood of each target (EOS is not appended here).
inline std::vector<double> score_targets(const Parameters& params, const ModelConfig& cfg, std::span<const int> input,
                                         const std::vector<std::vector<int>>& targets) {
    if (input.size() > static_cast<std::size_t>(cfg.max_input_len)) {
        throw Error(ErrorCode::input_too_long, "input exceeds max_input_len");
    }
    std::vector<SeqPair> pairs;
    for (const auto& t : targets) pairs.push_back({std::vector<int>(input.begin(), input.end()), t});
    const Batch batch = Batch::from_pairs(pairs);
    const Logits logits = forward(params, cfg, batch);
    std::vector<double> scores(targets.size(), 0.0);
    for (std::size_t b = 0; b < targets.size(); ++b) {
        for (std::size_t t = 0; t < targets[b].size(); ++t) {
            const double* row = logits.at(b, t);
            const double mx = *std::max_element(row, row + logits.vocab);
            double z = 0.0;
            for (std::size_t j = 0; j < logits.vocab; ++j) z += std::exp(row[j] - mx);
            scores[b] += row[static_cast<std::size_t>(targets[b][t])] - mx - std::log(z);
        }
    }
    return scores;
}

struct ClassifyResult {
    std::size_t index = 0;
    std::vector<double> scores;
};

/// Scores each label sequence (EOS appended) and returns the argmax; ties go to the lower index.
inline ClassifyResult classify(const Parameters& params, const ModelConfig& cfg, std::span<const int> input,
                               const std::vector<std::vector<int>>& labels) {
    if (labels.empty()) throw Error(ErrorCode::invalid_config, "no labels to score");
    std::vector<std::vector<int>> targets;
    for (const auto& l : labels) {
        auto t = l;
        t.push_back(kEosId);
        if (t.size() > static_cast<std::size_t>(cfg.max_target_len)) {
            throw Error(ErrorCode::invalid_config, "label longer than max_target_len");
        }
        targets.push_back(std::move(t));
    }
    ClassifyResult r;
    r.scores = score_targets(params, cfg, input, targets);
    for (std::size_t i = 1; i < r.scores.size(); ++i) {
        if (r.scores[i] > r.scores[r.index]) r.index = i;
    }
    return r;
}

inline constexpr std::string_view kPositiveLabel = "positive";
inline constexpr std::string_view kNegativeLabel = "negative";

struct Prediction {
    std::string id;
    std::string prediction;

    bool operator==(const Prediction&) const = default;
};

inline void write_predictions(std::ostream& out, const std::vector<Prediction>& preds) {
    for (const auto& p : preds) {
        nlohmann::ordered_json j;
        j["id"] = p.id;
        j["prediction"] = p.prediction;
        out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    }
}

inline std::vector<Prediction> read_predictions(std::istream& in) {
    std::vector<Prediction> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("id") || !j.contains("prediction") || !j["id"].is_string() ||
            !j["prediction"].is_string()) {
            throw Error(ErrorCode::format_error, "bad prediction line " + std::to_string(lineno));
        }
        out.push_back({j["id"].get<std::string>(), j["prediction"].get<std::string>()});
    }
    return out;
}

} // namespace cotext
