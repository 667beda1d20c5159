#pragma once

// Corpus BLEU, smoothed sentence BLEU-4, exact match, accuracy and CodeBLEU.
// All values are on a 0..100 scale; CodeBLEU components are fractions.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cotext/codec.hpp"
#include "cotext/error.hpp"
#include "cotext/minilang.hpp"

namespace cotext {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

/// Whitespace tokens of the denormalized text.
inline std::vector<std::string> metric_tokens(std::string_view text) {
    static const CodecTable table = CodecTable::default_table();
    return split_whitespace(denormalize(text, table));
}

inline NgramCounts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts out;
    if (tokens.size() < n) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return out;
}

namespace detail {

inline void check_lengths(std::size_t a, std::size_t b, bool allow_empty = false) {
    if (a != b) {
        throw Error(ErrorCode::length_mismatch,
                    "got " + std::to_string(a) + " candidates for " + std::to_string(b) + " references");
    }
    if (a == 0 && !allow_empty) throw Error(ErrorCode::empty, "no pairs to score");
}

// Clipped matches and candidate totals for one order, with optional per-token
// weights applied to unigrams.
struct OrderStats {
    double matched = 0.0;
    double total = 0.0;
};

inline OrderStats order_stats(const std::vector<std::string>& cand, const std::vector<std::string>& ref, std::size_t n,
                              const std::set<std::string>* weighted = nullptr, double weight = 1.0) {
    OrderStats s;
    const auto c = ngram_counts(cand, n);
    const auto r = ngram_counts(ref, n);
    for (const auto& [gram, count] : c) {
        const double w = (weighted && n == 1 && weighted->count(gram[0])) ? weight : 1.0;
        auto it = r.find(gram);
        const std::size_t clipped = it == r.end() ? 0 : std::min(count, it->second);
        s.matched += w * static_cast<double>(clipped);
        s.total += w * static_cast<double>(count);
    }
    return s;
}

inline double brevity_penalty(double cand_len, double ref_len) {
    if (cand_len <= 0.0) return 0.0;
    return cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
}

inline double corpus_bleu_tokens(const std::vector<std::vector<std::string>>& cands,
                                 const std::vector<std::vector<std::string>>& refs, std::size_t max_n,
                                 const std::set<std::string>* weighted = nullptr, double weight = 1.0) {
    std::vector<OrderStats> totals(max_n);
    double cand_len = 0.0;
    double ref_len = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        cand_len += static_cast<double>(cands[i].size());
        ref_len += static_cast<double>(refs[i].size());
        for (std::size_t n = 1; n <= max_n; ++n) {
            const auto s = order_stats(cands[i], refs[i], n, weighted, weight);
            totals[n - 1].matched += s.matched;
            totals[n - 1].total += s.total;
        }
    }
    double log_sum = 0.0;
    for (const auto& t : totals) {
        if (t.total <= 0.0 || t.matched <= 0.0) return 0.0;
        log_sum += std::log(t.matched / t.total);
    }
    return brevity_penalty(cand_len, ref_len) * std::exp(log_sum / static_cast<double>(max_n));
}

inline std::vector<std::vector<std::string>> tokenize_all(const std::vector<std::string>& texts) {
    std::vector<std::vector<std::string>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(metric_tokens(t));
    return out;
}

inline std::string normalize_whitespace(std::string_view text) {
    std::string out;
    for (const auto& w : split_whitespace(text)) out += (out.empty() ? "" : " ") + w;
    return out;
}

} // namespace detail

/// Corpus BLEU: geometric mean of clipped n-gram precisions times brevity penalty, no smoothing.
inline double bleu_corpus(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
                          std::size_t max_n = 4) {
    detail::check_lengths(candidates.size(), references.size());
    if (max_n < 1) throw Error(ErrorCode::invalid_config, "max_n must be >= 1");
    return 100.0 * detail::corpus_bleu_tokens(detail::tokenize_all(candidates), detail::tokenize_all(references), max_n);
}

/// Sentence BLEU-4 with add-one smoothing for orders 2..4, averaged over pairs.
inline double bleu_smooth4(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    detail::check_lengths(candidates.size(), references.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = metric_tokens(candidates[i]);
        const auto r = metric_tokens(references[i]);
        if (c.empty()) continue;
        double log_sum = 0.0;
        bool zero = false;
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto s = detail::order_stats(c, r, n);
            const double p = n == 1 ? s.matched / s.total : (s.matched + 1.0) / (s.total + 1.0);
            if (p <= 0.0) {
                zero = true;
                break;
            }
            log_sum += std::log(p);
        }
        if (zero) continue;
        sum += detail::brevity_penalty(static_cast<double>(c.size()), static_cast<double>(r.size())) *
               std::exp(log_sum / 4.0);
    }
    return 100.0 * sum / static_cast<double>(candidates.size());
}

/// Percentage of candidates equal to their reference after collapsing whitespace.
inline double exact_match(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    detail::check_lengths(candidates.size(), references.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        hits += detail::normalize_whitespace(candidates[i]) == detail::normalize_whitespace(references[i]);
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(candidates.size());
}

inline double accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& gold) {
    detail::check_lengths(predicted.size(), gold.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == gold[i];
    return 100.0 * static_cast<double>(hits) / static_cast<double>(predicted.size());
}

struct CodeBleuWeights {
    double ngram = 0.25;
    double weighted_ngram = 0.25;
    double syntax = 0.25;
    double dataflow = 0.25;
    double keyword_weight = 5.0;

    void check() const {
        const double ws[] = {ngram, weighted_ngram, syntax, dataflow};
        double sum = 0.0;
        for (double w : ws) {
            if (!std::isfinite(w) || w < 0.0) throw Error(ErrorCode::invalid_weights, "weights must be finite and >= 0");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::invalid_weights, "weights must sum to 1");
        if (!std::isfinite(keyword_weight) || keyword_weight <= 0.0) {
            throw Error(ErrorCode::invalid_weights, "keyword weight must be > 0");
        }
    }
};

struct MetricReport {
    std::string task;
    std::string metric;
    double value = 0.0;
    std::map<std::string, double> components;
    std::size_t evaluated = 0;
    std::size_t parse_failures = 0;
    std::map<std::string, double> weights;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["task"] = task;
        j["metric"] = metric;
        j["value"] = value;
        j["components"] = nlohmann::ordered_json::object();
        for (const auto& [k, v] : components) j["components"][k] = v;
        j["counts"] = {{"evaluated", evaluated}, {"parse_failures", parse_failures}};
        if (!weights.empty()) {
            j["weights"] = nlohmann::ordered_json::object();
            for (const auto& [k, v] : weights) j["weights"][k] = v;
        }
        return j;
    }

    static MetricReport from_json(const nlohmann::json& j) {
        try {
            MetricReport r;
            r.task = j.at("task").get<std::string>();
            r.metric = j.at("metric").get<std::string>();
            r.value = j.at("value").get<double>();
            for (const auto& [k, v] : j.at("components").items()) r.components[k] = v.get<double>();
            r.evaluated = j.at("counts").at("evaluated").get<std::size_t>();
            r.parse_failures = j.at("counts").at("parse_failures").get<std::size_t>();
            if (j.contains("weights")) {
                for (const auto& [k, v] : j["weights"].items()) r.weights[k] = v.get<double>();
            }
            return r;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::format_error, std::string("bad metric report: ") + e.what());
        }
    }

    /// One line, values rounded to two decimals.
    std::string display() const {
        auto fmt = [](double v) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f", v);
            return std::string(buf);
        };
        std::string s = "task=" + task + " metric=" + metric + " value=" + fmt(value);
        for (const auto& [k, v] : components) s += " " + k + "=" + fmt(v);
        s += " evaluated=" + std::to_string(evaluated);
        if (metric == "codebleu") s += " parse_failures=" + std::to_string(parse_failures);
        return s;
    }

    bool operator==(const MetricReport&) const = default;
};

inline bool in_metric_range(double v) { return v >= 0.0 && v <= 100.0; }

namespace detail {

inline std::optional<minilang::AstNode> try_parse(std::string_view code) {
    static const CodecTable table = CodecTable::default_table();
    try {
        return minilang::parse_code(denormalize(code, table));
    } catch (const minilang::SyntaxError&) {
        return std::nullopt;
    }
}

inline std::size_t multiset_overlap(const std::multiset<std::string>& a, const std::multiset<std::string>& b) {
    std::vector<std::string> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    return common.size();
}

inline const std::set<std::string>& code_keywords() {
    static const std::set<std::string> kws(minilang::kKeywords.begin(), minilang::kKeywords.end());
    return kws;
}

} // namespace detail

/// Composite of corpus BLEU, keyword-weighted BLEU, AST subtree match and
/// def-use edge match. A pair where either side fails to parse scores zero
/// on the structural components.
inline MetricReport codebleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
                             const CodeBleuWeights& w = {}) {
    detail::check_lengths(candidates.size(), references.size());
    w.check();
    const auto cand_tokens = detail::tokenize_all(candidates);
    const auto ref_tokens = detail::tokenize_all(references);
    const double ngram = detail::corpus_bleu_tokens(cand_tokens, ref_tokens, 4);
    const double weighted =
        detail::corpus_bleu_tokens(cand_tokens, ref_tokens, 4, &detail::code_keywords(), w.keyword_weight);

    double syn_match = 0.0, syn_total = 0.0, df_match = 0.0, df_total = 0.0;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto ref = detail::try_parse(references[i]);
        const auto cand = ref ? detail::try_parse(candidates[i]) : std::nullopt;
        if (!ref || !cand) {
            ++failures;
            syn_total += ref ? static_cast<double>(ref->count()) : 1.0;
            df_total += ref ? std::max<double>(1.0, static_cast<double>(minilang::dataflow(*ref).edges.size())) : 1.0;
            continue;
        }
        const auto rs = minilang::subtrees(*ref);
        syn_match += static_cast<double>(detail::multiset_overlap(minilang::subtrees(*cand), rs));
        syn_total += static_cast<double>(rs.size());
        const auto re = minilang::dataflow(*ref).edges;
        const auto ce = minilang::dataflow(*cand).edges;
        std::size_t common = 0;
        for (const auto& e : ce) common += re.count(e);
        df_match += static_cast<double>(common);
        df_total += static_cast<double>(re.size());
    }
    // no reference edges and no failures: nothing to miss
    const double syntax = syn_total > 0.0 ? syn_match / syn_total : 1.0;
    const double dataflow = df_total > 0.0 ? df_match / df_total : 1.0;

    MetricReport r;
    r.metric = "codebleu";
    r.components = {{"ngram", ngram}, {"weighted_ngram", weighted}, {"syntax", syntax}, {"dataflow", dataflow}};
    r.value = 100.0 * (w.ngram * ngram + w.weighted_ngram * weighted + w.syntax * syntax + w.dataflow * dataflow);
    r.evaluated = candidates.size();
    r.parse_failures = failures;
    r.weights = {{"ngram", w.ngram},
                 {"weighted_ngram", w.weighted_ngram},
                 {"syntax", w.syntax},
                 {"dataflow", w.dataflow},
                 {"keyword_weight", w.keyword_weight}};
    return r;
}

} // namespace cotext
