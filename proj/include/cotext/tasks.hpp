#pragma once

// Adapters from the four downstream dataset shapes to prefixed,
// codec-normalized text pairs, and their length-limited token encoding.

#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cotext/codec.hpp"
#include "cotext/error.hpp"
#include "cotext/model.hpp"
#include "cotext/tokenizer.hpp"

namespace cotext {

enum class TaskKind { summarization, generation, refinement, defect };
enum class RefinementSize { small, medium };

inline std::string_view to_string(RefinementSize s) { return s == RefinementSize::small ? "small" : "medium"; }

inline constexpr std::string_view kContextToken = "<CTX>";

struct TaskSpec {
    TaskKind kind = TaskKind::summarization;
    std::string name;
    std::string prefix;
    int input_len = 0;
    int target_len = 0;
    std::vector<std::string> metrics;

    /// Lengths divided by `divisor` (targets of at most 8 tokens are kept).
    TaskSpec scaled(int divisor) const {
        if (divisor < 1) throw Error(ErrorCode::invalid_config, "scale divisor must be >= 1");
        TaskSpec s = *this;
        s.input_len = std::max(1, input_len / divisor);
        if (target_len > 8) s.target_len = std::max(1, target_len / divisor);
        return s;
    }
};

inline constexpr int kDeskScaleDivisor = 4;

namespace task_specs {

inline TaskSpec summarization(const std::string& language) {
    return {TaskKind::summarization, "summarization_" + language, language + ": ", 512, 512, {"smooth_bleu"}};
}
inline TaskSpec generation() {
    return {TaskKind::generation, "generation", "generate java: ", 256, 256, {"exact_match", "bleu", "codebleu"}};
}
inline TaskSpec refinement(RefinementSize size) {
    const std::string s(to_string(size));
    return {TaskKind::refinement, "refinement_" + s, "refine " + s + ": ", 512, 512, {"bleu", "exact_match"}};
}
inline TaskSpec defect() { return {TaskKind::defect, "defect", "defect: ", 1024, 5, {"accuracy"}}; }

} // namespace task_specs

struct TaskExample {
    std::string id;
    std::string input;
    std::string target;
    std::string task;

    bool operator==(const TaskExample&) const = default;
};

struct TaskLoadStats {
    std::size_t ingested = 0;
    std::size_t emitted = 0;
    std::size_t skipped = 0;
};

namespace detail {

inline const CodecTable& task_codec() {
    static const CodecTable t = CodecTable::default_table();
    return t;
}

// Calls fn(json, line_number) for each non-blank line.
template <class Fn> void for_each_record(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw Error(ErrorCode::format_error, "line " + std::to_string(lineno) + " is not a JSON object");
        }
        fn(j, lineno);
    }
}

inline std::string required_string(const nlohmann::json& j, const char* key, std::size_t lineno) {
    if (!j.contains(key) || !j[key].is_string()) {
        throw Error(ErrorCode::format_error, "line " + std::to_string(lineno) + " lacks string field '" + key + "'");
    }
    return j[key].get<std::string>();
}

inline std::string record_id(const nlohmann::json& j, std::size_t lineno) {
    if (j.contains("id") && j["id"].is_string()) return j["id"].get<std::string>();
    return "line-" + std::to_string(lineno);
}

inline std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_string()) return std::nullopt;
    return j[key].get<std::string>();
}

} // namespace detail

/// `{id, language, code, doc}` records. The record's language selects the
/// prefix; `language` is the fallback. Records without a doc are skipped.
inline std::vector<TaskExample> load_summarization(std::istream& in, const std::string& language,
                                                   TaskLoadStats& stats) {
    std::vector<TaskExample> out;
    detail::for_each_record(in, [&](const nlohmann::json& j, std::size_t lineno) {
        ++stats.ingested;
        const std::string code = detail::required_string(j, "code", lineno);
        const auto doc = detail::optional_string(j, "doc");
        if (!doc || doc->find_first_not_of(" \t\r\n") == std::string::npos) {
            ++stats.skipped;
            return;
        }
        const std::string lang = detail::optional_string(j, "language").value_or(language);
        const TaskSpec spec = task_specs::summarization(lang);
        out.push_back({detail::record_id(j, lineno), spec.prefix + normalize(code, detail::task_codec()), *doc,
                       spec.name});
        ++stats.emitted;
    });
    return out;
}

/// `{id, nl, env?, code}` records; the environment follows a context token.
inline std::vector<TaskExample> load_generation(std::istream& in, TaskLoadStats& stats) {
    const TaskSpec spec = task_specs::generation();
    std::vector<TaskExample> out;
    detail::for_each_record(in, [&](const nlohmann::json& j, std::size_t lineno) {
        ++stats.ingested;
        std::string input = detail::required_string(j, "nl", lineno);
        const std::string code = detail::required_string(j, "code", lineno);
        if (auto env = detail::optional_string(j, "env"); env && !env->empty()) {
            input += " " + std::string(kContextToken) + " " + *env;
        }
        out.push_back({detail::record_id(j, lineno), spec.prefix + normalize(input, detail::task_codec()),
                       normalize(code, detail::task_codec()), spec.name});
        ++stats.emitted;
    });
    return out;
}

/// `{id, buggy, fixed}` records.
inline std::vector<TaskExample> load_refinement(std::istream& in, RefinementSize size, TaskLoadStats& stats) {
    const TaskSpec spec = task_specs::refinement(size);
    std::vector<TaskExample> out;
    detail::for_each_record(in, [&](const nlohmann::json& j, std::size_t lineno) {
        ++stats.ingested;
        const std::string buggy = detail::required_string(j, "buggy", lineno);
        const std::string fixed = detail::required_string(j, "fixed", lineno);
        out.push_back({detail::record_id(j, lineno), spec.prefix + normalize(buggy, detail::task_codec()),
                       normalize(fixed, detail::task_codec()), spec.name});
        ++stats.emitted;
    });
    return out;
}

inline constexpr std::string_view kPositive = "positive";
inline constexpr std::string_view kNegative = "negative";

/// `{id, code, label}` records with label 0 or 1.
inline std::vector<TaskExample> load_defect(std::istream& in, TaskLoadStats& stats) {
    const TaskSpec spec = task_specs::defect();
    std::vector<TaskExample> out;
    detail::for_each_record(in, [&](const nlohmann::json& j, std::size_t lineno) {
        ++stats.ingested;
        const std::string code = detail::required_string(j, "code", lineno);
        if (!j.contains("label")) throw Error(ErrorCode::format_error, "line " + std::to_string(lineno) + " lacks label");
        const auto& l = j["label"];
        int label = -1;
        if (l.is_number_integer()) label = l.get<int>();
        else if (l.is_boolean()) label = l.get<bool>() ? 1 : 0;
        if (label != 0 && label != 1) {
            throw Error(ErrorCode::bad_label, "line " + std::to_string(lineno) + " has label " + l.dump());
        }
        out.push_back({detail::record_id(j, lineno), spec.prefix + normalize(code, detail::task_codec()),
                       std::string(label == 1 ? kPositive : kNegative), spec.name});
        ++stats.emitted;
    });
    return out;
}

/// Parsed `manifest` lines: "<file> records=N emitted=E skipped=S".
inline std::map<std::string, TaskLoadStats> read_task_manifest(std::istream& in) {
    std::map<std::string, TaskLoadStats> out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string file, field;
        if (!(ls >> file)) continue;
        TaskLoadStats s;
        while (ls >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) throw Error(ErrorCode::format_error, "bad manifest field '" + field + "'");
            const std::string key = field.substr(0, eq);
            const std::size_t value = std::stoul(field.substr(eq + 1));
            if (key == "records") s.ingested = value;
            else if (key == "emitted") s.emitted = value;
            else if (key == "skipped") s.skipped = value;
        }
        out[file] = s;
    }
    return out;
}

/// Token ids of one example; targets end with EOS.
struct EncodedExample {
    std::string id;
    SeqPair pair;
    bool input_truncated = false;
    bool target_truncated = false;
};

/// Encodes and truncates to the spec lengths: at most input_len input ids and
/// at most target_len target ids including the closing EOS.
inline EncodedExample encode_example(const TaskExample& ex, const Vocabulary& vocab, const TaskSpec& spec) {
    if (spec.input_len < 1 || spec.target_len < 2) throw Error(ErrorCode::invalid_config, "task lengths too small");
    EncodedExample e;
    e.id = ex.id;
    e.pair.input = vocab.encode(ex.input);
    if (e.pair.input.size() > static_cast<std::size_t>(spec.input_len)) {
        e.pair.input.resize(static_cast<std::size_t>(spec.input_len));
        e.input_truncated = true;
    }
    e.pair.target = vocab.encode(ex.target);
    const auto body = static_cast<std::size_t>(spec.target_len - 1);
    if (e.pair.target.size() > body) {
        e.pair.target.resize(body);
        e.target_truncated = true;
    }
    e.pair.target.push_back(kEosId);
    return e;
}

} // namespace cotext
