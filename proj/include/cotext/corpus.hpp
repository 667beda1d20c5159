#pragma once

// Function-record ingestion and assembly of bimodal (doc + code) and
// unimodal (code only) pretraining sequences.

#include <cctype>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cotext/codec.hpp"
#include "cotext/error.hpp"

namespace cotext {

struct FunctionRecord {
    std::string id;
    std::string language;
    std::string code;
    std::optional<std::string> doc;
};

enum class Modality { bimodal, unimodal };

inline std::string_view to_string(Modality m) { return m == Modality::bimodal ? "bimodal" : "unimodal"; }

struct PretrainSequence {
    std::string text;
    Modality modality = Modality::unimodal;
    std::string source_id;

    bool operator==(const PretrainSequence&) const = default;
};

inline constexpr std::string_view kDefaultSeparator = " <SEP> ";

struct IngestStats {
    std::size_t lines = 0;     // non-blank lines seen
    std::size_t malformed = 0; // unparsable JSON or field violations
    std::size_t rejected = 0;  // failed codec validation
    std::size_t emitted = 0;
};

namespace detail {

inline bool is_lower_ascii_tag(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '+' || c == '#')) return false;
    }
    return true;
}

inline std::optional<FunctionRecord> parse_record(const std::string& line) {
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    if (!j.contains("id") || !j["id"].is_string()) return std::nullopt;
    if (!j.contains("language") || !j["language"].is_string()) return std::nullopt;
    if (!j.contains("code") || !j["code"].is_string()) return std::nullopt;
    FunctionRecord r;
    r.id = j["id"].get<std::string>();
    r.language = j["language"].get<std::string>();
    r.code = j["code"].get<std::string>();
    if (j.contains("doc") && !j["doc"].is_null()) {
        if (!j["doc"].is_string()) return std::nullopt;
        r.doc = j["doc"].get<std::string>();
    }
    if (r.code.empty() || !is_lower_ascii_tag(r.language)) return std::nullopt;
    return r;
}

} // namespace detail

/// Reads corpus JSON Lines. Malformed lines and records that fail codec
/// validation are skipped and counted; an unreadable first record is fatal.
inline std::vector<FunctionRecord> ingest(std::istream& in, const CodecTable& table, IngestStats& stats) {
    if (!in) throw Error(ErrorCode::io_failure, "corpus stream not readable");
    std::vector<FunctionRecord> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++stats.lines;
        auto rec = detail::parse_record(line);
        if (!rec) {
            if (first) throw Error(ErrorCode::format_error, "first corpus record is unreadable");
            ++stats.malformed;
            continue;
        }
        first = false;
        if (!validate(rec->code, table) || (rec->doc && !validate(*rec->doc, table))) {
            ++stats.rejected;
            continue;
        }
        out.push_back(std::move(*rec));
        ++stats.emitted;
    }
    if (in.bad()) throw Error(ErrorCode::io_failure, "read failure in corpus stream");
    return out;
}

inline PretrainSequence make_bimodal(const FunctionRecord& record, const CodecTable& table,
                                     std::string_view separator = kDefaultSeparator) {
    if (!record.doc || record.doc->empty()) {
        throw Error(ErrorCode::missing_doc, "record " + record.id + " has no doc");
    }
    std::string text = normalize(*record.doc, table);
    text += separator;
    text += normalize(record.code, table);
    return {std::move(text), Modality::bimodal, record.id};
}

inline PretrainSequence make_unimodal(const FunctionRecord& record, const CodecTable& table) {
    return {normalize(record.code, table), Modality::unimodal, record.id};
}

enum class CombinationName { one_cc, two_cc, one_ccg };

struct CorpusCombination {
    CombinationName name;
    Modality modality;
    std::vector<std::string> sources;

    /// The three pretraining mixtures: code only, doc+code, code only plus repository functions.
    static CorpusCombination of(CombinationName name) {
        switch (name) {
        case CombinationName::one_cc: return {name, Modality::unimodal, {"codesearchnet"}};
        case CombinationName::two_cc: return {name, Modality::bimodal, {"codesearchnet"}};
        case CombinationName::one_ccg: return {name, Modality::unimodal, {"codesearchnet", "github"}};
        }
        throw Error(ErrorCode::invalid_config, "unknown combination");
    }

    static CorpusCombination parse(std::string_view name) {
        if (name == "1-CC" || name == "ONE_CC") return of(CombinationName::one_cc);
        if (name == "2-CC" || name == "TWO_CC") return of(CombinationName::two_cc);
        if (name == "1-CCG" || name == "ONE_CCG") return of(CombinationName::one_ccg);
        throw Error(ErrorCode::invalid_config, "unknown corpus combination: " + std::string(name));
    }

    std::string_view label() const {
        switch (name) {
        case CombinationName::one_cc: return "1-CC";
        case CombinationName::two_cc: return "2-CC";
        case CombinationName::one_ccg: return "1-CCG";
        }
        return "?";
    }
};

struct SourceStats {
    std::size_t ingested = 0;
    std::size_t emitted = 0;
    std::size_t skipped = 0;
};

struct BuildOptions {
    std::string separator = std::string(kDefaultSeparator);
    // Plain natural-language text appended after the code sources, standing in
    // for the general-text corpus the checkpoints start from. Off by default.
    bool mix_natural_text = false;
    std::string natural_text_source = "c4";
};

/// Emits sequences source by source in the combination's order. Bimodal
/// combinations skip doc-less records.
inline std::vector<PretrainSequence> build(const CorpusCombination& combination,
                                           const std::map<std::string, std::vector<FunctionRecord>>& sources,
                                           const CodecTable& table, const BuildOptions& options,
                                           std::map<std::string, SourceStats>& stats) {
    std::vector<std::string> order = combination.sources;
    if (options.mix_natural_text) order.push_back(options.natural_text_source);
    for (const auto& name : order) {
        if (!sources.contains(name)) throw Error(ErrorCode::missing_source, "source not provided: " + name);
    }
    std::vector<PretrainSequence> out;
    for (const auto& name : order) {
        auto& st = stats[name];
        const bool natural = options.mix_natural_text && name == options.natural_text_source;
        for (const auto& rec : sources.at(name)) {
            ++st.ingested;
            if (natural) {
                out.push_back({normalize(rec.code, table), combination.modality, rec.id});
            } else if (combination.modality == Modality::bimodal) {
                if (!rec.doc || rec.doc->empty()) {
                    ++st.skipped;
                    continue;
                }
                out.push_back(make_bimodal(rec, table, options.separator));
            } else {
                out.push_back(make_unimodal(rec, table));
            }
            ++st.emitted;
        }
    }
    return out;
}

inline void write_sequences(std::ostream& out, const std::vector<PretrainSequence>& seqs) {
    for (const auto& s : seqs) {
        nlohmann::ordered_json j;
        j["text"] = s.text;
        j["modality"] = to_string(s.modality);
        j["source_id"] = s.source_id;
        out << j.dump() << '\n';
    }
}

inline std::vector<PretrainSequence> read_sequences(std::istream& in) {
    std::vector<PretrainSequence> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("text") || !j["text"].is_string()) {
            throw Error(ErrorCode::format_error, "bad sequence line " + std::to_string(lineno));
        }
        PretrainSequence s;
        s.text = j["text"].get<std::string>();
        s.modality = j.value("modality", std::string("unimodal")) == "bimodal" ? Modality::bimodal : Modality::unimodal;
        s.source_id = j.value("source_id", std::string());
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace cotext
