#pragma once

// Reversible rewriting of code glyphs that general-text subword vocabularies
// lack ("{", "[", "$", ...) into space-padded marker words.

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cotext/error.hpp"

namespace cotext {

namespace detail {

inline std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

inline bool is_identifier_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

} // namespace detail

struct CodecEntry {
    std::string glyph;  // exactly one UTF-8 code point
    std::string marker; // [A-Z_]+
};

class CodecTable {
public:
    CodecTable(std::vector<CodecEntry> entries, int version = 1)
        : entries_(std::move(entries)), version_(version) {
        check();
    }

    static CodecTable default_table() {
        return CodecTable({
            {"{", "OBRACE"},     {"}", "CBRACE"},     {"[", "OBRACK"},    {"]", "CBRACK"},
            {"$", "DOLLARTOK"},  {"^", "CARETTOK"},   {"~", "TILDETOK"},  {"`", "BTICKTOK"},
            {"\\", "BSLASHTOK"}, {"|", "VBARTOK"},    {"<", "LANGLETOK"}, {">", "RANGLETOK"},
        });
    }

    const std::vector<CodecEntry>& entries() const { return entries_; }
    int version() const { return version_; }

    /// Index of the glyph starting at text[pos], or -1.
    int glyph_at(std::string_view text, std::size_t pos) const {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (text.compare(pos, entries_[i].glyph.size(), entries_[i].glyph) == 0) {
                return static_cast<int>(i);
            }
        }
        return -1;
    }

    /// Index of the marker starting at text[pos], or -1.
    int marker_at(std::string_view text, std::size_t pos) const {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (text.compare(pos, entries_[i].marker.size(), entries_[i].marker) == 0) {
                return static_cast<int>(i);
            }
        }
        return -1;
    }

    std::string serialize() const {
        std::string out = "#codec-v" + std::to_string(version_) + "\n";
        for (const auto& e : entries_) {
            out += e.glyph + "\t" + e.marker + "\n";
        }
        return out;
    }

    static CodecTable parse(std::string_view text) {
        std::istringstream in{std::string(text)};
        std::string line;
        if (!std::getline(in, line) || line.rfind("#codec-v", 0) != 0) {
            throw Error(ErrorCode::format_error, "codec table must start with #codec-v<version>");
        }
        int version = 0;
        try {
            version = std::stoi(line.substr(8));
        } catch (const std::exception&) {
            throw Error(ErrorCode::format_error, "bad codec version line: " + line);
        }
        std::vector<CodecEntry> entries;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const std::size_t glen = detail::utf8_length(static_cast<unsigned char>(line[0]));
            if (line.size() < glen + 2 || line[glen] != '\t') {
                throw Error(ErrorCode::format_error, "bad codec line: " + line);
            }
            entries.push_back({line.substr(0, glen), line.substr(glen + 1)});
        }
        return CodecTable(std::move(entries), version);
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path);
        out << serialize();
    }

    static CodecTable load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::io_failure, "cannot read " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

private:
    void check() const {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& e = entries_[i];
            if (e.glyph.empty() || detail::utf8_length(static_cast<unsigned char>(e.glyph[0])) != e.glyph.size()) {
                throw Error(ErrorCode::invalid_config, "glyph must be a single character");
            }
            if (e.marker.empty()) throw Error(ErrorCode::invalid_config, "empty marker");
            for (char c : e.marker) {
                if (!((c >= 'A' && c <= 'Z') || c == '_')) {
                    throw Error(ErrorCode::invalid_config, "marker must be [A-Z_]+: " + e.marker);
                }
            }
            for (std::size_t j = 0; j < entries_.size(); ++j) {
                if (e.marker.find(entries_[j].glyph) != std::string::npos) {
                    throw Error(ErrorCode::invalid_config, "marker contains a glyph: " + e.marker);
                }
                if (i == j) continue;
                if (e.glyph == entries_[j].glyph) throw Error(ErrorCode::invalid_config, "duplicate glyph " + e.glyph);
                if (entries_[j].marker.find(e.marker) != std::string::npos) {
                    throw Error(ErrorCode::invalid_config, "marker " + e.marker + " is inside " + entries_[j].marker);
                }
            }
        }
    }

    std::vector<CodecEntry> entries_;
    int version_;
};

/// True iff no marker word occurs in `text` as a whole identifier-like word
/// (not glued to letters, digits or '_'). Only such text round-trips exactly.
inline bool validate(std::string_view text, const CodecTable& table) {
    for (const auto& e : table.entries()) {
        for (std::size_t pos = text.find(e.marker); pos != std::string_view::npos;
             pos = text.find(e.marker, pos + 1)) {
            const bool left_free = pos == 0 || !detail::is_identifier_char(text[pos - 1]);
            const std::size_t end = pos + e.marker.size();
            const bool right_free = end == text.size() || !detail::is_identifier_char(text[end]);
            if (left_free && right_free) return false;
        }
    }
    return true;
}

/// Replaces every glyph by " MARKER ". Throws RESERVED_MARKER_PRESENT on text
/// that fails validate().
inline std::string normalize(std::string_view text, const CodecTable& table) {
    if (!validate(text, table)) {
        throw Error(ErrorCode::reserved_marker_present, "text contains a codec marker word");
    }
    std::string out;
    out.reserve(text.size() + text.size() / 4);
    std::size_t pos = 0;
    while (pos < text.size()) {
        const int g = table.glyph_at(text, pos);
        if (g >= 0) {
            const auto& e = table.entries()[static_cast<std::size_t>(g)];
            out += ' ';
            out += e.marker;
            out += ' ';
            pos += e.glyph.size();
        } else {
            out += text[pos++];
        }
    }
    return out;
}

/// Inverse of normalize: a marker standing alone between spaces (or a string
/// edge) becomes its glyph, and the single padding space on each side is dropped.
inline std::string denormalize(std::string_view text, const CodecTable& table) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        const bool at_start = pos == 0;
        const std::size_t word = (text[pos] == ' ') ? pos + 1 : pos;
        if ((at_start || text[pos] == ' ') && word < text.size()) {
            const int m = table.marker_at(text, word);
            if (m >= 0) {
                const auto& e = table.entries()[static_cast<std::size_t>(m)];
                const std::size_t end = word + e.marker.size();
                if (end == text.size() || text[end] == ' ') {
                    out += e.glyph;
                    pos = (end == text.size()) ? end : end + 1;
                    continue;
                }
            }
        }
        out += text[pos++];
    }
    return out;
}

} // namespace cotext
