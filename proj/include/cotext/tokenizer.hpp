#pragma once

// Byte-pair-encoding subword vocabulary over codec-normalized text.
//
// Id layout: 0 <pad>, 1 </s>, 2 <unk>, 3..258 the 256 single bytes, then the
// learned merges in merge order, then the 100 sentinels <extra_id_0..99> at
// the top of the range. A leading space is part of the word piece that
// follows it and is displayed as U+2581 in the vocabulary file.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cotext/error.hpp"
#include "cotext/rng.hpp"

namespace cotext {

inline constexpr int kPadId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kByteBase = 3;
inline constexpr int kFirstMergeId = kByteBase + 256;
inline constexpr int kNumSentinels = 100;
inline constexpr int kMinVocabSize = kFirstMergeId + kNumSentinels;
inline constexpr int kMinTrainTarget = kFirstMergeId;

inline std::string sentinel_text(int k) { return "<extra_id_" + std::to_string(k) + ">"; }

namespace detail {

inline std::uint64_t pair_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

inline bool is_space_byte(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

inline bool is_word_byte(char c) {
    const auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

/// Splits sentinel-free text into pre-tokenization chunks: whitespace runs,
/// and word or punctuation runs that carry at most one leading space.
inline std::vector<std::string_view> chunk(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        if (is_space_byte(text[i])) {
            std::size_t j = i;
            while (j < n && is_space_byte(text[j])) ++j;
            std::size_t end = j;
            if (j < n && text[j - 1] == ' ') end = j - 1; // the last space leads the next word
            if (end > i) out.push_back(text.substr(i, end - i));
            i = end;
            if (i < j) {
                // single leading space attached to the following run
                std::size_t k = j;
                const bool word = is_word_byte(text[k]);
                while (k < n && !is_space_byte(text[k]) && is_word_byte(text[k]) == word) ++k;
                out.push_back(text.substr(i, k - i));
                i = k;
            }
        } else {
            std::size_t k = i;
            const bool word = is_word_byte(text[k]);
            while (k < n && !is_space_byte(text[k]) && is_word_byte(text[k]) == word) ++k;
            out.push_back(text.substr(i, k - i));
            i = k;
        }
    }
    return out;
}

/// If a sentinel literal starts at text[pos], returns (index, length).
inline std::optional<std::pair<int, std::size_t>> sentinel_at(std::string_view text, std::size_t pos) {
    static constexpr std::string_view head = "<extra_id_";
    if (text.compare(pos, head.size(), head) != 0) return std::nullopt;
    std::size_t p = pos + head.size();
    const std::size_t digits_start = p;
    int value = 0;
    while (p < text.size() && text[p] >= '0' && text[p] <= '9' && p - digits_start < 3) {
        value = value * 10 + (text[p] - '0');
        ++p;
    }
    const std::size_t ndigits = p - digits_start;
    if (ndigits == 0 || p >= text.size() || text[p] != '>') return std::nullopt;
    if (ndigits > 1 && text[digits_start] == '0') return std::nullopt;
    if (value >= kNumSentinels) return std::nullopt;
    return std::make_pair(value, p + 1 - pos);
}

inline std::string escape_piece(std::string_view bytes) {
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out;
    for (char c : bytes) {
        const auto u = static_cast<unsigned char>(c);
        if (c == ' ') {
            out += "\xE2\x96\x81";
        } else if (c == '\\') {
            out += "\\\\";
        } else if (u > 0x20 && u < 0x7F) {
            out += c;
        } else {
            out += "\\x";
            out += hex[u >> 4];
            out += hex[u & 0xF];
        }
    }
    return out;
}

inline std::string unescape_piece(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size();) {
        if (s.compare(i, 3, "\xE2\x96\x81") == 0) {
            out += ' ';
            i += 3;
        } else if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == '\\') {
            out += '\\';
            i += 2;
        } else if (s[i] == '\\' && i + 3 < s.size() && s[i + 1] == 'x') {
            out += static_cast<char>(std::stoi(std::string(s.substr(i + 2, 2)), nullptr, 16));
            i += 4;
        } else {
            out += s[i++];
        }
    }
    return out;
}

} // namespace detail

class Vocabulary {
public:
    /// Byte alphabet plus the given merges; sentinels are appended on top.
    explicit Vocabulary(std::vector<std::pair<int, int>> merges = {}) : merges_(std::move(merges)) {
        pieces_ = {"<pad>", "</s>", "<unk>"};
        for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
        for (std::size_t m = 0; m < merges_.size(); ++m) {
            const auto [l, r] = merges_[m];
            const int id = kFirstMergeId + static_cast<int>(m);
            if (l < kByteBase || r < kByteBase || l >= id || r >= id) {
                throw Error(ErrorCode::format_error, "merge refers to an invalid id");
            }
            pieces_.push_back(pieces_[static_cast<std::size_t>(l)] + pieces_[static_cast<std::size_t>(r)]);
            merge_ids_[detail::pair_key(l, r)] = id;
        }
        for (int k = 0; k < kNumSentinels; ++k) pieces_.push_back(sentinel_text(k));
    }

    int size() const { return static_cast<int>(pieces_.size()); }
    int sentinel_base() const { return size() - kNumSentinels; }
    /// Reserved, byte and merge pieces; the trained inventory without sentinels.
    int base_size() const { return sentinel_base(); }
    int sentinel_id(int k) const { return sentinel_base() + k; }
    bool is_sentinel(int id) const { return id >= sentinel_base() && id < size(); }
    int num_merges() const { return static_cast<int>(merges_.size()); }
    const std::vector<std::pair<int, int>>& merges() const { return merges_; }
    const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }

    /// Id of a piece's exact byte string, if the vocabulary holds it.
    std::optional<int> find(std::string_view bytes) const {
        for (int id = kByteBase; id < sentinel_base(); ++id) {
            if (pieces_[static_cast<std::size_t>(id)] == bytes) return id;
        }
        return std::nullopt;
    }

    std::vector<int> encode(std::string_view text) const {
        std::vector<int> out;
        std::size_t start = 0;
        std::size_t pos = 0;
        while (pos < text.size()) {
            if (text[pos] == '<') {
                if (auto s = detail::sentinel_at(text, pos)) {
                    encode_plain(text.substr(start, pos - start), out);
                    out.push_back(sentinel_id(s->first));
                    pos += s->second;
                    start = pos;
                    continue;
                }
            }
            ++pos;
        }
        encode_plain(text.substr(start), out);
        return out;
    }

    std::string decode(std::span<const int> ids) const {
        std::string out;
        for (int id : ids) {
            if (id < 0 || id >= size()) {
                throw Error(ErrorCode::id_out_of_range, "token id " + std::to_string(id));
            }
            if (id == kPadId || id == kEosId) continue;
            out += pieces_[static_cast<std::size_t>(id)];
        }
        return out;
    }

    std::string serialize() const {
        std::string out = "#vocab-v1 size=" + std::to_string(size()) + "\n";
        for (int id = 0; id < size(); ++id) {
            if (id >= kByteBase && id < kFirstMergeId) {
                out += detail::escape_piece(pieces_[static_cast<std::size_t>(id)]);
            } else if (id >= kFirstMergeId && id < sentinel_base()) {
                const auto [l, r] = merges_[static_cast<std::size_t>(id - kFirstMergeId)];
                out += detail::escape_piece(pieces_[static_cast<std::size_t>(id)]) + " " + std::to_string(l) + " " +
                       std::to_string(r);
            } else {
                out += pieces_[static_cast<std::size_t>(id)];
            }
            out += '\n';
        }
        return out;
    }

    static Vocabulary parse(std::string_view text) {
        std::istringstream in{std::string(text)};
        std::string line;
        if (!std::getline(in, line) || line.rfind("#vocab-v1 size=", 0) != 0) {
            throw Error(ErrorCode::format_error, "vocabulary must start with '#vocab-v1 size=<n>'");
        }
        const int size = std::stoi(line.substr(15));
        if (size < kMinVocabSize) throw Error(ErrorCode::format_error, "vocabulary size too small");
        std::vector<std::string> lines;
        while (std::getline(in, line)) lines.push_back(line);
        if (static_cast<int>(lines.size()) != size) {
            throw Error(ErrorCode::format_error, "vocabulary line count does not match header");
        }
        std::vector<std::pair<int, int>> merges;
        for (int id = kFirstMergeId; id < size - kNumSentinels; ++id) {
            std::istringstream fields(lines[static_cast<std::size_t>(id)]);
            std::string piece;
            int l = -1, r = -1;
            if (!(fields >> piece >> l >> r)) throw Error(ErrorCode::format_error, "bad merge line for id " + std::to_string(id));
            merges.emplace_back(l, r);
        }
        Vocabulary v(std::move(merges));
        for (int id = kFirstMergeId; id < v.sentinel_base(); ++id) {
            std::istringstream fields(lines[static_cast<std::size_t>(id)]);
            std::string piece;
            fields >> piece;
            if (detail::unescape_piece(piece) != v.piece(id)) {
                throw Error(ErrorCode::format_error, "merge piece disagrees with its parts at id " + std::to_string(id));
            }
        }
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path);
        out << serialize();
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::io_failure, "cannot read " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    std::uint64_t fingerprint() const { return fnv1a(serialize()); }

private:
    void encode_plain(std::string_view text, std::vector<int>& out) const {
        std::vector<int> symbols;
        for (auto piece : detail::chunk(text)) {
            symbols.clear();
            for (char c : piece) symbols.push_back(kByteBase + static_cast<unsigned char>(c));
            apply_merges(symbols);
            out.insert(out.end(), symbols.begin(), symbols.end());
        }
    }

    // Repeatedly merges the adjacent pair with the earliest merge rank.
    void apply_merges(std::vector<int>& symbols) const {
        while (symbols.size() > 1) {
            int best = -1;
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
                auto it = merge_ids_.find(detail::pair_key(symbols[i], symbols[i + 1]));
                if (it != merge_ids_.end() && (best < 0 || it->second < best)) best = it->second;
            }
            if (best < 0) return;
            const auto [l, r] = merges_[static_cast<std::size_t>(best - kFirstMergeId)];
            std::size_t w = 0;
            for (std::size_t i = 0; i < symbols.size(); ++i) {
                if (i + 1 < symbols.size() && symbols[i] == l && symbols[i + 1] == r) {
                    symbols[w++] = best;
                    ++i;
                } else {
                    symbols[w++] = symbols[i];
                }
            }
            symbols.resize(w);
        }
    }

    std::vector<std::pair<int, int>> merges_;
    std::vector<std::string> pieces_;
    std::unordered_map<std::uint64_t, int> merge_ids_;
};

/// Greedy pair merging until base_size() reaches target_size (reserved and
/// byte ids included; the 100 sentinels are added on top) or no pair occurs
/// at least twice. Ties on
/// count go to the lexicographically smallest (left, right) byte strings.
inline Vocabulary train_vocab(std::span<const std::string> corpus, int target_size) {
    if (target_size < kMinTrainTarget) {
        throw Error(ErrorCode::vocab_too_small,
                    "target size " + std::to_string(target_size) + " < minimum " + std::to_string(kMinTrainTarget));
    }
    std::unordered_map<std::string, std::int64_t> chunk_counts;
    std::vector<std::string> chunk_order; // first-seen order keeps training deterministic
    for (const auto& text : corpus) {
        std::size_t start = 0;
        auto add_plain = [&](std::string_view plain) {
            for (auto c : detail::chunk(plain)) {
                auto [it, inserted] = chunk_counts.try_emplace(std::string(c), 0);
                if (inserted) chunk_order.push_back(it->first);
                ++it->second;
            }
        };
        for (std::size_t pos = 0; pos < text.size();) {
            if (auto s = detail::sentinel_at(text, pos)) {
                add_plain(std::string_view(text).substr(start, pos - start));
                pos += s->second;
                start = pos;
            } else {
                ++pos;
            }
        }
        add_plain(std::string_view(text).substr(start));
    }
    if (chunk_order.empty()) throw Error(ErrorCode::corpus_empty, "no text to train on");

    std::vector<std::string> pieces;
    pieces.reserve(static_cast<std::size_t>(target_size));
    for (int i = 0; i < kByteBase; ++i) pieces.emplace_back();
    for (int b = 0; b < 256; ++b) pieces.emplace_back(1, static_cast<char>(b));

    std::vector<std::vector<int>> words;
    std::vector<std::int64_t> freq;
    for (const auto& c : chunk_order) {
        std::vector<int> sym;
        for (char ch : c) sym.push_back(kByteBase + static_cast<unsigned char>(ch));
        words.push_back(std::move(sym));
        freq.push_back(chunk_counts[c]);
    }

    std::unordered_map<std::uint64_t, std::int64_t> pair_count;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> pair_words;
    for (std::size_t w = 0; w < words.size(); ++w) {
        const auto& sym = words[w];
        for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
            const auto key = detail::pair_key(sym[i], sym[i + 1]);
            pair_count[key] += freq[w];
            auto& ws = pair_words[key];
            if (ws.empty() || ws.back() != w) ws.push_back(static_cast<std::uint32_t>(w));
        }
    }

    struct Entry {
        std::int64_t count;
        int left;
        int right;
    };
    auto better = [&pieces](const Entry& a, const Entry& b) {
        if (a.count != b.count) return a.count > b.count;
        const auto& al = pieces[static_cast<std::size_t>(a.left)];
        const auto& bl = pieces[static_cast<std::size_t>(b.left)];
        if (al != bl) return al < bl;
        const auto& ar = pieces[static_cast<std::size_t>(a.right)];
        const auto& br = pieces[static_cast<std::size_t>(b.right)];
        if (ar != br) return ar < br;
        // distinct ids can spell the same bytes
        return a.left != b.left ? a.left < b.left : a.right < b.right;
    };
    std::set<Entry, decltype(better)> queue(better);
    for (const auto& [key, count] : pair_count) {
        queue.insert({count, static_cast<int>(key >> 32), static_cast<int>(key & 0xFFFFFFFFu)});
    }

    const int max_merges = target_size - kFirstMergeId;
    std::vector<std::pair<int, int>> merges;
    std::unordered_map<std::uint64_t, std::int64_t> delta;
    while (static_cast<int>(merges.size()) < max_merges && !queue.empty()) {
        const Entry top = *queue.begin();
        if (top.count < 2) break;
        queue.erase(queue.begin());
        const int new_id = kFirstMergeId + static_cast<int>(merges.size());
        merges.emplace_back(top.left, top.right);
        pieces.push_back(pieces[static_cast<std::size_t>(top.left)] + pieces[static_cast<std::size_t>(top.right)]);
        const auto top_key = detail::pair_key(top.left, top.right);

        delta.clear();
        const auto affected = std::move(pair_words[top_key]);
        pair_words.erase(top_key);
        for (auto w : affected) {
            auto& sym = words[w];
            bool present = false;
            for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
                if (sym[i] == top.left && sym[i + 1] == top.right) {
                    present = true;
                    break;
                }
            }
            if (!present) continue;
            const auto f = freq[w];
            for (std::size_t i = 0; i + 1 < sym.size(); ++i) delta[detail::pair_key(sym[i], sym[i + 1])] -= f;
            std::size_t out = 0;
            for (std::size_t i = 0; i < sym.size(); ++i) {
                if (i + 1 < sym.size() && sym[i] == top.left && sym[i + 1] == top.right) {
                    sym[out++] = new_id;
                    ++i;
                } else {
                    sym[out++] = sym[i];
                }
            }
            sym.resize(out);
            for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
                const auto key = detail::pair_key(sym[i], sym[i + 1]);
                delta[key] += f;
                if (sym[i] == new_id || sym[i + 1] == new_id) {
                    auto& ws = pair_words[key];
                    if (ws.empty() || ws.back() != w) ws.push_back(w);
                }
            }
        }
        pair_count.erase(top_key);
        delta.erase(top_key);
        // apply in key order so set mutations do not depend on hash iteration order
        std::vector<std::pair<std::uint64_t, std::int64_t>> changes(delta.begin(), delta.end());
        std::sort(changes.begin(), changes.end());
        for (const auto& [key, d] : changes) {
            if (d == 0) continue;
            const int l = static_cast<int>(key >> 32);
            const int r = static_cast<int>(key & 0xFFFFFFFFu);
            auto& c = pair_count[key];
            if (c > 0) queue.erase({c, l, r});
            c += d;
            if (c > 0) {
                queue.insert({c, l, r});
            } else {
                pair_count.erase(key);
            }
        }
    }
    return Vocabulary(std::move(merges));
}

} // namespace cotext
