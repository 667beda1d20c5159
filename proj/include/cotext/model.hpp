#pragma once

// Small encoder-decoder transformer: shared token embedding, pre-norm blocks
// with RMS normalization, relative position bias (one bucketed table for the
// encoder and one for the decoder, each shared by all layers), GELU
// feed-forward, and an untied output projection. Double precision throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cotext/autodiff.hpp"
#include "cotext/error.hpp"
#include "cotext/rng.hpp"
#include "cotext/tokenizer.hpp"

namespace cotext {

using ad::Matrix;

struct ModelConfig {
    int num_layers = 2;
    int d_model = 32;
    int num_heads = 4;
    int d_ff = 64;
    int vocab_size = kMinVocabSize;
    int relative_buckets = 32;
    int relative_max_distance = 128;
    int max_input_len = 64;
    int max_target_len = 64;
    double dropout = 0.1;

    void check() const {
        if (num_layers < 1) throw Error(ErrorCode::invalid_config, "num_layers must be >= 1");
        if (d_model < 1 || num_heads < 1 || d_model % num_heads != 0) {
            throw Error(ErrorCode::invalid_config, "d_model must be a positive multiple of num_heads");
        }
        if (d_ff < 1 || vocab_size < 2 || relative_buckets < 2 || relative_max_distance < 1) {
            throw Error(ErrorCode::invalid_config, "model sizes must be positive");
        }
        if (max_input_len < 1 || max_target_len < 1) throw Error(ErrorCode::invalid_config, "lengths must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::invalid_config, "dropout must be in [0,1)");
    }

    std::map<std::string, std::string> to_map() const {
        std::ostringstream dr;
        dr.precision(17);
        dr << dropout;
        return {{"num_layers", std::to_string(num_layers)},
                {"d_model", std::to_string(d_model)},
                {"num_heads", std::to_string(num_heads)},
                {"d_ff", std::to_string(d_ff)},
                {"vocab_size", std::to_string(vocab_size)},
                {"relative_buckets", std::to_string(relative_buckets)},
                {"relative_max_distance", std::to_string(relative_max_distance)},
                {"max_input_len", std::to_string(max_input_len)},
                {"max_target_len", std::to_string(max_target_len)},
                {"dropout", dr.str()}};
    }

    static ModelConfig from_map(const std::map<std::string, std::string>& m) {
        ModelConfig c;
        auto get = [&](const char* key, auto& field) {
            auto it = m.find(key);
            if (it == m.end()) throw Error(ErrorCode::format_error, std::string("missing model key ") + key);
            std::istringstream in(it->second);
            in >> field;
            if (!in) throw Error(ErrorCode::format_error, std::string("bad model value for ") + key);
        };
        get("num_layers", c.num_layers);
        get("d_model", c.d_model);
        get("num_heads", c.num_heads);
        get("d_ff", c.d_ff);
        get("vocab_size", c.vocab_size);
        get("relative_buckets", c.relative_buckets);
        get("relative_max_distance", c.relative_max_distance);
        get("max_input_len", c.max_input_len);
        get("max_target_len", c.max_target_len);
        get("dropout", c.dropout);
        c.check();
        return c;
    }

    bool operator==(const ModelConfig&) const = default;
};

struct NamedArray {
    std::string name;
    int rank = 2; // rank-1 arrays are stored as a single row
    Matrix value;
};

struct EncoderLayerIds {
    std::size_t attn_norm, q, k, v, o, ff_norm, wi, wo;
};

struct DecoderLayerIds {
    std::size_t self_norm, self_q, self_k, self_v, self_o;
    std::size_t cross_norm, cross_q, cross_k, cross_v, cross_o;
    std::size_t ff_norm, wi, wo;
};

/// Named parameter arrays in a fixed order derived from the config.
class Parameters {
public:
    Parameters() = default;

    explicit Parameters(const ModelConfig& cfg) {
        cfg.check();
        const auto d = static_cast<std::size_t>(cfg.d_model);
        const auto ff = static_cast<std::size_t>(cfg.d_ff);
        const auto v = static_cast<std::size_t>(cfg.vocab_size);
        const auto nb = static_cast<std::size_t>(cfg.relative_buckets);
        const auto h = static_cast<std::size_t>(cfg.num_heads);
        embedding = add("shared.embedding", 2, v, d);
        encoder_bias = add("encoder.relative_bias", 2, nb, h);
        decoder_bias = add("decoder.relative_bias", 2, nb, h);
        for (int l = 0; l < cfg.num_layers; ++l) {
            const std::string p = "encoder.layer." + std::to_string(l) + ".";
            encoder.push_back({add(p + "attn_norm", 1, 1, d), add(p + "attn.q", 2, d, d), add(p + "attn.k", 2, d, d),
                               add(p + "attn.v", 2, d, d), add(p + "attn.o", 2, d, d), add(p + "ff_norm", 1, 1, d),
                               add(p + "ff.wi", 2, d, ff), add(p + "ff.wo", 2, ff, d)});
        }
        encoder_final_norm = add("encoder.final_norm", 1, 1, d);
        for (int l = 0; l < cfg.num_layers; ++l) {
            const std::string p = "decoder.layer." + std::to_string(l) + ".";
            decoder.push_back({add(p + "self_norm", 1, 1, d), add(p + "self.q", 2, d, d), add(p + "self.k", 2, d, d),
                               add(p + "self.v", 2, d, d), add(p + "self.o", 2, d, d), add(p + "cross_norm", 1, 1, d),
                               add(p + "cross.q", 2, d, d), add(p + "cross.k", 2, d, d), add(p + "cross.v", 2, d, d),
                               add(p + "cross.o", 2, d, d), add(p + "ff_norm", 1, 1, d), add(p + "ff.wi", 2, d, ff),
                               add(p + "ff.wo", 2, ff, d)});
        }
        decoder_final_norm = add("decoder.final_norm", 1, 1, d);
        lm_head = add("lm_head", 2, d, v);
    }

    std::vector<NamedArray> arrays;
    std::size_t embedding = 0, encoder_bias = 0, decoder_bias = 0;
    std::size_t encoder_final_norm = 0, decoder_final_norm = 0, lm_head = 0;
    std::vector<EncoderLayerIds> encoder;
    std::vector<DecoderLayerIds> decoder;

    std::size_t size() const { return arrays.size(); }
    const Matrix& operator[](std::size_t i) const { return arrays[i].value; }
    Matrix& operator[](std::size_t i) { return arrays[i].value; }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < arrays.size(); ++i) {
            if (arrays[i].name == name) return i;
        }
        throw Error(ErrorCode::format_error, "no parameter named " + std::string(name));
    }

    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (const auto& a : arrays) n += a.value.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& a : arrays) {
            for (double x : a.value.data) {
                if (!std::isfinite(x)) return false;
            }
        }
        return true;
    }

private:
    std::size_t add(std::string name, int rank, std::size_t rows, std::size_t cols) {
        arrays.push_back({std::move(name), rank, Matrix(rows, cols)});
        return arrays.size() - 1;
    }
};

inline Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    Parameters p(cfg);
    Rng rng(seed);
    const double d = cfg.d_model;
    for (auto& a : p.arrays) {
        const bool is_norm = a.rank == 1;
        double stddev = 1.0 / std::sqrt(static_cast<double>(a.value.rows));
        if (a.name == "shared.embedding") stddev = 1.0;
        if (a.name.find("relative_bias") != std::string::npos) stddev = 0.1;
        if (a.name == "lm_head") stddev = 1.0 / std::sqrt(d);
        for (double& x : a.value.data) x = is_norm ? 1.0 : stddev * rng.normal();
    }
    return p;
}

/// Bucket of a (memory - query) offset, logarithmic beyond half the exact range.
inline int relative_position_bucket(int relative_position, bool bidirectional, int num_buckets, int max_distance) {
    int ret = 0;
    int n = -relative_position;
    if (bidirectional) {
        num_buckets /= 2;
        if (n < 0) ret += num_buckets;
        n = std::abs(n);
    } else {
        n = std::max(n, 0);
    }
    const int max_exact = num_buckets / 2;
    if (n < max_exact) return ret + n;
    const int large = max_exact + static_cast<int>(std::log(static_cast<double>(n) / max_exact) /
                                                   std::log(static_cast<double>(max_distance) / max_exact) *
                                                   (num_buckets - max_exact));
    return ret + std::min(large, num_buckets - 1);
}

inline std::vector<int> bucket_matrix(std::size_t q_len, std::size_t k_len, bool bidirectional, const ModelConfig& cfg) {
    std::vector<int> b(q_len * k_len);
    for (std::size_t i = 0; i < q_len; ++i) {
        for (std::size_t j = 0; j < k_len; ++j) {
            b[i * k_len + j] = relative_position_bucket(static_cast<int>(j) - static_cast<int>(i), bidirectional,
                                                        cfg.relative_buckets, cfg.relative_max_distance);
        }
    }
    return b;
}

/// Tape handles for every parameter array, in Parameters order.
struct ParamVars {
    std::vector<ad::Var> vars;
    ad::Var operator[](std::size_t i) const { return vars[i]; }
};

inline ParamVars bind_parameters(ad::Tape& tape, const Parameters& params) {
    ParamVars pv;
    pv.vars.reserve(params.size());
    for (const auto& a : params.arrays) pv.vars.push_back(tape.input(a.value));
    return pv;
}

namespace detail {

struct AttentionIds {
    std::size_t q, k, v, o;
};

inline ad::Var attention(ad::Tape& t, const ParamVars& pv, const AttentionIds& ids, ad::Var xq, ad::Var xkv,
                         std::span<const std::uint8_t> allowed, const std::vector<int>* buckets, ad::Var bias_table,
                         const ModelConfig& cfg) {
    const auto heads = static_cast<std::size_t>(cfg.num_heads);
    const auto dh = static_cast<std::size_t>(cfg.d_model / cfg.num_heads);
    const ad::Var q = t.scale(t.matmul(xq, pv[ids.q]), 1.0 / std::sqrt(static_cast<double>(dh)));
    const ad::Var k = t.matmul(xkv, pv[ids.k]);
    const ad::Var v = t.matmul(xkv, pv[ids.v]);
    const std::size_t lq = t.value(xq).rows;
    const std::size_t lk = t.value(xkv).rows;
    std::vector<ad::Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        ad::Var s = t.matmul_bt(t.slice_cols(q, h * dh, dh), t.slice_cols(k, h * dh, dh));
        if (buckets) s = t.add(s, t.gather_bias(bias_table, *buckets, h, lq, lk));
        const ad::Var p = t.softmax_rows(s, allowed);
        outs.push_back(t.matmul(p, t.slice_cols(v, h * dh, dh)));
    }
    return t.matmul(t.concat_cols(outs), pv[ids.o]);
}

inline ad::Var feed_forward(ad::Tape& t, const ParamVars& pv, std::size_t wi, std::size_t wo, ad::Var x) {
    return t.matmul(t.gelu(t.matmul(x, pv[wi])), pv[wo]);
}

inline ad::Var maybe_dropout(ad::Tape& t, ad::Var x, double rate, Rng* rng) {
    return rng ? t.dropout(x, rate, *rng) : x;
}

} // namespace detail

/// Encoder output [len, d_model]. enc_mask marks real (1) versus padding (0) positions.
inline ad::Var build_encoder(ad::Tape& t, const Parameters& params, const ParamVars& pv, const ModelConfig& cfg,
                             std::span<const int> ids, std::span<const std::uint8_t> enc_mask, Rng* dropout_rng) {
    const std::size_t n = ids.size();
    std::vector<std::uint8_t> allowed(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) allowed[i * n + j] = enc_mask[j];
    }
    const auto buckets = bucket_matrix(n, n, true, cfg);
    ad::Var x = detail::maybe_dropout(t, t.gather_rows(pv[params.embedding], ids), cfg.dropout, dropout_rng);
    for (const auto& L : params.encoder) {
        const ad::Var h = t.rms_norm(x, pv[L.attn_norm]);
        const ad::Var a = detail::attention(t, pv, {L.q, L.k, L.v, L.o}, h, h, allowed, &buckets,
                                            pv[params.encoder_bias], cfg);
        x = t.add(x, detail::maybe_dropout(t, a, cfg.dropout, dropout_rng));
        const ad::Var f = detail::feed_forward(t, pv, L.wi, L.wo, t.rms_norm(x, pv[L.ff_norm]));
        x = t.add(x, detail::maybe_dropout(t, f, cfg.dropout, dropout_rng));
    }
    return detail::maybe_dropout(t, t.rms_norm(x, pv[params.encoder_final_norm]), cfg.dropout, dropout_rng);
}

/// Decoder logits [dec_len, vocab_size] given encoder output `enc` on the same tape.
inline ad::Var build_decoder(ad::Tape& t, const Parameters& params, const ParamVars& pv, const ModelConfig& cfg,
                             ad::Var enc, std::span<const std::uint8_t> enc_mask, std::span<const int> dec_input,
                             Rng* dropout_rng) {
    const std::size_t m = dec_input.size();
    const std::size_t n = enc_mask.size();
    std::vector<std::uint8_t> causal(m * m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) causal[i * m + j] = j <= i ? 1 : 0;
    }
    std::vector<std::uint8_t> cross(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) cross[i * n + j] = enc_mask[j];
    }
    const auto buckets = bucket_matrix(m, m, false, cfg);
    ad::Var y = detail::maybe_dropout(t, t.gather_rows(pv[params.embedding], dec_input), cfg.dropout, dropout_rng);
    for (const auto& L : params.decoder) {
        ad::Var h = t.rms_norm(y, pv[L.self_norm]);
        const ad::Var s = detail::attention(t, pv, {L.self_q, L.self_k, L.self_v, L.self_o}, h, h, causal, &buckets,
                                            pv[params.decoder_bias], cfg);
        y = t.add(y, detail::maybe_dropout(t, s, cfg.dropout, dropout_rng));
        h = t.rms_norm(y, pv[L.cross_norm]);
        const ad::Var c = detail::attention(t, pv, {L.cross_q, L.cross_k, L.cross_v, L.cross_o}, h, enc, cross,
                                            nullptr, pv[params.decoder_bias], cfg);
        y = t.add(y, detail::maybe_dropout(t, c, cfg.dropout, dropout_rng));
        const ad::Var f = detail::feed_forward(t, pv, L.wi, L.wo, t.rms_norm(y, pv[L.ff_norm]));
        y = t.add(y, detail::maybe_dropout(t, f, cfg.dropout, dropout_rng));
    }
    y = detail::maybe_dropout(t, t.rms_norm(y, pv[params.decoder_final_norm]), cfg.dropout, dropout_rng);
    return t.matmul(y, pv[params.lm_head]);
}

/// One input/target pair; the target ends with EOS.
struct SeqPair {
    std::vector<int> input;
    std::vector<int> target;
};

/// Padded teacher-forcing batch. Decoder input is the target shifted right
/// behind a start token (the pad id).
struct Batch {
    std::size_t size = 0;
    std::size_t enc_len = 0;
    std::size_t dec_len = 0;
    std::vector<int> enc_ids;
    std::vector<std::uint8_t> enc_mask;
    std::vector<int> dec_input;
    std::vector<int> dec_target;
    std::vector<std::uint8_t> loss_mask;

    std::span<const int> enc_row(std::size_t b) const { return {enc_ids.data() + b * enc_len, enc_len}; }
    std::span<const std::uint8_t> mask_row(std::size_t b) const { return {enc_mask.data() + b * enc_len, enc_len}; }
    std::span<const int> dec_in_row(std::size_t b) const { return {dec_input.data() + b * dec_len, dec_len}; }
    std::span<const int> target_row(std::size_t b) const { return {dec_target.data() + b * dec_len, dec_len}; }
    std::span<const std::uint8_t> loss_row(std::size_t b) const { return {loss_mask.data() + b * dec_len, dec_len}; }

    std::size_t loss_tokens() const { return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), 1)); }

    static Batch from_pairs(std::span<const SeqPair> pairs) {
        Batch b;
        b.size = pairs.size();
        for (const auto& p : pairs) {
            b.enc_len = std::max(b.enc_len, p.input.size());
            b.dec_len = std::max(b.dec_len, p.target.size());
        }
        b.enc_len = std::max<std::size_t>(b.enc_len, 1);
        b.dec_len = std::max<std::size_t>(b.dec_len, 1);
        b.enc_ids.assign(b.size * b.enc_len, kPadId);
        b.enc_mask.assign(b.size * b.enc_len, 0);
        b.dec_input.assign(b.size * b.dec_len, kPadId);
        b.dec_target.assign(b.size * b.dec_len, kPadId);
        b.loss_mask.assign(b.size * b.dec_len, 0);
        for (std::size_t i = 0; i < b.size; ++i) {
            const auto& p = pairs[i];
            for (std::size_t j = 0; j < p.input.size(); ++j) {
                b.enc_ids[i * b.enc_len + j] = p.input[j];
                b.enc_mask[i * b.enc_len + j] = 1;
            }
            for (std::size_t j = 0; j < p.target.size(); ++j) {
                b.dec_target[i * b.dec_len + j] = p.target[j];
                b.loss_mask[i * b.dec_len + j] = 1;
                if (j + 1 < b.dec_len) b.dec_input[i * b.dec_len + j + 1] = p.target[j];
            }
        }
        return b;
    }
};

inline void check_batch(const ModelConfig& cfg, const Batch& batch) {
    const auto bad = [](const char* what) { throw Error(ErrorCode::shape_mismatch, what); };
    if (batch.size == 0) bad("empty batch");
    if (batch.enc_ids.size() != batch.size * batch.enc_len || batch.enc_mask.size() != batch.enc_ids.size()) {
        bad("encoder arrays do not match batch shape");
    }
    if (batch.dec_input.size() != batch.size * batch.dec_len || batch.dec_target.size() != batch.dec_input.size() ||
        batch.loss_mask.size() != batch.dec_input.size()) {
        bad("decoder arrays do not match batch shape");
    }
    if (batch.enc_len > static_cast<std::size_t>(cfg.max_input_len)) bad("encoder length exceeds max_input_len");
    if (batch.dec_len > static_cast<std::size_t>(cfg.max_target_len)) bad("decoder length exceeds max_target_len");
    for (int id : batch.enc_ids) {
        if (id < 0 || id >= cfg.vocab_size) bad("encoder id outside vocabulary");
    }
    for (int id : batch.dec_input) {
        if (id < 0 || id >= cfg.vocab_size) bad("decoder id outside vocabulary");
    }
}

/// Logits laid out [batch, dec_len, vocab].
struct Logits {
    std::size_t batch = 0;
    std::size_t len = 0;
    std::size_t vocab = 0;
    std::vector<double> data;

    const double* at(std::size_t b, std::size_t t) const { return data.data() + (b * len + t) * vocab; }
};

struct ForwardOptions {
    bool train = false;         // enables dropout
    std::uint64_t seed = 0;     // dropout stream; each example derives its own
    std::size_t workers = 1;    // example-parallel threads; results do not depend on it
};

namespace detail {

inline std::uint64_t example_seed(std::uint64_t seed, std::size_t b) {
    return seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(b) + 1));
}

template <class Fn>
void for_each_example(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::clamp<std::size_t>(workers, 1, n);
    if (workers == 1) {
        for (std::size_t b = 0; b < n; ++b) fn(b);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t b = w; b < n; b += workers) fn(b);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace detail

inline Logits forward(const Parameters& params, const ModelConfig& cfg, const Batch& batch,
                      const ForwardOptions& opts = {}) {
    check_batch(cfg, batch);
    Logits out{batch.size, batch.dec_len, static_cast<std::size_t>(cfg.vocab_size), {}};
    out.data.resize(out.batch * out.len * out.vocab);
    detail::for_each_example(batch.size, opts.workers, [&](std::size_t b) {
        ad::Tape t(false);
        const ParamVars pv = bind_parameters(t, params);
        Rng rng(detail::example_seed(opts.seed, b));
        Rng* drop = opts.train && cfg.dropout > 0.0 ? &rng : nullptr;
        const ad::Var enc = build_encoder(t, params, pv, cfg, batch.enc_row(b), batch.mask_row(b), drop);
        const ad::Var logits = build_decoder(t, params, pv, cfg, enc, batch.mask_row(b), batch.dec_in_row(b), drop);
        const Matrix& L = t.value(logits);
        std::copy(L.data.begin(), L.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * out.len * out.vocab));
    });
    return out;
}

/// Mean token cross-entropy over loss-unmasked positions.
inline double loss(const Logits& logits, const Batch& batch) {
    if (logits.batch != batch.size || logits.len != batch.dec_len) {
        throw Error(ErrorCode::shape_mismatch, "logits do not match batch");
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < batch.size; ++b) {
        for (std::size_t t = 0; t < batch.dec_len; ++t) {
            if (!batch.loss_row(b)[t]) continue;
            const double* row = logits.at(b, t);
            const double mx = *std::max_element(row, row + logits.vocab);
            double s = 0.0;
            for (std::size_t j = 0; j < logits.vocab; ++j) s += std::exp(row[j] - mx);
            total += mx + std::log(s) - row[static_cast<std::size_t>(batch.target_row(b)[t])];
            ++count;
        }
    }
    if (count == 0) throw Error(ErrorCode::all_masked, "no loss positions in batch");
    return total / static_cast<double>(count);
}

struct LossAndGradients {
    double loss = 0.0;
    std::size_t tokens = 0;
    std::vector<Matrix> grads; // same order and shapes as Parameters
};

inline LossAndGradients backward(const Parameters& params, const ModelConfig& cfg, const Batch& batch,
                                 const ForwardOptions& opts = {}) {
    check_batch(cfg, batch);
    const std::size_t tokens = batch.loss_tokens();
    if (tokens == 0) throw Error(ErrorCode::all_masked, "no loss positions in batch");

    std::vector<std::vector<Matrix>> per_example(batch.size);
    std::vector<double> per_loss(batch.size, 0.0);
    detail::for_each_example(batch.size, opts.workers, [&](std::size_t b) {
        if (std::count(batch.loss_row(b).begin(), batch.loss_row(b).end(), 1) == 0) return;
        ad::Tape t;
        const ParamVars pv = bind_parameters(t, params);
        Rng rng(detail::example_seed(opts.seed, b));
        Rng* drop = opts.train && cfg.dropout > 0.0 ? &rng : nullptr;
        const ad::Var enc = build_encoder(t, params, pv, cfg, batch.enc_row(b), batch.mask_row(b), drop);
        const ad::Var logits = build_decoder(t, params, pv, cfg, enc, batch.mask_row(b), batch.dec_in_row(b), drop);
        const ad::Var l = t.cross_entropy_sum(logits, batch.target_row(b), batch.loss_row(b));
        per_loss[b] = t.value(l).data[0];
        t.backward(l);
        auto& g = per_example[b];
        g.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) g.push_back(t.grad(pv[i]));
    });

    LossAndGradients out;
    out.tokens = tokens;
    out.grads.reserve(params.size());
    for (const auto& a : params.arrays) out.grads.emplace_back(a.value.rows, a.value.cols);
    const double inv = 1.0 / static_cast<double>(tokens);
    for (std::size_t b = 0; b < batch.size; ++b) {
        out.loss += per_loss[b];
        for (std::size_t i = 0; i < per_example[b].size(); ++i) {
            const Matrix& g = per_example[b][i];
            if (g.empty()) continue;
            for (std::size_t k = 0; k < g.size(); ++k) out.grads[i].data[k] += g.data[k];
        }
    }
    out.loss *= inv;
    for (auto& g : out.grads) {
        for (double& x : g.data) x *= inv;
    }
    return out;
}

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    double max_relative_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double epsilon = 1e-4;

    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_relative_error);
        return w;
    }
};

/// Relative error used by the gradient check. Differences below `floor` in
/// both magnitudes are compared on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Random two-example batch with encoder padding and a short second target.
inline Batch grad_check_batch(const ModelConfig& cfg, Rng& rng) {
    std::vector<SeqPair> pairs(2);
    const int lo = kByteBase;
    const int hi = cfg.vocab_size - 1;
    const std::size_t enc_len = std::min<std::size_t>(6, static_cast<std::size_t>(cfg.max_input_len));
    const std::size_t dec_len = std::min<std::size_t>(5, static_cast<std::size_t>(cfg.max_target_len));
    for (std::size_t b = 0; b < 2; ++b) {
        const std::size_t el = b == 0 ? enc_len : std::max<std::size_t>(1, enc_len - 2);
        const std::size_t dl = b == 0 ? dec_len : std::max<std::size_t>(1, dec_len - 2);
        for (std::size_t i = 0; i < el; ++i) pairs[b].input.push_back(static_cast<int>(rng.between(lo, hi)));
        for (std::size_t i = 0; i + 1 < dl; ++i) pairs[b].target.push_back(static_cast<int>(rng.between(lo, hi)));
        pairs[b].target.push_back(kEosId);
    }
    return Batch::from_pairs(pairs);
}

/// Central finite differences on up to `samples` coordinates of every array.
inline GradCheckReport grad_check(ModelConfig cfg, std::uint64_t seed, std::size_t samples = 50, double eps = 1e-4) {
    cfg.check();
    cfg.dropout = 0.0;
    Parameters params = init_parameters(cfg, seed);
    Rng rng(seed ^ 0x5DEECE66DULL);
    const Batch batch = grad_check_batch(cfg, rng);
    const auto analytic = backward(params, cfg, batch);

    GradCheckReport report;
    report.epsilon = eps;
    for (std::size_t i = 0; i < params.size(); ++i) {
        GradCheckEntry e{params.arrays[i].name, 0, 0.0};
        Matrix& p = params[i];
        const std::size_t n = p.size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), 0);
        rng.shuffle(coords.begin(), coords.end());
        coords.resize(std::min(samples, n));
        for (std::size_t c : coords) {
            const double orig = p.data[c];
            p.data[c] = orig + eps;
            const double up = loss(forward(params, cfg, batch), batch);
            p.data[c] = orig - eps;
            const double down = loss(forward(params, cfg, batch), batch);
            p.data[c] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            e.max_relative_error = std::max(e.max_relative_error, relative_error(analytic.grads[i].data[c], numeric));
            ++e.checked;
        }
        report.entries.push_back(e);
    }
    return report;
}

} // namespace cotext
