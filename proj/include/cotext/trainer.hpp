#pragma once

// Optimization loop (Adam, warmup then inverse-square-root decay, global-norm
// clipping), denoising pretraining, examples-proportional multi-task
// fine-tuning, and the checkpoint directory format.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cotext/denoise.hpp"
#include "cotext/error.hpp"
#include "cotext/model.hpp"
#include "cotext/rng.hpp"
#include "cotext/tokenizer.hpp"

namespace cotext {

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 8;
    int total_steps = 200;
    int warmup_steps = 20;
    int checkpoint_every = 0; // 0 disables periodic checkpoints
    std::uint64_t seed = 0;
    double clip_norm = 1.0; // 0 disables clipping
    std::size_t workers = 1;

    void check() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw Error(ErrorCode::invalid_config, "learning_rate must be finite and >= 0");
        }
        if (batch_size < 1) throw Error(ErrorCode::invalid_config, "batch_size must be >= 1");
        if (total_steps < 0 || warmup_steps < 0 || checkpoint_every < 0) {
            throw Error(ErrorCode::invalid_config, "step counts must be >= 0");
        }
        if (clip_norm < 0.0) throw Error(ErrorCode::invalid_config, "clip_norm must be >= 0");
    }
};

/// Learning rate for 1-based optimizer step `step`.
inline double learning_rate_at(const TrainConfig& cfg, std::int64_t step) {
    const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
    const double w = static_cast<double>(cfg.warmup_steps);
    if (cfg.warmup_steps > 0 && s <= w) return cfg.learning_rate * s / w;
    return cfg.learning_rate * std::sqrt(std::max(w, 1.0) / s);
}

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState zeros(const Parameters& p) {
        AdamState s;
        for (const auto& a : p.arrays) {
            s.m.emplace_back(a.value.rows, a.value.cols);
            s.v.emplace_back(a.value.rows, a.value.cols);
        }
        return s;
    }
};

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int format_version = kCheckpointVersion;
    ModelConfig config;
    Parameters params;
    AdamState adam;
    std::int64_t step = 0;
    std::uint64_t vocab_fingerprint = 0;
};

inline Checkpoint init_checkpoint(const ModelConfig& cfg, std::uint64_t seed, std::uint64_t vocab_fingerprint) {
    Checkpoint c;
    c.config = cfg;
    c.params = init_parameters(cfg, seed);
    c.adam = AdamState::zeros(c.params);
    c.vocab_fingerprint = vocab_fingerprint;
    return c;
}

/// Scales gradients in place to global norm <= max_norm; returns the norm before clipping.
inline double clip_gradients(std::vector<Matrix>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) {
        for (double x : g.data) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : grads) {
            for (double& x : g.data) x *= s;
        }
    }
    return norm;
}

/// One bias-corrected Adam update; advances ckpt.step.
inline void adam_step(Checkpoint& ckpt, const std::vector<Matrix>& grads, double lr) {
    auto& st = ckpt.adam;
    ++ckpt.step;
    const double t = static_cast<double>(ckpt.step);
    const double c1 = 1.0 - std::pow(st.beta1, t);
    const double c2 = 1.0 - std::pow(st.beta2, t);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& p = ckpt.params[i].data;
        auto& m = st.m[i].data;
        auto& v = st.v[i].data;
        const auto& g = grads[i].data;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
            v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
            p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
        }
    }
}

struct StepRecord {
    std::int64_t step = 0;
    double loss = 0.0;
    double learning_rate = 0.0;
    double grad_norm = 0.0;
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const Checkpoint&)> on_checkpoint; // every checkpoint_every steps
};

using BatchSource = std::function<Batch(std::int64_t step)>;

/// Runs cfg.total_steps optimizer steps on batches from `next_batch`; returns the loss curve.
inline std::vector<double> train_loop(Checkpoint& ckpt, const TrainConfig& cfg, const BatchSource& next_batch,
                                      const TrainHooks& hooks = {}) {
    cfg.check();
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.total_steps));
    for (int s = 0; s < cfg.total_steps; ++s) {
        const Batch batch = next_batch(s);
        const ForwardOptions opts{true, cfg.seed ^ (0xD1B54A32D192ED03ULL * static_cast<std::uint64_t>(ckpt.step + 1)),
                                  cfg.workers};
        auto lg = backward(ckpt.params, ckpt.config, batch, opts);
        if (!std::isfinite(lg.loss)) {
            throw Error(ErrorCode::diverged, "non-finite loss at step " + std::to_string(ckpt.step + 1));
        }
        const double norm = clip_gradients(lg.grads, cfg.clip_norm);
        if (!std::isfinite(norm)) {
            throw Error(ErrorCode::diverged, "non-finite gradient at step " + std::to_string(ckpt.step + 1));
        }
        const double lr = learning_rate_at(cfg, ckpt.step + 1);
        adam_step(ckpt, lg.grads, lr);
        if (!ckpt.params.all_finite()) {
            throw Error(ErrorCode::diverged, "non-finite parameters at step " + std::to_string(ckpt.step));
        }
        losses.push_back(lg.loss);
        if (hooks.on_step) hooks.on_step({ckpt.step, lg.loss, lr, norm});
        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0) {
            hooks.on_checkpoint(ckpt);
        }
    }
    return losses;
}

/// Means of consecutive non-overlapping windows (a trailing partial window is kept).
inline std::vector<double> window_means(const std::vector<double>& xs, std::size_t window) {
    std::vector<double> out;
    window = std::max<std::size_t>(window, 1);
    for (std::size_t i = 0; i < xs.size(); i += window) {
        const std::size_t end = std::min(xs.size(), i + window);
        double s = 0.0;
        for (std::size_t k = i; k < end; ++k) s += xs[k];
        out.push_back(s / static_cast<double>(end - i));
    }
    return out;
}

inline bool strictly_decreasing(const std::vector<double>& xs) {
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (!(xs[i] < xs[i - 1])) return false;
    }
    return !xs.empty();
}

// ---------------------------------------------------------------------------
// Pretraining on span-corruption examples.

struct PretrainData {
    std::vector<std::vector<int>> sequences; // token ids, sentinel-free, non-empty
};

/// Tokenizes texts, truncated to the model's input length. Empty texts are dropped.
inline PretrainData tokenize_corpus(std::span<const std::string> texts, const Vocabulary& vocab,
                                    const ModelConfig& model) {
    PretrainData d;
    for (const auto& t : texts) {
        auto ids = vocab.encode(t);
        std::erase_if(ids, [&](int id) { return vocab.is_sentinel(id); });
        if (ids.size() > static_cast<std::size_t>(model.max_input_len)) ids.resize(static_cast<std::size_t>(model.max_input_len));
        if (!ids.empty()) d.sequences.push_back(std::move(ids));
    }
    return d;
}

/// Corrupts `ids`, shortening the source until the target fits the decoder length.
inline SeqPair make_denoising_pair(std::vector<int> ids, const CorruptionConfig& cfg, const SentinelIds& sentinels,
                                   const ModelConfig& model, std::uint64_t seed) {
    while (true) {
        CorruptionConfig c = cfg;
        c.seed = seed;
        const auto ex = corrupt(ids, c, sentinels);
        if (ex.target_ids.size() <= static_cast<std::size_t>(model.max_target_len) || ids.size() == 1) {
            SeqPair p{ex.input_ids, ex.target_ids};
            if (p.target.size() > static_cast<std::size_t>(model.max_target_len)) {
                p.target.resize(static_cast<std::size_t>(model.max_target_len));
                p.target.back() = sentinels.eos;
            }
            return p;
        }
        ids.resize(std::max<std::size_t>(1, ids.size() * 3 / 4));
    }
}

/// Cycles through `n` items in a fresh shuffled order every pass.
class EpochOrder {
public:
    EpochOrder(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}

    std::size_t next() {
        if (pos_ == order_.size()) {
            order_.resize(n_);
            std::iota(order_.begin(), order_.end(), 0);
            rng_.shuffle(order_.begin(), order_.end());
            pos_ = 0;
        }
        return order_[pos_++];
    }

private:
    std::size_t n_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> losses;
};

inline TrainResult pretrain(const PretrainData& data, const Vocabulary& vocab, const CorruptionConfig& denoise,
                            const ModelConfig& model, const TrainConfig& train, const TrainHooks& hooks = {}) {
    model.check();
    train.check();
    denoise.check();
    if (model.vocab_size != vocab.size()) throw Error(ErrorCode::invalid_config, "model vocab_size differs from vocabulary");
    if (data.sequences.empty()) throw Error(ErrorCode::corpus_empty, "no pretraining sequences");
    TrainResult r{init_checkpoint(model, train.seed, vocab.fingerprint()), {}};
    const SentinelIds sentinels = SentinelIds::of(vocab);
    EpochOrder order(data.sequences.size(), train.seed ^ 0xA5A5A5A5ULL);
    std::uint64_t example = 0;
    r.losses = train_loop(r.checkpoint, train, [&](std::int64_t) {
        std::vector<SeqPair> pairs;
        for (int b = 0; b < train.batch_size; ++b) {
            const auto& ids = data.sequences[order.next()];
            pairs.push_back(make_denoising_pair(ids, denoise, sentinels, model, record_seed(denoise.seed, example++)));
        }
        return Batch::from_pairs(pairs);
    }, hooks);
    return r;
}

// ---------------------------------------------------------------------------
// Multi-task fine-tuning.

struct MixtureTask {
    std::string name;
    std::vector<SeqPair> examples;
};

struct MixtureSpec {
    std::vector<MixtureTask> tasks;

    void check() const {
        if (tasks.empty()) throw Error(ErrorCode::empty_mixture, "mixture has no tasks");
        for (const auto& t : tasks) {
            if (t.examples.empty()) throw Error(ErrorCode::empty_mixture, "task " + t.name + " has no examples");
        }
    }
};

/// Picks a task with probability proportional to its example count, then the
/// next example of that task in a per-task shuffled cycle.
class MixtureSampler {
public:
    MixtureSampler(const MixtureSpec& spec, std::uint64_t seed) : rng_(seed) {
        spec.check();
        std::uint64_t total = 0;
        for (std::size_t i = 0; i < spec.tasks.size(); ++i) {
            total += spec.tasks[i].examples.size();
            cumulative_.push_back(total);
            orders_.emplace_back(spec.tasks[i].examples.size(), seed + 0x9E37ULL * (i + 1));
        }
    }

    std::pair<std::size_t, std::size_t> next() {
        const std::uint64_t u = rng_.below(cumulative_.back());
        const auto task = static_cast<std::size_t>(
            std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
        return {task, orders_[task].next()};
    }

private:
    Rng rng_;
    std::vector<std::uint64_t> cumulative_;
    std::vector<EpochOrder> orders_;
};

inline std::vector<double> finetune(Checkpoint& ckpt, const MixtureSpec& mixture, const TrainConfig& train,
                                    const TrainHooks& hooks = {}) {
    train.check();
    MixtureSampler sampler(mixture, train.seed ^ 0x5151ULL);
    return train_loop(ckpt, train, [&](std::int64_t) {
        std::vector<SeqPair> pairs;
        for (int b = 0; b < train.batch_size; ++b) {
            const auto [t, i] = sampler.next();
            pairs.push_back(mixture.tasks[t].examples[i]);
        }
        return Batch::from_pairs(pairs);
    }, hooks);
}

// ---------------------------------------------------------------------------
// Checkpoint directory: `manifest` plus one little-endian array file per
// parameter and per Adam moment.

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t x) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw Error(ErrorCode::format_error, "truncated array file");
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return x;
}

inline void write_array(const std::filesystem::path& path, const NamedArray& a, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
    put_u64(out, static_cast<std::uint64_t>(a.rank));
    if (a.rank == 2) put_u64(out, m.rows);
    put_u64(out, m.cols);
    for (double x : m.data) put_u64(out, std::bit_cast<std::uint64_t>(x));
    if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

inline void read_array(const std::filesystem::path& path, const NamedArray& a, Matrix& m) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_failure, "cannot read " + path.string());
    const auto rank = get_u64(in);
    const std::uint64_t rows = rank == 2 ? get_u64(in) : 1;
    const std::uint64_t cols = get_u64(in);
    if (rank != static_cast<std::uint64_t>(a.rank) || rows != m.rows || cols != m.cols) {
        throw Error(ErrorCode::format_error, "array shape differs from config: " + path.string());
    }
    for (double& x : m.data) x = std::bit_cast<double>(get_u64(in));
    if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::format_error, "trailing bytes in " + path.string());
}

inline std::string hex64(std::uint64_t x) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << x;
    return s.str();
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::io_failure, "cannot create " + dir + ": " + ec.message());
    std::ostringstream m;
    m << "format_version=" << c.format_version << '\n';
    m << "step=" << c.step << '\n';
    m << "vocab_fingerprint=" << detail::hex64(c.vocab_fingerprint) << '\n';
    for (const auto& [k, v] : c.config.to_map()) m << "model." << k << '=' << v << '\n';
    m << "arrays=" << c.params.size() << '\n';
    std::ofstream out(fs::path(dir) / "manifest", std::ios::binary);
    if (!out) throw Error(ErrorCode::io_failure, "cannot write manifest in " + dir);
    out << m.str();
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        const auto& a = c.params.arrays[i];
        detail::write_array(fs::path(dir) / ("param." + a.name + ".bin"), a, a.value);
        detail::write_array(fs::path(dir) / ("adam_m." + a.name + ".bin"), a, c.adam.m[i]);
        detail::write_array(fs::path(dir) / ("adam_v." + a.name + ".bin"), a, c.adam.v[i]);
    }
}

inline std::map<std::string, std::string> read_manifest(const std::string& dir) {
    std::ifstream in(std::filesystem::path(dir) / "manifest", std::ios::binary);
    if (!in) throw Error(ErrorCode::io_failure, "cannot read manifest in " + dir);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::format_error, "bad manifest line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

/// Loads a checkpoint; when `expected_fingerprint` is given it must match the stored one.
inline Checkpoint load_checkpoint(const std::string& dir, std::optional<std::uint64_t> expected_fingerprint = {}) {
    namespace fs = std::filesystem;
    const auto kv = read_manifest(dir);
    auto field = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw Error(ErrorCode::format_error, "manifest missing " + k);
        return it->second;
    };
    Checkpoint c;
    try {
        c.format_version = std::stoi(field("format_version"));
        c.step = std::stoll(field("step"));
        c.vocab_fingerprint = std::stoull(field("vocab_fingerprint"), nullptr, 16);
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::format_error, "bad manifest value in " + dir);
    }
    if (c.format_version != kCheckpointVersion) {
        throw Error(ErrorCode::version_mismatch, "checkpoint format " + field("format_version") + ", expected " +
                                                     std::to_string(kCheckpointVersion));
    }
    if (expected_fingerprint && *expected_fingerprint != c.vocab_fingerprint) {
        throw Error(ErrorCode::vocab_mismatch, "checkpoint vocabulary " + detail::hex64(c.vocab_fingerprint) +
                                                   " differs from " + detail::hex64(*expected_fingerprint));
    }
    std::map<std::string, std::string> model;
    for (const auto& [k, v] : kv) {
        if (k.rfind("model.", 0) == 0) model[k.substr(6)] = v;
    }
    c.config = ModelConfig::from_map(model);
    c.params = Parameters(c.config);
    if (field("arrays") != std::to_string(c.params.size())) {
        throw Error(ErrorCode::format_error, "array count differs from config");
    }
    c.adam = AdamState::zeros(c.params);
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        auto& a = c.params.arrays[i];
        detail::read_array(fs::path(dir) / ("param." + a.name + ".bin"), a, a.value);
        detail::read_array(fs::path(dir) / ("adam_m." + a.name + ".bin"), a, c.adam.m[i]);
        detail::read_array(fs::path(dir) / ("adam_v." + a.name + ".bin"), a, c.adam.v[i]);
    }
    return c;
}

} // namespace cotext
