#pragma once

// Command-line pipeline: build-corpus, train-tokenizer, pretrain, finetune,
// predict, evaluate and gradcheck. Exit status 0 on success, 1 on domain
// errors, 2 on usage errors.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cotext/codec.hpp"
#include "cotext/config.hpp"
#include "cotext/corpus.hpp"
#include "cotext/denoise.hpp"
#include "cotext/error.hpp"
#include "cotext/infer.hpp"
#include "cotext/metrics.hpp"
#include "cotext/model.hpp"
#include "cotext/tasks.hpp"
#include "cotext/tokenizer.hpp"
#include "cotext/trainer.hpp"

namespace cotext::cli {

inline constexpr std::string_view kVersion = "0.1.0";

namespace fs = std::filesystem;

enum class LogLevel { quiet, info, debug };

inline LogLevel parse_log_level(const std::string& s) {
    if (s == "quiet") return LogLevel::quiet;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    throw Error(ErrorCode::invalid_config, "log_level must be quiet, info or debug");
}

using Fields = std::vector<std::pair<std::string, std::string>>;

/// `event=<name> key=value ...` lines; values with spaces or quotes are quoted.
class Logger {
public:
    Logger(std::ostream& out, LogLevel level) : out_(out), level_(level) {}

    void info(const std::string& event, const Fields& fields = {}) { emit(LogLevel::info, event, fields); }
    void debug(const std::string& event, const Fields& fields = {}) { emit(LogLevel::debug, event, fields); }

    static std::string value(const std::string& v) {
        if (!v.empty() && v.find_first_of(" \t\"=") == std::string::npos) return v;
        std::string q = "\"";
        for (char c : v) {
            if (c == '"' || c == '\\') q += '\\';
            q += c == '\n' ? ' ' : c;
        }
        return q + "\"";
    }

private:
    std::ostream& out_;
    LogLevel level_;

    void emit(LogLevel at, const std::string& event, const Fields& fields) {
        if (level_ == LogLevel::quiet || static_cast<int>(at) > static_cast<int>(level_)) return;
        out_ << "event=" << event;
        for (const auto& [k, v] : fields) out_ << ' ' << k << '=' << value(v);
        out_ << '\n';
        out_.flush();
    }
};

inline std::string fmt_double(double v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

inline std::uint64_t fnv1a_bytes(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_failure, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path);
    out << content;
    if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path);
}

/// Hash of a file, or of a directory's files in name order.
inline std::string content_hash(const std::string& path) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(path)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            h = fnv1a_bytes(f.filename().string(), h);
            h = fnv1a_bytes(read_file(f.string()), h);
        }
    } else {
        h = fnv1a_bytes(read_file(path), h);
    }
    return hex64(h);
}

struct Context {
    std::string subcommand;
    Config config;
    std::string out_dir;
    std::uint64_t seed = 0;
    Logger log;
    std::vector<std::pair<std::string, std::string>> inputs;  // name, path
    std::vector<std::pair<std::string, std::string>> outputs; // name, path
    std::map<std::string, std::string> versions;

    std::string out_path(const std::string& name) const { return (fs::path(out_dir) / name).string(); }

    /// Config path, or the default artifact inside the output directory.
    std::string input_path(const std::string& key, const std::string& default_name) const {
        const std::string p = config.get_path(key, "");
        return p.empty() ? out_path(default_name) : p;
    }

    std::string shown(const std::string& path) const {
        const std::string prefix = (fs::path(out_dir) / "").string();
        return path.rfind(prefix, 0) == 0 ? path.substr(prefix.size()) : path;
    }

    std::uint64_t derived_seed(std::uint64_t salt) const { return seed ^ (0x9E3779B97F4A7C15ULL * salt); }
};

inline ModelConfig model_config(const Config& c, int vocab_size, const std::string& section = "model") {
    ModelConfig m;
    const auto key = [&](const char* k) { return section + "." + k; };
    m.num_layers = static_cast<int>(c.get_int(key("num_layers"), m.num_layers));
    m.d_model = static_cast<int>(c.get_int(key("d_model"), m.d_model));
    m.num_heads = static_cast<int>(c.get_int(key("num_heads"), m.num_heads));
    m.d_ff = static_cast<int>(c.get_int(key("d_ff"), m.d_ff));
    m.relative_buckets = static_cast<int>(c.get_int(key("relative_buckets"), m.relative_buckets));
    m.relative_max_distance = static_cast<int>(c.get_int(key("relative_max_distance"), m.relative_max_distance));
    m.max_input_len = static_cast<int>(c.get_int(key("max_input_len"), m.max_input_len));
    m.max_target_len = static_cast<int>(c.get_int(key("max_target_len"), m.max_target_len));
    m.dropout = c.get_double(key("dropout"), m.dropout);
    m.vocab_size = vocab_size;
    m.check();
    return m;
}

inline TrainConfig train_config(const Config& c, const std::string& section, std::uint64_t seed) {
    TrainConfig t;
    t.learning_rate = c.get_double(section + ".learning_rate", t.learning_rate);
    t.batch_size = static_cast<int>(c.get_int(section + ".batch_size", t.batch_size));
    t.total_steps = static_cast<int>(c.get_int(section + ".steps", t.total_steps));
    t.warmup_steps = static_cast<int>(c.get_int(section + ".warmup_steps", t.warmup_steps));
    t.checkpoint_every = static_cast<int>(c.get_int(section + ".checkpoint_every", 0));
    t.clip_norm = c.get_double(section + ".clip_norm", t.clip_norm);
    const auto workers = c.get_int("workers", 1);
    if (workers < 1) throw Error(ErrorCode::invalid_config, "workers must be >= 1");
    t.workers = static_cast<std::size_t>(workers);
    t.seed = seed;
    t.check();
    return t;
}

inline Vocabulary load_vocab(Context& ctx) {
    const std::string path = ctx.input_path("tokenizer.vocab", "vocab.txt");
    ctx.inputs.push_back({"vocab", path});
    Vocabulary v = Vocabulary::load(path);
    ctx.versions["vocab_fingerprint"] = hex64(v.fingerprint());
    return v;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            const auto a = cur.find_first_not_of(' ');
            if (a != std::string::npos) out.push_back(cur.substr(a, cur.find_last_not_of(' ') - a + 1));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Task data.

struct LoadedTask {
    std::string name;
    TaskSpec spec;
    std::vector<TaskExample> examples;
    TaskLoadStats stats;
};

inline LoadedTask load_task(Context& ctx, const std::string& name) {
    const std::string path = ctx.config.get_path("tasks." + name, "");
    if (path.empty()) throw Error(ErrorCode::invalid_config, "no data path for task '" + name + "' (tasks." + name + ")");
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot read " + path);
    ctx.inputs.push_back({"task." + name, path});
    LoadedTask t;
    t.name = name;
    if (name == "summarization") {
        t.spec = task_specs::summarization(ctx.config.get_string("tasks.summarization_language", "java"));
        t.examples = load_summarization(in, ctx.config.get_string("tasks.summarization_language", "java"), t.stats);
    } else if (name == "generation") {
        t.spec = task_specs::generation();
        t.examples = load_generation(in, t.stats);
    } else if (name == "refinement_small" || name == "refinement_medium") {
        const auto size = name == "refinement_small" ? RefinementSize::small : RefinementSize::medium;
        t.spec = task_specs::refinement(size);
        t.examples = load_refinement(in, size, t.stats);
    } else if (name == "defect") {
        t.spec = task_specs::defect();
        t.examples = load_defect(in, t.stats);
    } else {
        throw Error(ErrorCode::invalid_config, "unknown task '" + name + "'");
    }
    const auto limit = ctx.config.get_int("tasks.limit", 0);
    if (limit > 0 && t.examples.size() > static_cast<std::size_t>(limit)) t.examples.resize(static_cast<std::size_t>(limit));
    ctx.log.info("task_loaded", {{"task", name},
                                 {"ingested", std::to_string(t.stats.ingested)},
                                 {"emitted", std::to_string(t.stats.emitted)},
                                 {"skipped", std::to_string(t.stats.skipped)},
                                 {"used", std::to_string(t.examples.size())}});
    return t;
}

/// Desk-scale task lengths, capped by the model's sequence limits.
inline TaskSpec effective_spec(const Context& ctx, const TaskSpec& spec, const ModelConfig& model) {
    TaskSpec s = spec.scaled(static_cast<int>(ctx.config.get_int("tasks.scale", kDeskScaleDivisor)));
    s.input_len = std::min(s.input_len, model.max_input_len);
    s.target_len = std::min(s.target_len, model.max_target_len);
    return s;
}

inline std::string reference_text(const LoadedTask& t, const TaskExample& ex) {
    if (t.spec.kind == TaskKind::summarization || t.spec.kind == TaskKind::defect) return ex.target;
    return denormalize(ex.target, CodecTable::default_table());
}

// ---------------------------------------------------------------------------
// Subcommands.

inline void cmd_build_corpus(Context& ctx) {
    const auto combination = CorpusCombination::parse(ctx.config.get_string("corpus.combination", "1-CCG"));
    const auto table = CodecTable::default_table();
    std::map<std::string, std::vector<FunctionRecord>> sources;
    const auto limit = ctx.config.get_int("corpus.limit", 0);
    for (const auto& name : combination.sources) {
        const std::string path = ctx.config.get_path("corpus." + name, "");
        if (path.empty()) throw Error(ErrorCode::missing_source, "no path configured for source " + name);
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::io_failure, "cannot read " + path);
        ctx.inputs.push_back({"source." + name, path});
        IngestStats st;
        auto records = ingest(in, table, st);
        if (limit > 0 && records.size() > static_cast<std::size_t>(limit)) records.resize(static_cast<std::size_t>(limit));
        ctx.log.info("source_ingested", {{"source", name},
                                         {"lines", std::to_string(st.lines)},
                                         {"malformed", std::to_string(st.malformed)},
                                         {"rejected", std::to_string(st.rejected)},
                                         {"records", std::to_string(records.size())}});
        sources[name] = std::move(records);
    }
    std::map<std::string, SourceStats> stats;
    const auto seqs = build(combination, sources, table, BuildOptions{}, stats);
    if (seqs.empty()) throw Error(ErrorCode::corpus_empty, "combination produced no sequences");
    std::ostringstream out;
    write_sequences(out, seqs);
    const std::string path = ctx.out_path("corpus.jsonl");
    write_file(path, out.str());
    ctx.outputs.push_back({"corpus", path});
    ctx.versions["codec"] = std::to_string(table.version());
    ctx.log.info("corpus_built", {{"combination", std::string(combination.label())},
                                  {"sequences", std::to_string(seqs.size())},
                                  {"path", ctx.shown(path)}});
}

inline std::vector<std::string> read_corpus_texts(Context& ctx, const std::string& key) {
    const std::string path = ctx.input_path(key, "corpus.jsonl");
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot read " + path);
    ctx.inputs.push_back({"corpus", path});
    std::vector<std::string> texts;
    for (auto& s : read_sequences(in)) texts.push_back(std::move(s.text));
    if (texts.empty()) throw Error(ErrorCode::corpus_empty, "corpus " + path + " is empty");
    return texts;
}

inline void cmd_train_tokenizer(Context& ctx) {
    const auto texts = read_corpus_texts(ctx, "tokenizer.corpus");
    const int target = static_cast<int>(ctx.config.get_int("tokenizer.target_size", 2000));
    const Vocabulary v = train_vocab(texts, target);
    const std::string path = ctx.out_path("vocab.txt");
    v.save(path);
    ctx.outputs.push_back({"vocab", path});
    ctx.versions["vocab_fingerprint"] = hex64(v.fingerprint());
    ctx.log.info("tokenizer_trained", {{"target_size", std::to_string(target)},
                                       {"merges", std::to_string(v.num_merges())},
                                       {"vocab_size", std::to_string(v.size())},
                                       {"fingerprint", hex64(v.fingerprint())},
                                       {"path", ctx.shown(path)}});
}

inline void write_losses(Context& ctx, const std::string& name, const std::vector<double>& losses) {
    const auto window = static_cast<std::size_t>(ctx.config.get_int("loss_window", 50));
    const auto means = window_means(losses, std::max<std::size_t>(window, 1));
    nlohmann::ordered_json j;
    j["losses"] = losses;
    j["window"] = window;
    j["window_means"] = means;
    j["decreasing"] = means.size() >= 2 && strictly_decreasing(means);
    const std::string path = ctx.out_path(name);
    write_file(path, j.dump() + "\n");
    ctx.outputs.push_back({name, path});
    Fields f = {{"steps", std::to_string(losses.size())}, {"decreasing", j["decreasing"].get<bool>() ? "true" : "false"}};
    for (std::size_t i = 0; i < means.size(); ++i) f.push_back({"window" + std::to_string(i), fmt_double(means[i])});
    ctx.log.info("loss_summary", f);
}

inline TrainHooks step_logger(Context& ctx, const std::string& phase) {
    const auto every = ctx.config.get_int("log_every", 10);
    TrainHooks h;
    h.on_step = [&ctx, phase, every](const StepRecord& r) {
        Fields f = {{"phase", phase},
                    {"step", std::to_string(r.step)},
                    {"loss", fmt_double(r.loss)},
                    {"lr", fmt_double(r.learning_rate)},
                    {"grad_norm", fmt_double(r.grad_norm)}};
        if (every > 0 && r.step % every == 0) {
            ctx.log.info("step", f);
        } else {
            ctx.log.debug("step", f);
        }
    };
    return h;
}

inline void cmd_pretrain(Context& ctx) {
    const Vocabulary vocab = load_vocab(ctx);
    const auto texts = read_corpus_texts(ctx, "pretrain.corpus");
    const ModelConfig model = model_config(ctx.config, vocab.size());
    const TrainConfig train = train_config(ctx.config, "pretrain", ctx.derived_seed(1));
    CorruptionConfig denoise;
    denoise.rate = ctx.config.get_double("denoise.rate", denoise.rate);
    denoise.mean_span_length = static_cast<int>(ctx.config.get_int("denoise.mean_span_length", denoise.mean_span_length));
    denoise.seed = ctx.derived_seed(2);
    const PretrainData data = tokenize_corpus(texts, vocab, model);
    ctx.log.info("pretrain_start", {{"sequences", std::to_string(data.sequences.size())},
                                    {"parameters", std::to_string(init_parameters(model, 0).num_scalars())},
                                    {"steps", std::to_string(train.total_steps)}});
    auto result = pretrain(data, vocab, denoise, model, train, step_logger(ctx, "pretrain"));
    const std::string dir = ctx.out_path("pretrain");
    save_checkpoint(result.checkpoint, dir);
    ctx.outputs.push_back({"checkpoint", dir});
    ctx.versions["checkpoint_format"] = std::to_string(kCheckpointVersion);
    write_losses(ctx, "pretrain_losses.json", result.losses);
}

inline void cmd_finetune(Context& ctx) {
    const Vocabulary vocab = load_vocab(ctx);
    const std::string init = ctx.config.get_string("finetune.init", "pretrain");
    Checkpoint ckpt;
    if (init == "scratch") {
        ckpt = init_checkpoint(model_config(ctx.config, vocab.size()), ctx.derived_seed(3), vocab.fingerprint());
    } else {
        const std::string dir = ctx.input_path("finetune.checkpoint", "pretrain");
        ctx.inputs.push_back({"checkpoint", dir});
        ckpt = load_checkpoint(dir, vocab.fingerprint());
        // fine-tuning starts a fresh optimizer schedule
        ckpt.adam = AdamState::zeros(ckpt.params);
        ckpt.step = 0;
    }
    ckpt.config.dropout = ctx.config.get_double("model.dropout", ckpt.config.dropout);
    MixtureSpec mixture;
    for (const auto& name : split_list(ctx.config.get_string("finetune.tasks", "summarization"))) {
        const LoadedTask task = load_task(ctx, name);
        const TaskSpec spec = effective_spec(ctx, task.spec, ckpt.config);
        MixtureTask mt{name, {}};
        std::size_t cut_in = 0, cut_out = 0;
        for (const auto& ex : task.examples) {
            auto enc = encode_example(ex, vocab, spec);
            cut_in += enc.input_truncated;
            cut_out += enc.target_truncated;
            mt.examples.push_back(std::move(enc.pair));
        }
        ctx.log.info("task_encoded", {{"task", name},
                                      {"input_len", std::to_string(spec.input_len)},
                                      {"target_len", std::to_string(spec.target_len)},
                                      {"inputs_truncated", std::to_string(cut_in)},
                                      {"targets_truncated", std::to_string(cut_out)}});
        mixture.tasks.push_back(std::move(mt));
    }
    const TrainConfig train = train_config(ctx.config, "finetune", ctx.derived_seed(4));
    const auto losses = finetune(ckpt, mixture, train, step_logger(ctx, "finetune"));
    const std::string dir = ctx.out_path("finetune");
    save_checkpoint(ckpt, dir);
    ctx.outputs.push_back({"checkpoint", dir});
    ctx.versions["checkpoint_format"] = std::to_string(kCheckpointVersion);
    write_losses(ctx, "finetune_losses.json", losses);
}

inline DecodeConfig decode_config(const Config& c) {
    DecodeConfig d;
    d.max_length = static_cast<int>(c.get_int("predict.max_length", d.max_length));
    const std::string s = c.get_string("predict.strategy", "greedy");
    if (s == "greedy") {
        d.strategy = DecodeStrategy::greedy;
    } else if (s == "beam") {
        d.strategy = DecodeStrategy::beam;
    } else {
        throw Error(ErrorCode::invalid_config, "predict.strategy must be greedy or beam");
    }
    d.beam_size = static_cast<int>(c.get_int("predict.beam_size", d.beam_size));
    d.length_penalty = c.get_double("predict.length_penalty", d.length_penalty);
    d.check();
    return d;
}

inline void cmd_predict(Context& ctx) {
    const Vocabulary vocab = load_vocab(ctx);
    const std::string dir = ctx.input_path("predict.checkpoint", "finetune");
    ctx.inputs.push_back({"checkpoint", dir});
    const Checkpoint ckpt = load_checkpoint(dir, vocab.fingerprint());
    const LoadedTask task = load_task(ctx, ctx.config.get_string("predict.task", "summarization"));
    const TaskSpec spec = effective_spec(ctx, task.spec, ckpt.config);
    DecodeConfig dc = decode_config(ctx.config);
    dc.max_length = std::min(dc.max_length, ckpt.config.max_target_len);
    const auto limit = ctx.config.get_int("predict.limit", 0);
    const std::size_t n =
        limit > 0 ? std::min(task.examples.size(), static_cast<std::size_t>(limit)) : task.examples.size();
    const std::vector<std::vector<int>> labels = {vocab.encode(kPositive), vocab.encode(kNegative)};
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < n; ++i) {
        const auto enc = encode_example(task.examples[i], vocab, spec);
        std::string text;
        if (task.spec.kind == TaskKind::defect) {
            const auto r = classify(ckpt.params, ckpt.config, enc.pair.input, labels);
            text = std::string(r.index == 0 ? kPositive : kNegative);
        } else {
            const auto h = decode(ckpt.params, ckpt.config, enc.pair.input, dc);
            text = vocab.decode(h.output());
            if (task.spec.kind != TaskKind::summarization) text = denormalize(text, CodecTable::default_table());
        }
        ctx.log.debug("prediction", {{"id", task.examples[i].id}, {"text", text}});
        preds.push_back({task.examples[i].id, std::move(text)});
    }
    std::ostringstream out;
    write_predictions(out, preds);
    const std::string path = ctx.out_path("predictions.jsonl");
    write_file(path, out.str());
    ctx.outputs.push_back({"predictions", path});
    ctx.log.info("predicted", {{"task", task.name}, {"count", std::to_string(preds.size())}, {"path", ctx.shown(path)}});
}

inline MetricReport compute_metric(const std::string& metric, const std::vector<std::string>& cands,
                                   const std::vector<std::string>& refs, const Config& c) {
    MetricReport r;
    if (metric == "codebleu") {
        CodeBleuWeights w;
        w.ngram = c.get_double("evaluate.codebleu_ngram", w.ngram);
        w.weighted_ngram = c.get_double("evaluate.codebleu_weighted_ngram", w.weighted_ngram);
        w.syntax = c.get_double("evaluate.codebleu_syntax", w.syntax);
        w.dataflow = c.get_double("evaluate.codebleu_dataflow", w.dataflow);
        w.keyword_weight = c.get_double("evaluate.codebleu_keyword_weight", w.keyword_weight);
        return codebleu(cands, refs, w);
    }
    r.metric = metric;
    r.evaluated = cands.size();
    if (metric == "smooth_bleu") {
        r.value = bleu_smooth4(cands, refs);
    } else if (metric == "bleu") {
        r.value = bleu_corpus(cands, refs);
    } else if (metric == "exact_match") {
        r.value = exact_match(cands, refs);
    } else if (metric == "accuracy") {
        r.value = accuracy(cands, refs);
    } else {
        throw Error(ErrorCode::invalid_config, "unknown metric '" + metric + "'");
    }
    return r;
}

inline void cmd_evaluate(Context& ctx) {
    const LoadedTask task = load_task(ctx, ctx.config.get_string("evaluate.task", "summarization"));
    std::map<std::string, std::string> refs;
    for (const auto& ex : task.examples) refs[ex.id] = reference_text(task, ex);
    const std::string path = ctx.input_path("evaluate.predictions", "predictions.jsonl");
    ctx.inputs.push_back({"predictions", path});
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot read " + path);
    const auto preds = read_predictions(in);
    std::vector<std::string> cands, golds;
    for (const auto& p : preds) {
        auto it = refs.find(p.id);
        if (it == refs.end()) throw Error(ErrorCode::format_error, "prediction for unknown id '" + p.id + "'");
        cands.push_back(p.prediction);
        golds.push_back(it->second);
    }
    const std::string metric = ctx.config.get_string("evaluate.metric", task.spec.metrics.front());
    MetricReport report = compute_metric(metric, cands, golds, ctx.config);
    report.task = task.name;
    const std::string out = ctx.out_path("report.json");
    write_file(out, report.to_json().dump(2) + "\n");
    ctx.outputs.push_back({"report", out});
    ctx.log.info("evaluated", {{"report", report.display()}, {"path", ctx.shown(out)}});
}

inline void cmd_gradcheck(Context& ctx) {
    ModelConfig m;
    m.num_layers = 2;
    m.d_model = 16;
    m.num_heads = 2;
    m.d_ff = 32;
    m.max_input_len = 8;
    m.max_target_len = 8;
    m.dropout = 0.0;
    const auto& c = ctx.config;
    m.num_layers = static_cast<int>(c.get_int("gradcheck.num_layers", m.num_layers));
    m.d_model = static_cast<int>(c.get_int("gradcheck.d_model", m.d_model));
    m.num_heads = static_cast<int>(c.get_int("gradcheck.num_heads", m.num_heads));
    m.d_ff = static_cast<int>(c.get_int("gradcheck.d_ff", m.d_ff));
    m.vocab_size = static_cast<int>(c.get_int("gradcheck.vocab_size", kMinVocabSize));
    m.check();
    const auto samples = static_cast<std::size_t>(c.get_int("gradcheck.samples", 20));
    const double eps = c.get_double("gradcheck.epsilon", 1e-4);
    const double threshold = c.get_double("gradcheck.threshold", 1e-4);
    const auto report = grad_check(m, ctx.derived_seed(5), samples, eps);
    nlohmann::ordered_json j;
    j["epsilon"] = report.epsilon;
    j["threshold"] = threshold;
    j["worst"] = report.worst();
    j["passed"] = report.worst() < threshold;
    j["arrays"] = nlohmann::ordered_json::array();
    for (const auto& e : report.entries) {
        j["arrays"].push_back({{"name", e.name}, {"checked", e.checked}, {"max_relative_error", e.max_relative_error}});
        ctx.log.debug("gradcheck_array", {{"name", e.name}, {"max_relative_error", fmt_double(e.max_relative_error)}});
    }
    const std::string path = ctx.out_path("gradcheck.json");
    write_file(path, j.dump(2) + "\n");
    ctx.outputs.push_back({"gradcheck", path});
    ctx.log.info("gradcheck", {{"arrays", std::to_string(report.entries.size())},
                               {"worst", fmt_double(report.worst())},
                               {"passed", report.worst() < threshold ? "true" : "false"}});
    if (!(report.worst() < threshold)) {
        throw Error(ErrorCode::gradcheck_failed, "gradient check failed: worst relative error " + fmt_double(report.worst()));
    }
}

// ---------------------------------------------------------------------------

inline void write_run_manifest(const Context& ctx, const std::string& status) {
    Config hashed = ctx.config;
    nlohmann::ordered_json j;
    j["subcommand"] = ctx.subcommand;
    j["status"] = status;
    j["version"] = std::string(kVersion);
    std::map<std::string, ConfigValue> kept;
    for (const auto& [k, v] : ctx.config.values()) {
        if (k != "out_dir") kept[k] = v;
    }
    std::string canonical;
    for (const auto& [k, v] : kept) canonical += k + " = " + Config::format(v) + "\n";
    j["config_hash"] = hex64(fnv1a_bytes(canonical));
    j["seed"] = ctx.seed;
    j["versions"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : ctx.versions) j["versions"][k] = v;
    j["inputs"] = nlohmann::ordered_json::array();
    for (const auto& [name, path] : ctx.inputs) {
        nlohmann::ordered_json e = {{"name", name}, {"path", ctx.shown(path)}};
        if (fs::exists(path)) e["hash"] = content_hash(path);
        j["inputs"].push_back(e);
    }
    j["outputs"] = nlohmann::ordered_json::array();
    for (const auto& [name, path] : ctx.outputs) {
        j["outputs"].push_back({{"name", name}, {"path", ctx.shown(path)}, {"hash", content_hash(path)}});
    }
    write_file(ctx.out_path("run-manifest-" + ctx.subcommand + ".json"), j.dump(2) + "\n");
}

struct Command {
    std::string name;
    std::string help;
    std::function<void(Context&)> run;
};

inline const std::vector<Command>& commands() {
    static const std::vector<Command> cmds = {
        {"build-corpus", "Build the pretraining corpus (JSON Lines)", cmd_build_corpus},
        {"train-tokenizer", "Train the subword vocabulary", cmd_train_tokenizer},
        {"pretrain", "Pretrain on span-corruption examples", cmd_pretrain},
        {"finetune", "Fine-tune on the configured task mixture", cmd_finetune},
        {"predict", "Write predictions for a task", cmd_predict},
        {"evaluate", "Score predictions against task references", cmd_evaluate},
        {"gradcheck", "Compare gradients with finite differences", cmd_gradcheck},
    };
    return cmds;
}

/// Runs one subcommand; returns the process exit status.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Encoder-decoder pretraining and fine-tuning pipeline for code and text", "cotext"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", std::string(kVersion));
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::int64_t seed = -1;
    std::string log_level;
    for (const auto& c : commands()) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("-c,--config", config_path, "Configuration file (flat TOML)");
        sub->add_option("-o,--out", out_dir, "Output directory (overrides out_dir)");
        sub->add_option("-s,--seed", seed, "Seed (overrides seed)")->check(CLI::NonNegativeNumber);
        sub->add_option("--set", overrides, "Override a config key: key=value")->take_all();
        sub->add_option("--log-level", log_level, "quiet, info or debug");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error=USAGE message=" << Logger::value(e.what()) << '\n';
        return 2;
    }
    const auto* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    Config config;
    try {
        config = config_path.empty() ? Config{} : Config::load(config_path);
        for (const auto& o : overrides) config.set(o);
        if (seed >= 0) config.set("seed", ConfigValue{seed});
        if (!log_level.empty()) config.set("log_level", ConfigValue{log_level});
    } catch (const Error& e) {
        err << "error=" << to_string(e.code()) << " message=" << Logger::value(e.what()) << '\n';
        return 2;
    }
    int status = 0;
    std::unique_ptr<Context> ctx;
    try {
        const std::string dir = !out_dir.empty() ? out_dir : config.get_string("out_dir", "");
        if (dir.empty()) throw Error(ErrorCode::invalid_config, "no output directory (use --out or out_dir)");
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw Error(ErrorCode::io_failure, "cannot create " + dir + ": " + ec.message());
        const auto s = config.get_int("seed", 0);
        if (s < 0) throw Error(ErrorCode::invalid_config, "seed must be >= 0");
        ctx = std::make_unique<Context>(Context{name, config, fs::path(dir).lexically_normal().string(),
                                                static_cast<std::uint64_t>(s),
                                                Logger(out, parse_log_level(config.get_string("log_level", "info"))),
                                                {}, {}, {}});
        ctx->log.info("start", {{"subcommand", name}, {"seed", std::to_string(s)}, {"out", ctx->out_dir}});
        for (const auto& c : commands()) {
            if (c.name == name) c.run(*ctx);
        }
        write_run_manifest(*ctx, "ok");
        ctx->log.info("done", {{"subcommand", name}});
    } catch (const Error& e) {
        err << "error=" << to_string(e.code()) << " message=" << Logger::value(e.what()) << '\n';
        status = 1;
    } catch (const std::exception& e) {
        err << "error=INTERNAL message=" << Logger::value(e.what()) << '\n';
        status = 1;
    }
    if (status != 0 && ctx) {
        try {
            write_run_manifest(*ctx, "error");
        } catch (const std::exception&) {
        }
    }
    return status;
}

} // namespace cotext::cli
