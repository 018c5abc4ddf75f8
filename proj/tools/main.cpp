// sepkit CLI: build and inspect attention masks, simulate streaming KV
// caches, train and sample the toy decoder, and print the closed-form cache
// limits. Structured outputs are JSON, time series are CSV.

#include "sepkit/attention.hpp"
#include "sepkit/kvcache.hpp"
#include "sepkit/mask.hpp"
#include "sepkit/metrics.hpp"
#include "sepkit/model.hpp"
#include "sepkit/synthetic.hpp"
#include "sepkit/tokenizer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Binds CLI options and, in parallel, JSON config-file setters so that
// --config files share the option namespace and flags always win.
struct OptionBook {
    CLI::App* cmd = nullptr;
    std::map<std::string, std::pair<CLI::Option*, std::function<void(const json&)>>> entries;

    template <typename T>
    CLI::Option* add(const std::string& name, T& var, const std::string& desc) {
        CLI::Option* opt = cmd->add_option("--" + name, var, desc);
        entries[name] = {opt, [&var](const json& value) { var = value.get<T>(); }};
        return opt;
    }

    void apply_config(const fs::path& path) const {
        std::ifstream in(path);
        if (!in) {
            throw CLI::ValidationError("--config", "cannot open " + path.string());
        }
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw CLI::ValidationError("--config", std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) {
            throw CLI::ValidationError("--config", "top-level JSON value must be an object");
        }
        for (const auto& [key, value] : j.items()) {
            const auto it = entries.find(key);
            if (it == entries.end()) {
                throw CLI::ValidationError("--config", "unknown field '" + key + "'");
            }
            if (it->second.first->count() == 0) {  // flags override file
                it->second.second(value);
            }
        }
    }
};

void write_file(const fs::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open output file " + path.string());
    }
    out << contents;
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

std::string format_exact(double value) {
    // limits are integers or integer-and-a-half by construction
    if (value == static_cast<double>(static_cast<long long>(value))) {
        return std::to_string(static_cast<long long>(value));
    }
    std::ostringstream out;
    out.precision(17);
    out << value;
    return out.str();
}

sepkit::MaskPolicy make_policy(const std::string& kind, std::size_t a, std::size_t n,
                               std::size_t delta) {
    using sepkit::MaskPolicy;
    if (kind == "full") return MaskPolicy::full();
    if (kind == "sepllm") return MaskPolicy::sepllm(a, n);
    if (kind == "strmllm") return MaskPolicy::streaming(a, n);
    if (kind == "fixllm") return MaskPolicy::fixllm(a, n, delta);
    if (kind == "window") return MaskPolicy::sliding_window(n);
    throw CLI::ValidationError("--policy", "unknown policy '" + kind + "'");
}

sepkit::HybridMode make_hybrid(const std::string& name) {
    if (name == "none") return sepkit::HybridMode::None;
    if (name == "h" || name == "H") return sepkit::HybridMode::H;
    if (name == "ht" || name == "h_t" || name == "H_T" || name == "HT") return sepkit::HybridMode::HT;
    throw CLI::ValidationError("--hybrid", "unknown hybrid mode '" + name + "'");
}

struct CommonArgs {
    std::uint64_t seed = 0;
    std::string seps = ".,?!;: \\t\\n";
    std::string out_dir = ".";
    std::string config_path;

    sepkit::SeparatorSet separator_set() const {
        return sepkit::SeparatorSet::from_chars(sepkit::unescape(seps));
    }
    fs::path out() const {
        fs::create_directories(out_dir);
        return out_dir;
    }
};

void add_common(OptionBook& book, CommonArgs& args) {
    book.add("seed", args.seed, "RNG seed");
    book.add("seps", args.seps, "separator characters (escapes \\t \\n \\r \\0 \\\\ recognized)");
    book.add("out", args.out_dir, "output directory");
    book.entries["config"] = {
        book.cmd->add_option("--config", args.config_path, "JSON config file (flags override it)"),
        [](const json&) {}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"separator-aware sparse attention toolkit"};
    app.require_subcommand(1);

    // ---- mask ---------------------------------------------------------------
    struct {
        CommonArgs common;
        std::string text;
        std::string file;
        std::string policy = "sepllm";
        std::size_t a = 4;
        std::size_t n = 64;
        std::size_t delta = 8;
    } mask_args;
    OptionBook mask_book;
    mask_book.cmd = app.add_subcommand("mask", "build a policy mask, export JSON and PBM");
    mask_book.add("text", mask_args.text, "input text (escapes recognized)");
    mask_book.add("file", mask_args.file, "input file (alternative to --text)");
    mask_book.add("policy", mask_args.policy, "full | sepllm | strmllm | fixllm | window");
    mask_book.add("a", mask_args.a, "initial tokens kept");
    mask_book.add("n", mask_args.n, "neighboring window size");
    mask_book.add("delta", mask_args.delta, "fixllm interval");
    add_common(mask_book, mask_args.common);

    // ---- simulate -----------------------------------------------------------
    struct {
        CommonArgs common;
        std::string file;
        std::size_t length = 200000;
        std::size_t sep_period = 5;
        std::size_t jitter = 2;
        std::string policy = "streaming";
        std::size_t a = 4;
        std::size_t s = 32;
        std::size_t w = 224;
        std::size_t c = 324;
        std::size_t n = 256;
    } sim_args;
    OptionBook sim_book;
    sim_book.cmd = app.add_subcommand("simulate", "run a KV retention policy over a token stream");
    sim_book.add("file", sim_args.file, "token source file (default: synthetic stream)");
    sim_book.add("length", sim_args.length, "synthetic stream length");
    sim_book.add("sep-period", sim_args.sep_period, "synthetic separator period");
    sim_book.add("jitter", sim_args.jitter, "synthetic separator jitter");
    sim_book.add("policy", sim_args.policy, "streaming | fundamental | vanilla | ring");
    sim_book.add("a", sim_args.a, "initial cache capacity");
    sim_book.add("s", sim_args.s, "separator cache capacity (streaming)");
    sim_book.add("w", sim_args.w, "local window capacity (streaming)");
    sim_book.add("c", sim_args.c, "total capacity (streaming/ring)");
    sim_book.add("n", sim_args.n, "window size (fundamental)");
    add_common(sim_book, sim_args.common);

    // ---- train ----------------------------------------------------------------
    struct {
        CommonArgs common;
        std::string corpus;
        std::size_t d_model = 64;
        std::size_t heads = 4;
        std::size_t layers = 2;
        std::size_t d_ff = 256;
        std::size_t max_seq = 512;
        std::size_t steps = 500;
        std::size_t batch = 8;
        std::size_t seq_len = 64;
        double lr = 3e-3;
        double clip = 1.0;
        std::string policy = "sepllm";
        std::size_t a = 4;
        std::size_t n = 16;
        std::size_t delta = 8;
        std::string hybrid = "none";
    } train_args;
    OptionBook train_book;
    train_book.cmd = app.add_subcommand("train", "train the toy decoder on a byte corpus");
    train_book.add("corpus", train_args.corpus, "corpus file")->required();
    train_book.add("d-model", train_args.d_model, "model width");
    train_book.add("heads", train_args.heads, "attention heads");
    train_book.add("layers", train_args.layers, "decoder layers");
    train_book.add("d-ff", train_args.d_ff, "feed-forward width");
    train_book.add("max-seq", train_args.max_seq, "maximum sequence length");
    train_book.add("steps", train_args.steps, "training steps");
    train_book.add("batch", train_args.batch, "sequences per step");
    train_book.add("seq-len", train_args.seq_len, "tokens per sequence (targets)");
    train_book.add("lr", train_args.lr, "Adam learning rate");
    train_book.add("clip", train_args.clip, "global gradient-norm clip");
    train_book.add("policy", train_args.policy, "full | sepllm | strmllm | fixllm | window");
    train_book.add("a", train_args.a, "initial tokens kept");
    train_book.add("n", train_args.n, "neighboring window size");
    train_book.add("delta", train_args.delta, "fixllm interval");
    train_book.add("hybrid", train_args.hybrid, "none | h | ht (first/last layers full)");
    add_common(train_book, train_args.common);

    // ---- generate -----------------------------------------------------------
    struct {
        CommonArgs common;
        std::string model;
        std::string prompt;
        std::size_t steps = 64;
        std::string cache = "full";
        std::size_t a = 4;
        std::size_t n = 256;
        std::size_t s = 32;
        std::size_t w = 224;
        std::size_t c = 324;
        std::string trace_path;
    } gen_args;
    OptionBook gen_book;
    gen_book.cmd = app.add_subcommand("generate", "greedy decoding with a cache policy");
    gen_book.add("model", gen_args.model, "model JSON file")->required();
    gen_book.add("prompt", gen_args.prompt, "prompt text (escapes recognized)")->required();
    gen_book.add("steps", gen_args.steps, "tokens to generate");
    gen_book.add("cache", gen_args.cache, "full | fundamental | streaming");
    gen_book.add("a", gen_args.a, "initial capacity");
    gen_book.add("n", gen_args.n, "window size (fundamental)");
    gen_book.add("s", gen_args.s, "separator cache capacity (streaming)");
    gen_book.add("w", gen_args.w, "local window capacity (streaming)");
    gen_book.add("c", gen_args.c, "total capacity (streaming)");
    gen_book.add("trace", gen_args.trace_path, "write the cache trace CSV here");
    add_common(gen_book, gen_args.common);

    // ---- limits -------------------------------------------------------------
    struct {
        CommonArgs common;
        std::size_t a = 4;
        std::size_t s = 32;
        std::size_t w = 224;
        std::size_t c = 324;
    } lim_args;
    OptionBook lim_book;
    lim_book.cmd = app.add_subcommand("limits", "print the closed-form cache limits");
    lim_book.add("a", lim_args.a, "initial cache capacity");
    lim_book.add("s", lim_args.s, "separator cache capacity");
    lim_book.add("w", lim_args.w, "local window capacity");
    lim_book.add("c", lim_args.c, "total capacity");
    add_common(lim_book, lim_args.common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (mask_book.cmd->parsed()) {
            if (!mask_args.common.config_path.empty()) mask_book.apply_config(mask_args.common.config_path);
            const auto seps = mask_args.common.separator_set();
            sepkit::TokenSeq seq;
            if (!mask_args.file.empty()) {
                seq = sepkit::load_corpus(mask_args.file, seps);
            } else {
                seq = sepkit::encode(sepkit::unescape(mask_args.text), seps);
            }
            const sepkit::MaskPolicy policy =
                make_policy(mask_args.policy, mask_args.a, mask_args.n, mask_args.delta);
            policy.validate();
            const sepkit::AttentionMask mask = build_mask(policy, seq);
            const fs::path out = mask_args.common.out();
            write_file(out / "mask.json", mask.to_json());
            write_file(out / "mask.pbm", mask.to_pbm());
            sepkit::MetricsReport report;
            if (mask.size() > 0) report.attention_ratio = sepkit::attention_ratio(mask);
            write_file(out / "mask_metrics.json", report.to_json());
            std::cout << "m " << mask.size() << "\n";
            std::cout << "nnz " << sepkit::nnz_lower(mask) << "\n";
            std::cout << "attention_ratio "
                      << (mask.size() > 0 ? std::to_string(sepkit::attention_ratio(mask)) : "n/a") << "\n";
            return 0;
        }

        if (sim_book.cmd->parsed()) {
            if (!sim_args.common.config_path.empty()) sim_book.apply_config(sim_args.common.config_path);
            const auto seps = sim_args.common.separator_set();

            // validate the policy before reading input or opening outputs
            sepkit::KvPolicy policy = sepkit::VanillaPolicy{};
            sepkit::MetricsReport report;
            if (sim_args.policy == "streaming") {
                const sepkit::CacheConfig cfg{sim_args.a, sim_args.s, sim_args.w, sim_args.c};
                cfg.validate();
                policy = cfg;
                report.theoretical_avg_n = sepkit::theoretical_avg_n(cfg);
                report.theoretical_avg_size = sepkit::theoretical_avg_size(cfg);
            } else if (sim_args.policy == "fundamental") {
                policy = sepkit::FundamentalPolicy{sim_args.a, sim_args.n};
            } else if (sim_args.policy == "ring") {
                policy = sepkit::RingPolicy{sim_args.a, sim_args.c};
            } else if (sim_args.policy != "vanilla") {
                throw CLI::ValidationError("--policy", "unknown policy '" + sim_args.policy + "'");
            }

            sepkit::TokenSeq stream;
            if (!sim_args.file.empty()) {
                stream = sepkit::load_corpus(sim_args.file, seps);
            } else {
                stream = sepkit::synthetic_stream(
                    {sim_args.length, sim_args.sep_period, sim_args.jitter, sim_args.common.seed}, seps);
            }

            const sepkit::TraceResult trace = sepkit::runtime_kv_trace(stream, policy);
            const sepkit::TraceResult vanilla = sepkit::runtime_kv_trace(stream, sepkit::VanillaPolicy{});
            report.rkv_mean = trace.rkv_mean;
            report.rkv_percent_vs_vanilla =
                sepkit::rkv_percent(trace.size_run_series, vanilla.size_run_series);

            const fs::path out = sim_args.common.out();
            sepkit::write_trace_csv(trace.rows, out / "trace.csv");
            write_file(out / "metrics.json", report.to_json());
            std::cout << "steps " << trace.rows.size() << "\n";
            std::cout << "compressions " << trace.compressions << "\n";
            std::cout << "rkv_mean " << trace.rkv_mean << "\n";
            if (report.theoretical_avg_size) {
                std::cout << "theoretical_avg_size " << format_exact(*report.theoretical_avg_size) << "\n";
            }
            std::cout << report.to_json() << "\n";
            return 0;
        }

        if (train_book.cmd->parsed()) {
            if (!train_args.common.config_path.empty())
                train_book.apply_config(train_args.common.config_path);
            const auto seps = train_args.common.separator_set();

            sepkit::ModelConfig mcfg;
            mcfg.vocab = 256;
            mcfg.d_model = train_args.d_model;
            mcfg.n_heads = train_args.heads;
            mcfg.n_layers = train_args.layers;
            mcfg.d_ff = train_args.d_ff;
            mcfg.max_seq = train_args.max_seq;
            mcfg.seed = train_args.common.seed;
            mcfg.validate();

            sepkit::TrainConfig tcfg;
            tcfg.steps = train_args.steps;
            tcfg.batch = train_args.batch;
            tcfg.seq_len = train_args.seq_len;
            tcfg.lr = train_args.lr;
            tcfg.clip = train_args.clip;
            tcfg.seed = train_args.common.seed;
            tcfg.validate();

            const sepkit::MaskPolicy base =
                make_policy(train_args.policy, train_args.a, train_args.n, train_args.delta);
            base.validate();
            const auto layer_policies =
                sepkit::resolve_layers(base, make_hybrid(train_args.hybrid), mcfg.n_layers);

            const sepkit::TokenSeq corpus = sepkit::load_corpus(train_args.corpus, seps);

            sepkit::ModelParams params = sepkit::init_params(mcfg);
            const sepkit::TrainResult result = sepkit::train(params, corpus, tcfg, layer_policies);

            const fs::path out = train_args.common.out();
            sepkit::save_model(params, out / "model.json");
            std::ostringstream csv;
            csv << "step,loss,tokens_seen,flops_cumulative\n";
            csv.precision(17);
            for (const sepkit::LossPoint& p : result.curve) {
                csv << p.step << ',' << p.loss << ',' << p.tokens_seen << ',' << p.flops_cumulative
                    << '\n';
            }
            write_file(out / "loss.csv", csv.str());
            if (!result.curve.empty()) {
                std::cout << "first_loss " << result.curve.front().loss << "\n";
                std::cout << "final_loss " << result.curve.back().loss << "\n";
            }
            std::cout << "model " << (out / "model.json").string() << "\n";
            return 0;
        }

        if (gen_book.cmd->parsed()) {
            if (!gen_args.common.config_path.empty()) gen_book.apply_config(gen_args.common.config_path);
            const auto seps = gen_args.common.separator_set();

            sepkit::GenPolicy policy = sepkit::FullCachePolicy{};
            if (gen_args.cache == "fundamental") {
                policy = sepkit::FundamentalGenPolicy{gen_args.a, gen_args.n};
            } else if (gen_args.cache == "streaming") {
                const sepkit::CacheConfig cfg{gen_args.a, gen_args.s, gen_args.w, gen_args.c};
                cfg.validate();
                policy = cfg;
            } else if (gen_args.cache != "full") {
                throw CLI::ValidationError("--cache", "unknown cache policy '" + gen_args.cache + "'");
            }

            const sepkit::ModelParams params = sepkit::load_model(gen_args.model);
            if (params.config.vocab != 256) {
                throw std::runtime_error("generate: model vocab " + std::to_string(params.config.vocab) +
                                         " does not match the byte tokenizer (256)");
            }
            const sepkit::TokenSeq prompt = sepkit::encode(sepkit::unescape(gen_args.prompt), seps);
            const sepkit::GenerateResult result =
                sepkit::generate(params, prompt, gen_args.steps, policy, seps);
            if (!gen_args.trace_path.empty()) {
                sepkit::write_trace_csv(result.trace, gen_args.trace_path);
            }
            std::cout << sepkit::decode(result.tokens) << "\n";
            return 0;
        }

        if (lim_book.cmd->parsed()) {
            if (!lim_args.common.config_path.empty()) lim_book.apply_config(lim_args.common.config_path);
            const sepkit::CacheConfig cfg{lim_args.a, lim_args.s, lim_args.w, lim_args.c};
            cfg.validate();
            std::cout << "theoretical_avg_n " << format_exact(sepkit::theoretical_avg_n(cfg)) << "\n";
            std::cout << "theoretical_avg_size " << format_exact(sepkit::theoretical_avg_size(cfg))
                      << "\n";
            return 0;
        }
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
