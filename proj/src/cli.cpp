// SPDX-License-Identifier: Apache-2.0
#include "moesched/cli.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "moesched/pipeline.hpp"
#include "moesched/report.hpp"
#include "moesched/router.hpp"

namespace moesched {

namespace {

struct TimelineInvariantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

unsigned thread_cap() {
    if (const char* env = std::getenv("MOE_SCHED_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) {
            return static_cast<unsigned>(v);
        }
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

// Runs f(0..n-1) on up to MOE_SCHED_THREADS workers; rethrows the first
// failure. Callers index into preallocated slots, so result order does not
// depend on completion order.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
    const std::size_t workers = std::min<std::size_t>(thread_cap(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            f(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (std::thread& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

void require_valid(const SimConfig& cfg) {
    const ValidationReport report = validate_config(cfg);
    for (const ValidationIssue& w : report.warnings) {
        std::fprintf(stderr, "warning: %s: %s\n", w.field.c_str(), w.rule.c_str());
    }
    if (!report.ok()) {
        std::string msg = "invalid config:";
        for (const ValidationIssue& v : report.violations) {
            msg += "\n  " + v.field + ": " + v.rule;
        }
        throw ConfigError(msg);
    }
}

void check_timeline(const Timeline& timeline) {
    const std::vector<std::string> violations = verify_timeline(timeline);
    if (!violations.empty()) {
        std::string msg = "timeline invariant violations:";
        for (const std::string& v : violations) {
            msg += "\n  " + v;
        }
        throw TimelineInvariantError(msg);
    }
}

std::string dump_canonical(const nlohmann::json& j) {
    return j.dump(2) + "\n";
}

} // namespace

SimConfig resolve_config(const GateTrace& trace, const std::string& config_path,
                         const ConfigOverrides& o) {
    SimConfig cfg;
    if (!config_path.empty()) {
        cfg = load_config(config_path);
        if (!(cfg.shape == trace.shape)) {
            throw ConfigError("config shape does not match trace header");
        }
    } else {
        cfg.shape = trace.shape;
    }
    if (o.alpha) cfg.router.alpha = *o.alpha;
    if (o.slots) cfg.cache.slots_per_layer = *o.slots;
    if (o.history) cfg.cache.history_window = *o.history;
    if (o.seed) cfg.seed = *o.seed;
    if (o.stages) cfg.stages = parse_stages(*o.stages);
    if (o.policy) cfg.cache.policy = cache_policy_from_string(*o.policy);
    if (o.init_fill) cfg.cache.init_fill = init_fill_from_string(*o.init_fill);
    if (o.t_attn) cfg.cost.t_attn = *o.t_attn;
    if (o.t_gpu) cfg.cost.t_gpu = *o.t_gpu;
    if (o.t_cpu_token) cfg.cost.t_cpu_token = *o.t_cpu_token;
    if (o.t_load) cfg.cost.t_load = *o.t_load;
    if (o.t_route) cfg.cost.t_route = *o.t_route;
    if (o.p_top) cfg.predictor.p_top = *o.p_top;
    if (o.p_active) cfg.predictor.p_active = *o.p_active;
    if (o.queue_depth) cfg.predictor.queue_depth = *o.queue_depth;
    require_valid(cfg);
    return cfg;
}

void cmd_gen_trace(const GenTraceOptions& opts) {
    SimConfig check;
    check.shape = opts.shape;
    require_valid(check);
    if (!(opts.profile.hot_fraction > 0.0 && opts.profile.hot_fraction <= 1.0)) {
        throw ConfigError("profile.hot_fraction must be in (0, 1]");
    }
    if (!(opts.profile.hot_mass > 0.0 && opts.profile.hot_mass <= 1.0)) {
        throw ConfigError("profile.hot_mass must be in (0, 1]");
    }
    if (!(opts.profile.persistence >= 0.0 && opts.profile.persistence <= 1.0)) {
        throw ConfigError("profile.persistence must be in [0, 1]");
    }

    const GateTrace trace = generate_trace(opts.shape, opts.profile, opts.iterations, opts.seed);
    save_trace(trace, opts.output);

    // Skew summary: how concentrated the generated gate really is.
    double top1 = 0.0;
    double above_band = 0.0;
    std::uint64_t samples = 0;
    for (const TraceIteration& iter : trace.iterations) {
        for (const auto& layer : iter.scores) {
            for (const auto& vec : layer) {
                const Classification cls = classify(vec, opts.shape.top_k, 0.25);
                top1 += vec[cls.actives.front()];
                above_band += static_cast<double>(cls.top_score.size());
                ++samples;
            }
        }
    }
    std::printf("wrote %s: %llu iterations, %u layers, %u tokens/iteration\n",
                opts.output.c_str(),
                static_cast<unsigned long long>(trace.iterations.size()),
                opts.shape.num_layers, opts.shape.batch_size);
    if (samples > 0) {
        std::printf("skew: mean top-1 score %.4f, mean actives above 1.25*beta %.2f of k=%u\n",
                    top1 / static_cast<double>(samples),
                    above_band / static_cast<double>(samples), opts.shape.top_k);
    }
    std::printf("fingerprint: %s\n", fingerprint_file(opts.output).c_str());
}

void cmd_run(const RunOptions& opts) {
    const GateTrace trace = load_trace(opts.trace_path);
    const SimConfig cfg = resolve_config(trace, opts.config_path, opts.overrides);
    const SimOutput out = simulate(trace, cfg);
    check_timeline(out.timeline);

    const nlohmann::json report =
        build_report(cfg, out, fingerprint_file(opts.trace_path));
    write_text_file(opts.report_path, dump_canonical(report));
    if (!opts.timeline_path.empty()) {
        write_text_file(opts.timeline_path, dump_canonical(timeline_to_json(out.timeline)));
    }
    std::printf("stage=%s tpot=%.3f hit_rate=%.4f substitution_ratio=%.4f\n",
                out.metrics.stage.c_str(), out.metrics.tpot, out.metrics.hit_rate,
                out.metrics.substitution_ratio);
}

void cmd_ablate(const AblateOptions& opts) {
    const GateTrace trace = load_trace(opts.trace_path);
    const SimConfig cfg = resolve_config(trace, opts.config_path, opts.overrides);
    const std::vector<SimOutput> runs = run_ablation(trace, cfg);
    for (const SimOutput& run : runs) {
        check_timeline(run.timeline);
    }
    const nlohmann::json report =
        build_multi_report(cfg, runs, fingerprint_file(opts.trace_path));
    write_text_file(opts.output_prefix + ".json", dump_canonical(report));
    const std::string csv = ablation_csv(runs);
    write_text_file(opts.output_prefix + ".csv", csv);
    std::fputs(csv.c_str(), stdout);
}

void cmd_sweep_alpha(const SweepOptions& opts) {
    if (opts.alpha_step <= 0.0) {
        throw ConfigError("sweep: alpha step must be positive");
    }
    std::vector<double> alphas;
    for (double a = opts.alpha_min; a <= opts.alpha_max + 1e-9; a += opts.alpha_step) {
        alphas.push_back(a);
    }
    for (double a : alphas) {
        if (!(a >= 0.0 && a < 1.0)) {
            throw ConfigError("sweep: every alpha must be in [0, 1)");
        }
    }

    const GateTrace trace = load_trace(opts.trace_path);
    const SimConfig base = resolve_config(trace, opts.config_path, opts.overrides);

    std::vector<SimOutput> runs(alphas.size());
    parallel_for(alphas.size(), [&](std::size_t i) {
        SimConfig cfg = base;
        cfg.router.alpha = alphas[i];
        runs[i] = simulate(trace, cfg);
    });
    for (const SimOutput& run : runs) {
        check_timeline(run.timeline);
    }

    const std::string csv = sweep_csv(alphas, runs);
    write_text_file(opts.output_prefix + ".csv", csv);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        rows.push_back({{"alpha", alphas[i]}, {"metrics", metrics_to_json(runs[i].metrics)}});
    }
    const nlohmann::json report = {{"config", base},
                                   {"sweep", rows},
                                   {"version", kToolVersion},
                                   {"trace_fingerprint", fingerprint_file(opts.trace_path)}};
    write_text_file(opts.output_prefix + ".json", dump_canonical(report));
    std::fputs(csv.c_str(), stdout);
}

void cmd_compare(const CompareOptions& opts) {
    const GateTrace trace = load_trace(opts.trace_path);
    const SimConfig base = resolve_config(trace, opts.config_path, opts.overrides);

    SimConfig score_cfg = base;
    score_cfg.cache.policy = CachePolicy::ScoreWindow;
    SimConfig lru_cfg = base;
    lru_cfg.cache.policy = CachePolicy::LRU;

    std::vector<SimOutput> runs;
    runs.push_back(simulate(trace, score_cfg));
    runs.push_back(simulate(trace, lru_cfg));
    for (const SimOutput& run : runs) {
        check_timeline(run.timeline);
    }

    std::string csv = "policy,tpot,hit_rate,substitution_ratio,demand_loads\n";
    const char* names[] = {"score_window", "lru"};
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const Metrics& m = runs[i].metrics;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%llu\n", names[i], m.tpot,
                      m.hit_rate, m.substitution_ratio,
                      static_cast<unsigned long long>(m.demand_loads));
        csv += buf;
    }
    write_text_file(opts.output_prefix + ".csv", csv);

    const std::string fp = fingerprint_file(opts.trace_path);
    const nlohmann::json report = {
        {"config", base},
        {"policies",
         {{"score_window", build_report(score_cfg, runs[0], fp)},
          {"lru", build_report(lru_cfg, runs[1], fp)}}},
        {"version", kToolVersion},
        {"trace_fingerprint", fp}};
    write_text_file(opts.output_prefix + ".json", dump_canonical(report));
    std::fputs(csv.c_str(), stdout);
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Trace-driven simulator for importance-driven MoE expert scheduling"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    GenTraceOptions gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-trace", "Generate a synthetic gate-score trace");
    gen_cmd->add_option("--layers", gen.shape.num_layers, "Number of MoE layers")->required();
    gen_cmd->add_option("--experts", gen.shape.experts_per_layer, "Experts per layer")
        ->required();
    gen_cmd->add_option("--k", gen.shape.top_k, "Active experts per token")->required();
    gen_cmd->add_option("--batch", gen.shape.batch_size, "Tokens decoded per iteration");
    gen_cmd->add_option("--iters", gen.iterations, "Decode iterations")->required();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed");
    gen_cmd->add_option("--hot-fraction", gen.profile.hot_fraction, "Hot expert share");
    gen_cmd->add_option("--hot-mass", gen.profile.hot_mass, "Score mass on the hot set");
    gen_cmd->add_option("--persistence", gen.profile.persistence, "Hot set persistence");
    gen_cmd->add_option("--concentration", gen.profile.concentration, "Within-hot skew");
    gen_cmd->add_option("-o,--output", gen.output, "Trace file (JSONL)")->required();

    auto add_override_flags = [](CLI::App* cmd, ConfigOverrides& o) {
        cmd->add_option("--alpha", o.alpha, "Substitution band width");
        cmd->add_option("--slots", o.slots, "Cache slots per layer");
        cmd->add_option("--history", o.history, "Score history window");
        cmd->add_option("--seed", o.seed, "Simulation seed");
        cmd->add_option("--stages", o.stages, "Enabled stages, e.g. ce,er,pre,ba or none");
        cmd->add_option("--policy", o.policy, "Cache policy: score or lru");
        cmd->add_option("--init-fill", o.init_fill, "Initial residency: first_slots or seeded_random");
        cmd->add_option("--t-attn", o.t_attn, "Attention+gate time per layer");
        cmd->add_option("--t-gpu", o.t_gpu, "GPU time per expert");
        cmd->add_option("--t-cpu-token", o.t_cpu_token, "CPU time per token per expert");
        cmd->add_option("--t-load", o.t_load, "PCIe time per expert");
        cmd->add_option("--t-route", o.t_route, "Router+balancer CPU time");
        cmd->add_option("--p-top", o.p_top, "Predictor head top-score probability");
        cmd->add_option("--p-active", o.p_active, "Predictor head active probability");
        cmd->add_option("--queue-depth", o.queue_depth, "Prefetch queue depth (0 = top_k)");
    };

    RunOptions run;
    CLI::App* run_cmd = app.add_subcommand("run", "Simulate one configuration");
    run_cmd->add_option("--trace", run.trace_path, "Input trace (JSONL)")->required();
    run_cmd->add_option("--config", run.config_path, "Config JSON (defaults otherwise)");
    run_cmd->add_option("-o,--report", run.report_path, "Report JSON path")->required();
    run_cmd->add_option("--timeline", run.timeline_path, "Also dump the task timeline JSON");
    add_override_flags(run_cmd, run.overrides);

    AblateOptions ablate;
    CLI::App* ablate_cmd =
        app.add_subcommand("ablate", "Stage ladder: baseline, +CE, +ER, +Pre, +BA");
    ablate_cmd->add_option("--trace", ablate.trace_path, "Input trace (JSONL)")->required();
    ablate_cmd->add_option("--config", ablate.config_path, "Config JSON");
    ablate_cmd->add_option("-o,--out", ablate.output_prefix, "Output prefix (.json/.csv)")
        ->required();
    add_override_flags(ablate_cmd, ablate.overrides);

    SweepOptions sweep;
    CLI::App* sweep_cmd = app.add_subcommand("sweep-alpha", "Sweep the alpha grid");
    sweep_cmd->add_option("--trace", sweep.trace_path, "Input trace (JSONL)")->required();
    sweep_cmd->add_option("--config", sweep.config_path, "Config JSON");
    sweep_cmd->add_option("--alpha-min", sweep.alpha_min, "Grid start");
    sweep_cmd->add_option("--alpha-max", sweep.alpha_max, "Grid end (inclusive)");
    sweep_cmd->add_option("--alpha-step", sweep.alpha_step, "Grid step");
    sweep_cmd->add_option("-o,--out", sweep.output_prefix, "Output prefix (.json/.csv)")
        ->required();
    add_override_flags(sweep_cmd, sweep.overrides);

    CompareOptions compare;
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "Same trace under score-window vs LRU eviction");
    compare_cmd->add_option("--trace", compare.trace_path, "Input trace (JSONL)")->required();
    compare_cmd->add_option("--config", compare.config_path, "Config JSON");
    compare_cmd->add_option("-o,--out", compare.output_prefix, "Output prefix (.json/.csv)")
        ->required();
    add_override_flags(compare_cmd, compare.overrides);

    try {
        app.parse(argc, argv);
        if (gen_cmd->parsed()) cmd_gen_trace(gen);
        if (run_cmd->parsed()) cmd_run(run);
        if (ablate_cmd->parsed()) cmd_ablate(ablate);
        if (sweep_cmd->parsed()) cmd_sweep_alpha(sweep);
        if (compare_cmd->parsed()) cmd_compare(compare);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const TimelineInvariantError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}

} // namespace moesched
