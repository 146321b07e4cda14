// SPDX-License-Identifier: Apache-2.0
#include "moesched/pipeline.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <utility>

#include "moesched/balancer.hpp"
#include "moesched/router.hpp"
#include "moesched/rng.hpp"

namespace moesched {

const char* to_string(Resource r) {
    switch (r) {
        case Resource::GPU: return "GPU";
        case Resource::CPU: return "CPU";
        case Resource::PCIE: return "PCIE";
    }
    return "?";
}

const char* to_string(TaskKind k) {
    switch (k) {
        case TaskKind::Attn: return "Attn";
        case TaskKind::Route: return "Route";
        case TaskKind::ResidentExpert: return "ResidentExpert";
        case TaskKind::LoadedExpert: return "LoadedExpert";
        case TaskKind::CpuExpert: return "CpuExpert";
        case TaskKind::DemandLoad: return "DemandLoad";
        case TaskKind::PrefetchLoad: return "PrefetchLoad";
    }
    return "?";
}

namespace {

struct Simulator {
    const GateTrace& trace;
    const SimConfig& cfg;
    CacheState cache;
    Rng predictor_rng;

    Timeline timeline;
    Metrics metrics;
    PredictorStats stats;

    TimeUnits gpu_free = 0;
    TimeUnits cpu_free = 0;
    TimeUnits pcie_free = 0;

    std::optional<PrefetchQueue> prefetch_queue;
    // Admissions blocked because every resident was shielded; retried at
    // the executing layer's completion, right after the shields drop.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> deferred_admissions;

    Simulator(const GateTrace& t, const SimConfig& c)
        : trace(t),
          cfg(c),
          cache(c.shape, effective_cache_config(c), c.seed),
          predictor_rng(derive_seed(c.seed, 0x94ed1c70ULL)) {}

    static CacheConfig effective_cache_config(const SimConfig& c) {
        CacheConfig cc = c.cache;
        if (!c.stages.ce) {
            cc.policy = CachePolicy::LRU;
        }
        return cc;
    }

    void push_task(Resource res, TaskKind kind, std::optional<ExpertId> expert, TimeUnits start,
                   TimeUnits end, std::uint32_t layer, std::uint64_t iteration) {
        timeline.tasks.push_back({res, kind, expert, start, end, layer, iteration});
    }

    // Aggregate per-expert score over the iteration's tokens (mean), the
    // vector recorded into the eviction history window.
    std::vector<double> mean_scores(std::uint64_t it, std::uint32_t layer) const {
        const auto& per_token = trace.iterations[it].scores[layer];
        std::vector<double> mean(cfg.shape.experts_per_layer, 0.0);
        for (const auto& vec : per_token) {
            for (std::size_t e = 0; e < vec.size(); ++e) {
                mean[e] += vec[e];
            }
        }
        for (double& v : mean) {
            v /= static_cast<double>(per_token.size());
        }
        return mean;
    }

    void admit_or_defer(std::uint32_t layer, std::uint32_t expert, TimeUnits now, bool shield_it) {
        if (cache.is_resident(layer, expert)) {
            return;
        }
        try {
            auto evicted = cache.admit(layer, expert, now);
            if (evicted) {
                timeline.evictions.push_back({now, layer, *evicted});
            }
            if (shield_it) {
                cache.shield(layer, expert);
            }
        } catch (const CacheError&) {
            deferred_admissions.emplace_back(layer, expert);
        }
    }

    SimOutput run() {
        const ModelShape& shape = cfg.shape;
        TimeUnits now = 0;
        for (std::uint64_t it = 0; it < trace.iterations.size(); ++it) {
            for (std::uint32_t layer = 0; layer < shape.num_layers; ++layer) {
                now = run_layer(it, layer, now);
            }
            timeline.iteration_completion.push_back(now);
        }
        finish(now);
        SimOutput out;
        out.timeline = std::move(timeline);
        out.metrics = metrics;
        out.prefetch_stats = stats;
        out.cache_final = cache.snapshot();
        return out;
    }

    TimeUnits run_layer(std::uint64_t it, std::uint32_t layer, TimeUnits start) {
        const ModelShape& shape = cfg.shape;
        const auto& batch_scores = trace.iterations[it].scores[layer];

        // Attention + gate. Its end is the gate event for this layer.
        const TimeUnits attn_end = start + cfg.cost.t_attn;
        push_task(Resource::GPU, TaskKind::Attn, std::nullopt, start, attn_end, layer, it);
        gpu_free = attn_end;

        // Real scores are out; speculative entries for this layer die.
        if (prefetch_queue && prefetch_queue->target_layer == layer &&
            prefetch_queue->target_iteration == it) {
            stats.cancelled += std::count_if(
                prefetch_queue->entries.begin(), prefetch_queue->entries.end(),
                [](const PrefetchEntry& e) { return !e.issued; });
            clear_on_gate(*prefetch_queue, layer);
            prefetch_queue.reset();
        }

        // Routing (and balancing) on CPU.
        const TimeUnits route_start = std::max(attn_end, cpu_free);
        const TimeUnits route_end = route_start + cfg.cost.t_route;
        push_task(Resource::CPU, TaskKind::Route, std::nullopt, route_start, route_end, layer,
                  it);
        cpu_free = route_end;

        const auto mask_span = cache.resident_mask(layer);
        const std::vector<std::uint8_t> mask(mask_span.begin(), mask_span.end());

        std::vector<std::vector<std::uint32_t>> selected_per_token;
        std::uint64_t substitutions = 0;
        std::uint64_t kept_low = 0;
        if (cfg.stages.er) {
            RouteResult routed = route(batch_scores, mask, shape.top_k, cfg.router.alpha);
            routed = coalesce_for_batching(routed, batch_scores, mask);
            for (const TokenRoute& tok : routed.tokens) {
                selected_per_token.push_back(tok.selected);
            }
            substitutions = routed.substitution_count();
            kept_low = routed.kept_low_count();
        } else {
            for (const auto& scores : batch_scores) {
                selected_per_token.push_back(plain_top_k(scores, shape.top_k));
            }
        }
        metrics.substitutions += substitutions;
        metrics.low_score_kept += kept_low;

        // Hit accounting against the residency snapshot the router saw,
        // plus the per-expert batch sizes for the demand set.
        std::map<std::uint32_t, std::uint32_t> batch_of; // distinct selected -> token count
        for (const auto& selected : selected_per_token) {
            for (std::uint32_t e : selected) {
                ++metrics.selections;
                if (mask[e]) {
                    ++metrics.hits;
                } else {
                    ++metrics.misses;
                }
                ++batch_of[e];
            }
        }

        cache.record_scores(layer, mean_scores(it, layer));

        std::vector<std::uint32_t> distinct_selected;
        std::vector<std::uint32_t> resident_selected;
        BalanceInput demand{{}, cfg.cost.t_cpu_token, cfg.cost.t_load};
        for (const auto& [expert, tokens] : batch_of) {
            distinct_selected.push_back(expert);
            if (mask[expert]) {
                resident_selected.push_back(expert);
                cache.shield(layer, expert);
                cache.touch(layer, expert, route_end);
            } else {
                demand.items.push_back({expert, tokens});
            }
        }

        BalanceResult split;
        if (cfg.stages.ba) {
            split = balance(demand);
        } else {
            for (const BalanceItem& item : demand.items) {
                split.load_list.push_back(item.uid);
            }
            split.c_load = static_cast<TimeUnits>(split.load_list.size()) * cfg.cost.t_load;
        }

        // CPU expert compute, serial after routing.
        TimeUnits cpu_t = std::max(route_end, cpu_free);
        for (std::uint32_t e : split.cpu_list) {
            const TimeUnits dur =
                static_cast<TimeUnits>(batch_of[e]) * cfg.cost.t_cpu_token;
            push_task(Resource::CPU, TaskKind::CpuExpert, ExpertId{layer, e}, cpu_t,
                      cpu_t + dur, layer, it);
            cpu_t += dur;
            ++metrics.cpu_computed;
        }
        cpu_free = cpu_t;

        // Demand loads, serial on PCIe; each feeds a GPU compute slot.
        std::vector<TimeUnits> load_ready;
        TimeUnits pcie_t = std::max(route_end, pcie_free);
        for (std::uint32_t e : split.load_list) {
            push_task(Resource::PCIE, TaskKind::DemandLoad, ExpertId{layer, e}, pcie_t,
                      pcie_t + cfg.cost.t_load, layer, it);
            pcie_t += cfg.cost.t_load;
            admit_or_defer(layer, e, pcie_t, /*shield_it=*/true);
            load_ready.push_back(pcie_t);
            ++metrics.demand_loads;
        }
        pcie_free = pcie_t;

        // GPU expert compute: residents first (ready at route_end), then
        // each loaded expert as its transfer completes.
        TimeUnits gpu_t = std::max(gpu_free, route_end);
        TimeUnits resident_done = std::max(attn_end, route_end);
        for (std::uint32_t e : resident_selected) {
            push_task(Resource::GPU, TaskKind::ResidentExpert, ExpertId{layer, e}, gpu_t,
                      gpu_t + cfg.cost.t_gpu, layer, it);
            gpu_t += cfg.cost.t_gpu;
        }
        if (!resident_selected.empty()) {
            resident_done = gpu_t;
        }
        for (std::size_t i = 0; i < split.load_list.size(); ++i) {
            const TimeUnits s = std::max(gpu_t, load_ready[i]);
            push_task(Resource::GPU, TaskKind::LoadedExpert,
                      ExpertId{layer, split.load_list[i]}, s, s + cfg.cost.t_gpu, layer, it);
            gpu_t = s + cfg.cost.t_gpu;
        }
        gpu_free = gpu_t;

        TimeUnits completion = std::max({attn_end, route_end, cpu_free});
        if (!resident_selected.empty() || !split.load_list.empty()) {
            completion = std::max(completion, gpu_t);
        }

        LayerWindow window;
        window.iteration = it;
        window.layer = layer;
        window.attn_end = attn_end;
        window.route_end = route_end;
        window.completion = completion;
        window.selected = distinct_selected;
        timeline.windows.push_back(window);

        cache.unshield_layer(layer);
        const auto deferred = std::exchange(deferred_admissions, {});
        for (const auto& [pool, expert] : deferred) {
            admit_or_defer(pool, expert, completion, /*shield_it=*/false);
        }

        if (cfg.stages.pre) {
            schedule_prefetch(it, layer, resident_done, completion);
        }
        return completion;
    }

    // Speculative loading for the next layer (wrapping into the next
    // iteration after the last layer). Transfers are issued only when no
    // demand load is waiting (all of this layer's demands are already on
    // the PCIe schedule) and only if they finish by the target layer's
    // gate, so they can never push back a demand load.
    void schedule_prefetch(std::uint64_t it, std::uint32_t layer, TimeUnits resident_done,
                           TimeUnits completion) {
        std::uint64_t target_it = it;
        std::uint32_t target_layer = layer + 1;
        if (target_layer == cfg.shape.num_layers) {
            target_layer = 0;
            ++target_it;
        }
        if (target_it >= trace.iterations.size()) {
            return;
        }
        const TimeUnits target_gate = completion + cfg.cost.t_attn;

        // Predict per token, then merge by per-expert max: the queue wants
        // anything any token is likely to need.
        const auto& true_scores = trace.iterations[target_it].scores[target_layer];
        const auto& supplied = trace.iterations[target_it].predicted[target_layer];
        std::vector<double> merged(cfg.shape.experts_per_layer, 0.0);
        for (std::uint32_t tok = 0; tok < cfg.shape.batch_size; ++tok) {
            PredictOutcome pred =
                predict_scores(true_scores[tok], supplied[tok], cfg.predictor,
                               cfg.shape.top_k, cfg.router.alpha, predictor_rng);
            stats.count_head(pred.head_kind, pred.from_trace);
            for (std::size_t e = 0; e < merged.size(); ++e) {
                merged[e] = std::max(merged[e], pred.scores[e]);
            }
        }

        PrefetchQueue queue =
            build_queue(merged, cache.resident_mask(target_layer),
                        cfg.effective_queue_depth(), target_layer, target_it);

        TimeUnits t = std::max(pcie_free, resident_done);
        for (PrefetchEntry& entry : queue.entries) {
            if (t + cfg.cost.t_load > target_gate) {
                break;
            }
            if (cache.is_resident(target_layer, entry.expert)) {
                continue;
            }
            push_task(Resource::PCIE, TaskKind::PrefetchLoad,
                      ExpertId{target_layer, entry.expert}, t, t + cfg.cost.t_load,
                      target_layer, target_it);
            t += cfg.cost.t_load;
            entry.issued = true;
            ++stats.issued;
            ++metrics.prefetch_loads;
            admit_or_defer(target_layer, entry.expert, t, /*shield_it=*/false);
        }
        pcie_free = std::max(pcie_free, t);
        prefetch_queue = std::move(queue);
    }

    void finish(TimeUnits total) {
        metrics.stage = cfg.stages.label();
        metrics.iterations = trace.iterations.size();
        metrics.total_time = total;
        metrics.tpot = metrics.iterations == 0
                           ? 0.0
                           : static_cast<double>(total) / static_cast<double>(metrics.iterations);
        metrics.hit_rate = metrics.selections == 0
                               ? 0.0
                               : static_cast<double>(metrics.hits) /
                                     static_cast<double>(metrics.selections);
        const std::uint64_t sub_total = metrics.substitutions + metrics.low_score_kept;
        metrics.substitution_ratio =
            sub_total == 0 ? 0.0
                           : static_cast<double>(metrics.substitutions) /
                                 static_cast<double>(sub_total);
        std::sort(timeline.tasks.begin(), timeline.tasks.end(),
                  [](const Task& a, const Task& b) {
                      if (a.start != b.start) return a.start < b.start;
                      if (a.resource != b.resource) return a.resource < b.resource;
                      if (a.end != b.end) return a.end < b.end;
                      return a.layer < b.layer;
                  });
    }
};

} // namespace

SimOutput simulate(const GateTrace& trace, const SimConfig& cfg) {
    const ValidationReport report = validate_config(cfg);
    if (!report.ok()) {
        throw ConfigError("invalid config: " + report.violations.front().field + ": " +
                          report.violations.front().rule);
    }
    if (!(trace.shape == cfg.shape)) {
        throw ConfigError("trace shape does not match config shape");
    }
    Simulator sim(trace, cfg);
    return sim.run();
}

std::vector<SimOutput> run_ablation(const GateTrace& trace, const SimConfig& base) {
    static const StageSet kLadder[] = {
        {false, false, false, false},
        {true, false, false, false},
        {true, true, false, false},
        {true, true, true, false},
        {true, true, true, true},
    };
    std::vector<SimOutput> runs;
    runs.reserve(std::size(kLadder));
    for (const StageSet& stages : kLadder) {
        SimConfig cfg = base;
        cfg.stages = stages;
        runs.push_back(simulate(trace, cfg));
    }
    return runs;
}

std::vector<std::string> verify_timeline(const Timeline& timeline) {
    std::vector<std::string> violations;
    auto report = [&violations](const std::string& msg) { violations.push_back(msg); };

    // Resource exclusivity and basic task sanity.
    for (int r = 0; r < 3; ++r) {
        const auto res = static_cast<Resource>(r);
        std::vector<const Task*> tasks;
        for (const Task& t : timeline.tasks) {
            if (t.resource == res) {
                tasks.push_back(&t);
            }
        }
        std::sort(tasks.begin(), tasks.end(), [](const Task* a, const Task* b) {
            if (a->start != b->start) return a->start < b->start;
            return a->end < b->end;
        });
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            if (tasks[i]->end < tasks[i]->start) {
                std::ostringstream msg;
                msg << to_string(res) << " task ends before it starts at t="
                    << tasks[i]->start;
                report(msg.str());
            }
            if (i > 0 && tasks[i]->start < tasks[i - 1]->end) {
                std::ostringstream msg;
                msg << to_string(res) << " tasks overlap: [" << tasks[i - 1]->start << ", "
                    << tasks[i - 1]->end << ") and [" << tasks[i]->start << ", "
                    << tasks[i]->end << ")";
                report(msg.str());
            }
        }
    }

    // Kind/resource agreement.
    for (const Task& t : timeline.tasks) {
        Resource want = Resource::GPU;
        switch (t.kind) {
            case TaskKind::Attn:
            case TaskKind::ResidentExpert:
            case TaskKind::LoadedExpert: want = Resource::GPU; break;
            case TaskKind::Route:
            case TaskKind::CpuExpert: want = Resource::CPU; break;
            case TaskKind::DemandLoad:
            case TaskKind::PrefetchLoad: want = Resource::PCIE; break;
        }
        if (t.resource != want) {
            std::ostringstream msg;
            msg << to_string(t.kind) << " scheduled on " << to_string(t.resource);
            report(msg.str());
        }
    }

    // Every loaded-expert compute starts at or after its demand load ends.
    for (const Task& t : timeline.tasks) {
        if (t.kind != TaskKind::LoadedExpert || !t.expert) {
            continue;
        }
        bool found = false;
        for (const Task& load : timeline.tasks) {
            if (load.kind == TaskKind::DemandLoad && load.iteration == t.iteration &&
                load.layer == t.layer && load.expert == t.expert) {
                found = true;
                if (load.end > t.start) {
                    std::ostringstream msg;
                    msg << "LoadedExpert (" << t.expert->layer << "," << t.expert->index
                        << ") starts at " << t.start << " before its load ends at "
                        << load.end;
                    report(msg.str());
                }
                break;
            }
        }
        if (!found) {
            std::ostringstream msg;
            msg << "LoadedExpert (" << t.expert->layer << "," << t.expert->index
                << ") has no matching DemandLoad";
            report(msg.str());
        }
    }

    // Shield discipline: no selected expert may leave its layer's pool
    // while that layer is executing.
    for (const LayerWindow& w : timeline.windows) {
        for (const EvictionEvent& ev : timeline.evictions) {
            if (ev.layer != w.layer || ev.time < w.route_end || ev.time >= w.completion) {
                continue;
            }
            if (std::binary_search(w.selected.begin(), w.selected.end(), ev.expert)) {
                std::ostringstream msg;
                msg << "expert (" << w.layer << "," << ev.expert
                    << ") evicted at t=" << ev.time << " while selected in iteration "
                    << w.iteration;
                report(msg.str());
            }
        }
    }

    // Prefetch priority: a waiting demand load is never stuck behind a
    // prefetch transfer dispatched after the demand became ready.
    for (const Task& d : timeline.tasks) {
        if (d.kind != TaskKind::DemandLoad) {
            continue;
        }
        TimeUnits ready = d.start;
        for (const LayerWindow& w : timeline.windows) {
            if (w.iteration == d.iteration && w.layer == d.layer) {
                ready = w.route_end;
                break;
            }
        }
        if (d.start <= ready) {
            continue;
        }
        for (const Task& p : timeline.tasks) {
            if (p.kind == TaskKind::PrefetchLoad && p.start >= ready && p.start < d.start &&
                p.end > ready) {
                std::ostringstream msg;
                msg << "DemandLoad at t=" << d.start << " (ready " << ready
                    << ") waited behind PrefetchLoad dispatched at t=" << p.start;
                report(msg.str());
            }
        }
    }

    return violations;
}

} // namespace moesched
