// SPDX-License-Identifier: Apache-2.0
#include "moesched/report.hpp"

#include <cstdio>
#include <fstream>

namespace moesched {

namespace {

std::string format_ratio(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace

nlohmann::json metrics_to_json(const Metrics& m) {
    return {{"stage", m.stage},
            {"tpot", m.tpot},
            {"hit_rate", m.hit_rate},
            {"substitution_ratio", m.substitution_ratio},
            {"demand_loads", m.demand_loads},
            {"prefetch_loads", m.prefetch_loads},
            {"cpu_computed", m.cpu_computed},
            {"hits", m.hits},
            {"misses", m.misses},
            {"substitutions", m.substitutions},
            {"low_score_kept", m.low_score_kept},
            {"selections", m.selections},
            {"iterations", m.iterations},
            {"total_time", m.total_time}};
}

nlohmann::json prefetch_stats_to_json(const PredictorStats& s) {
    return {{"draws", s.draws},
            {"trace_supplied", s.trace_supplied},
            {"head_top", s.head_top},
            {"head_active", s.head_active},
            {"head_inactive", s.head_inactive},
            {"head_accuracy", s.head_accuracy()},
            {"active_rate", s.active_rate()},
            {"issued", s.issued},
            {"cancelled", s.cancelled}};
}

nlohmann::json cache_final_to_json(const std::vector<std::vector<std::uint32_t>>& resident) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& set : resident) {
        layers.push_back(set);
    }
    return {{"resident", layers}};
}

nlohmann::json timeline_to_json(const Timeline& timeline) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const Task& t : timeline.tasks) {
        nlohmann::json rec = {{"resource", to_string(t.resource)},
                              {"kind", to_string(t.kind)},
                              {"start", t.start},
                              {"end", t.end},
                              {"layer", t.layer},
                              {"iteration", t.iteration}};
        if (t.expert) {
            rec["expert"] = {{"layer", t.expert->layer}, {"index", t.expert->index}};
        } else {
            rec["expert"] = nullptr;
        }
        tasks.push_back(std::move(rec));
    }
    return tasks;
}

nlohmann::json build_report(const SimConfig& cfg, const SimOutput& out,
                            const std::string& trace_fingerprint) {
    return {{"config", cfg},
            {"metrics", metrics_to_json(out.metrics)},
            {"prefetch_stats", prefetch_stats_to_json(out.prefetch_stats)},
            {"cache_final", cache_final_to_json(out.cache_final)},
            {"version", kToolVersion},
            {"trace_fingerprint", trace_fingerprint}};
}

nlohmann::json build_multi_report(const SimConfig& cfg, const std::vector<SimOutput>& runs,
                                  const std::string& trace_fingerprint) {
    nlohmann::json entries = nlohmann::json::array();
    for (const SimOutput& run : runs) {
        entries.push_back({{"metrics", metrics_to_json(run.metrics)},
                           {"prefetch_stats", prefetch_stats_to_json(run.prefetch_stats)},
                           {"cache_final", cache_final_to_json(run.cache_final)}});
    }
    nlohmann::json deltas = nlohmann::json::array();
    for (std::size_t i = 1; i < runs.size(); ++i) {
        const double prev = runs[i - 1].metrics.tpot;
        const double cur = runs[i].metrics.tpot;
        deltas.push_back({{"from", runs[i - 1].metrics.stage},
                          {"to", runs[i].metrics.stage},
                          {"tpot_delta_pct", prev == 0.0 ? 0.0 : (cur - prev) / prev * 100.0}});
    }
    return {{"config", cfg},
            {"runs", entries},
            {"tpot_deltas", deltas},
            {"version", kToolVersion},
            {"trace_fingerprint", trace_fingerprint}};
}

std::string ablation_csv(const std::vector<SimOutput>& runs) {
    std::string csv = "stage,tpot,hit_rate,substitution_ratio,demand_loads\n";
    for (const SimOutput& run : runs) {
        const Metrics& m = run.metrics;
        csv += m.stage;
        csv += ',';
        csv += format_ratio(m.tpot);
        csv += ',';
        csv += format_ratio(m.hit_rate);
        csv += ',';
        csv += format_ratio(m.substitution_ratio);
        csv += ',';
        csv += std::to_string(m.demand_loads);
        csv += '\n';
    }
    return csv;
}

std::string sweep_csv(const std::vector<double>& alphas, const std::vector<SimOutput>& runs) {
    std::string csv = "alpha,tpot,hit_rate,substitution_ratio\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const Metrics& m = runs[i].metrics;
        char alpha_buf[32];
        std::snprintf(alpha_buf, sizeof(alpha_buf), "%.4f", alphas[i]);
        csv += alpha_buf;
        csv += ',';
        csv += format_ratio(m.tpot);
        csv += ',';
        csv += format_ratio(m.hit_rate);
        csv += ',';
        csv += format_ratio(m.substitution_ratio);
        csv += '\n';
    }
    return csv;
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open output file: " + path);
    }
    out << contents;
    if (!out) {
        throw IoError("write failure: " + path);
    }
}

} // namespace moesched
