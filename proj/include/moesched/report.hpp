// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "moesched/core.hpp"
#include "moesched/pipeline.hpp"

namespace moesched {

nlohmann::json metrics_to_json(const Metrics& m);
nlohmann::json prefetch_stats_to_json(const PredictorStats& s);
nlohmann::json cache_final_to_json(const std::vector<std::vector<std::uint32_t>>& resident);
nlohmann::json timeline_to_json(const Timeline& timeline);

/// Full single-run report: config echo, metrics, prefetch_stats,
/// cache_final, tool version and trace fingerprint. Serialization is
/// canonical (sorted keys), so equal inputs give byte-equal reports.
nlohmann::json build_report(const SimConfig& cfg, const SimOutput& out,
                            const std::string& trace_fingerprint);

/// Multi-run report (ablation ladder or policy comparison): one metrics
/// entry per run plus pairwise TPOT deltas between consecutive runs.
nlohmann::json build_multi_report(const SimConfig& cfg, const std::vector<SimOutput>& runs,
                                  const std::string& trace_fingerprint);

std::string ablation_csv(const std::vector<SimOutput>& runs);
std::string sweep_csv(const std::vector<double>& alphas, const std::vector<SimOutput>& runs);

void write_text_file(const std::string& path, const std::string& contents);

} // namespace moesched
