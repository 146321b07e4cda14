// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moesched/cache.hpp"
#include "moesched/core.hpp"
#include "moesched/prefetch.hpp"
#include "moesched/trace.hpp"

namespace moesched {

enum class Resource : std::uint8_t { GPU, CPU, PCIE };
enum class TaskKind : std::uint8_t {
    Attn,
    Route,
    ResidentExpert,
    LoadedExpert,
    CpuExpert,
    DemandLoad,
    PrefetchLoad,
};

const char* to_string(Resource r);
const char* to_string(TaskKind k);

struct Task {
    Resource resource = Resource::GPU;
    TaskKind kind = TaskKind::Attn;
    std::optional<ExpertId> expert;
    TimeUnits start = 0;
    TimeUnits end = 0;
    std::uint32_t layer = 0;
    std::uint64_t iteration = 0;
};

/// Executing window of one (iteration, layer), kept for auditing.
struct LayerWindow {
    std::uint64_t iteration = 0;
    std::uint32_t layer = 0;
    TimeUnits attn_end = 0;
    TimeUnits route_end = 0;   // demand loads become ready here
    TimeUnits completion = 0;  // shields revoked here
    std::vector<std::uint32_t> selected; // distinct experts, sorted
};

struct EvictionEvent {
    TimeUnits time = 0;
    std::uint32_t layer = 0;   // slot pool the victim left
    std::uint32_t expert = 0;
};

struct Timeline {
    std::vector<Task> tasks; // time-ordered
    std::vector<TimeUnits> iteration_completion;
    std::vector<LayerWindow> windows;
    std::vector<EvictionEvent> evictions;
};

struct Metrics {
    std::string stage;
    double tpot = 0.0;
    double hit_rate = 0.0;
    double substitution_ratio = 0.0;
    std::uint64_t demand_loads = 0;
    std::uint64_t prefetch_loads = 0;
    std::uint64_t cpu_computed = 0;
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t substitutions = 0;
    std::uint64_t low_score_kept = 0;
    std::uint64_t selections = 0;
    std::uint64_t iterations = 0;
    TimeUnits total_time = 0;
};

struct SimOutput {
    Timeline timeline;
    Metrics metrics;
    PredictorStats prefetch_stats;
    std::vector<std::vector<std::uint32_t>> cache_final; // resident sets per layer
};

/// Runs the decode loop over three serial resources (GPU, CPU, PCIe).
///
/// Per (iteration, layer): attention+gate on GPU, whose end clears the
/// layer's prefetch queue; routing (and balancing) on CPU; resident
/// experts on GPU; the demand split across CPU compute and PCIe loads with
/// a GPU slot after every load; speculative prefetch for the next layer in
/// leftover PCIe time, admitted only when the transfer provably completes
/// before the target gate so demand traffic is never delayed. Cache
/// admissions evict by score window (CE) or LRU, with selected experts
/// shielded until the layer completes.
SimOutput simulate(const GateTrace& trace, const SimConfig& cfg);

/// Stepwise stage ladder (baseline, +CE, +ER, +Pre, +BA) on one trace.
std::vector<SimOutput> run_ablation(const GateTrace& trace, const SimConfig& base);

/// Audits a timeline: per-resource exclusivity, loaded-compute-after-load,
/// shield discipline, and prefetch priority. Empty result means valid.
std::vector<std::string> verify_timeline(const Timeline& timeline);

} // namespace moesched
