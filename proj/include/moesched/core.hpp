// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace moesched {

/// Abstract simulated time. Integer units avoid float drift in event order.
/// Default calibration: t_gpu=1, t_attn=5, t_cpu_token=30, t_load=100.
using TimeUnits = std::uint64_t;

inline constexpr const char* kToolVersion = "0.1.0";

/// Raised on invalid configuration or malformed inputs.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised on filesystem / parse failures; message names the location.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Identity of one non-shared expert. Shared experts process every token,
/// stay GPU-resident and are never scheduled; their cost is folded into
/// the per-layer attention time.
struct ExpertId {
    std::uint32_t layer = 0;
    std::uint32_t index = 0;

    auto operator<=>(const ExpertId&) const = default;
};

struct ModelShape {
    std::uint32_t num_layers = 4;        // L
    std::uint32_t experts_per_layer = 64; // E
    std::uint32_t top_k = 6;             // k, actives per token
    std::uint32_t batch_size = 1;        // tokens decoded per iteration

    bool operator==(const ModelShape&) const = default;
};

struct RouterConfig {
    double alpha = 0.25; // substitution band half-width, in [0, 1)
};

enum class CachePolicy { ScoreWindow, LRU };
enum class InitFill { FirstSlots, SeededRandom, Empty };

struct CacheConfig {
    std::uint32_t slots_per_layer = 16; // c, resident non-shared experts
    std::uint32_t history_window = 16;  // n, iterations of score history
    CachePolicy policy = CachePolicy::ScoreWindow;
    InitFill init_fill = InitFill::FirstSlots;
};

struct CostModel {
    TimeUnits t_attn = 5;       // attention + gate per layer, GPU
    TimeUnits t_gpu = 1;        // one expert on GPU, batch-insensitive
    TimeUnits t_cpu_token = 30; // one expert per token on CPU
    TimeUnits t_load = 100;     // one expert over PCIe
    TimeUnits t_route = 0;      // router + balancer on CPU
};

struct PredictorConfig {
    double p_top = 0.82;    // head is a true top-score expert
    double p_active = 0.95; // otherwise, head is still an active expert
    std::uint32_t queue_depth = 0; // 0 means "use top_k"
};

/// Scheduler stages, toggled independently for ablation.
///   CE  score-window cache eviction (LRU otherwise)
///   ER  expert-cache router with alpha-band substitution (plain top-k otherwise)
///   Pre online prefetching of predicted top-score experts
///   BA  CPU/PCIe load balancing (everything loads otherwise)
struct StageSet {
    bool ce = false;
    bool er = false;
    bool pre = false;
    bool ba = false;

    bool operator==(const StageSet&) const = default;

    std::string label() const;
    static StageSet all();
};

struct SimConfig {
    ModelShape shape;
    RouterConfig router;
    CacheConfig cache;
    CostModel cost;
    PredictorConfig predictor;
    StageSet stages = StageSet::all();
    std::uint64_t seed = 0;

    std::uint32_t effective_queue_depth() const {
        return predictor.queue_depth == 0 ? shape.top_k : predictor.queue_depth;
    }
};

struct ValidationIssue {
    std::string field;
    std::string rule;
};

struct ValidationReport {
    std::vector<ValidationIssue> violations;
    std::vector<ValidationIssue> warnings;

    bool ok() const { return violations.empty(); }
};

/// Checks every config invariant; never mutates, never throws.
/// Suspicious-but-legal calibrations (t_load or t_cpu_token not much larger
/// than t_gpu) come back as warnings.
ValidationReport validate_config(const SimConfig& cfg);

std::string to_string(CachePolicy policy);
std::string to_string(InitFill fill);
CachePolicy cache_policy_from_string(const std::string& name);
InitFill init_fill_from_string(const std::string& name);

/// Parses "ce,er,pre,ba"-style lists (case-insensitive; "" or "none" is empty).
StageSet parse_stages(const std::string& spec);

void to_json(nlohmann::json& j, const ModelShape& v);
void from_json(const nlohmann::json& j, ModelShape& v);
void to_json(nlohmann::json& j, const RouterConfig& v);
void from_json(const nlohmann::json& j, RouterConfig& v);
void to_json(nlohmann::json& j, const CacheConfig& v);
void from_json(const nlohmann::json& j, CacheConfig& v);
void to_json(nlohmann::json& j, const CostModel& v);
void from_json(const nlohmann::json& j, CostModel& v);
void to_json(nlohmann::json& j, const PredictorConfig& v);
void from_json(const nlohmann::json& j, PredictorConfig& v);
void to_json(nlohmann::json& j, const StageSet& v);
void from_json(const nlohmann::json& j, StageSet& v);
void to_json(nlohmann::json& j, const SimConfig& v);
void from_json(const nlohmann::json& j, SimConfig& v);

SimConfig load_config(const std::string& path);

} // namespace moesched
