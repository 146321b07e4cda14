// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moesched/core.hpp"
#include "moesched/trace.hpp"

namespace moesched {

struct GenTraceOptions {
    ModelShape shape;
    SkewProfile profile;
    std::uint64_t iterations = 500;
    std::uint64_t seed = 0;
    std::string output;
};

/// Scalar config overrides shared by the simulation commands. Unset
/// fields leave the loaded (or default) config untouched.
struct ConfigOverrides {
    std::optional<double> alpha;
    std::optional<std::uint32_t> slots;
    std::optional<std::uint32_t> history;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> stages;
    std::optional<std::string> policy;
    std::optional<std::string> init_fill;
    std::optional<TimeUnits> t_attn, t_gpu, t_cpu_token, t_load, t_route;
    std::optional<double> p_top, p_active;
    std::optional<std::uint32_t> queue_depth;
};

struct RunOptions {
    std::string trace_path;
    std::string config_path; // empty = defaults + trace shape
    ConfigOverrides overrides;
    std::string report_path;
    std::string timeline_path; // optional
};

struct AblateOptions {
    std::string trace_path;
    std::string config_path;
    ConfigOverrides overrides;
    std::string output_prefix; // writes <prefix>.json and <prefix>.csv
};

struct SweepOptions {
    std::string trace_path;
    std::string config_path;
    ConfigOverrides overrides;
    double alpha_min = 0.0;
    double alpha_max = 0.6;
    double alpha_step = 0.05;
    std::string output_prefix;
};

struct CompareOptions {
    std::string trace_path;
    std::string config_path;
    ConfigOverrides overrides;
    std::string output_prefix;
};

/// Resolves trace + config + overrides into a validated SimConfig.
/// Throws ConfigError on violations or a trace/config shape mismatch.
SimConfig resolve_config(const GateTrace& trace, const std::string& config_path,
                         const ConfigOverrides& overrides);

void cmd_gen_trace(const GenTraceOptions& opts);
void cmd_run(const RunOptions& opts);
void cmd_ablate(const AblateOptions& opts);
void cmd_sweep_alpha(const SweepOptions& opts);
void cmd_compare(const CompareOptions& opts);

/// Full argv entry point; returns the process exit code
/// (0 ok, 2 config error, 3 I/O error, 4 timeline invariant violation).
int run_cli(int argc, const char* const* argv);

} // namespace moesched
