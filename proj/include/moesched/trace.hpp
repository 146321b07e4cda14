// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moesched/core.hpp"

namespace moesched {

/// Target shape of the synthetic gate-score distribution. A per-layer
/// "hot" subset of experts carries most of the softmax mass and drifts
/// slowly between iterations, which reproduces the few-high/many-low
/// score pattern and the score-rank reuse gradient of fine-grained MoE
/// gates.
struct SkewProfile {
    double hot_fraction = 0.125; // share of experts in the hot set
    double hot_mass = 0.8;      // score mass routed to the hot set
    double persistence = 0.92;  // chance a hot expert stays hot next iteration
    double concentration = 1.5; // within-hot skew; higher = steeper top scores
};

/// One decode iteration: scores[layer][token] is a length-E gate vector.
/// predicted mirrors scores when a trace supplies its own predictions;
/// an empty inner vector means "not supplied".
struct TraceIteration {
    std::vector<std::vector<std::vector<double>>> scores;
    std::vector<std::vector<std::vector<double>>> predicted;

    bool operator==(const TraceIteration&) const = default;
};

struct GateTrace {
    ModelShape shape;
    std::vector<TraceIteration> iterations;

    bool operator==(const GateTrace&) const = default;
};

/// Synthesizes a trace: per layer, a Markov-persistent hot set; per token,
/// a two-tier Dirichlet draw (hot tier shares hot_mass with shape
/// 1/concentration, cold tier shares the rest with shape 1). Deterministic
/// for a fixed seed. Zero iterations is a valid empty trace.
GateTrace generate_trace(const ModelShape& shape, const SkewProfile& profile,
                         std::uint64_t iterations, std::uint64_t seed);

/// JSON Lines round-trip. Line 0 is the header {"L","E","k","B"}; then one
/// line per (iteration, layer, token) in canonical order with fields
/// it/layer/tok/s and optional pred. Load errors name the offending line.
void save_trace(const GateTrace& trace, const std::string& path);
GateTrace load_trace(const std::string& path);

/// Per-score-rank probability that the rank-r expert of iteration i is
/// active (top-k) in iteration i+1, averaged over layers, tokens and
/// adjacent iteration pairs. Throws ConfigError on fewer than 2 iterations.
std::vector<double> reuse_curve(const GateTrace& trace);

/// Content hash of a trace file (FNV-1a 64 over the raw bytes), reported
/// as a 16-digit hex fingerprint.
std::string fingerprint_file(const std::string& path);
std::string fingerprint_bytes(const std::string& bytes);

} // namespace moesched
