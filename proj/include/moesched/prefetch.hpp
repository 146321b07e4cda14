// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moesched/core.hpp"
#include "moesched/rng.hpp"

namespace moesched {

enum class PredictedHeadKind : std::uint8_t { TopScore, ActiveNonTop, Inactive };

struct PredictOutcome {
    std::vector<double> scores;
    std::uint32_t head = 0; // predicted rank-1 expert
    PredictedHeadKind head_kind = PredictedHeadKind::TopScore;
    bool from_trace = false; // true when a supplied vector was passed through
};

/// Stochastic stand-in for the score-prediction forward pass.
///
/// When `supplied` is non-empty it is returned verbatim (trace override)
/// and the rng is not consumed. Otherwise the predicted vector is the true
/// one with a single pairwise score swap that plants the head: with
/// probability p_top the head is a true top-score expert (under alpha),
/// failing that with probability p_active a uniformly random non-top
/// active, and otherwise a uniformly random inactive expert. The swap
/// keeps the score multiset intact, so the output is still a valid gate
/// vector and all other ranks follow the true ordering.
PredictOutcome predict_scores(std::span<const double> true_next,
                              std::span<const double> supplied,
                              const PredictorConfig& cfg,
                              std::uint32_t k,
                              double alpha,
                              Rng& rng);

struct PrefetchEntry {
    std::uint32_t expert = 0;
    double predicted_score = 0.0;
    bool issued = false;
};

/// Pending speculative loads for one upcoming layer, best score first.
struct PrefetchQueue {
    std::uint32_t target_layer = 0;
    std::uint64_t target_iteration = 0;
    std::vector<PrefetchEntry> entries;

    bool empty() const { return entries.empty(); }
};

/// Top `depth` predicted experts that are not already resident,
/// descending predicted score (ascending index on ties).
PrefetchQueue build_queue(std::span<const double> predicted,
                          std::span<const std::uint8_t> resident_mask,
                          std::uint32_t depth,
                          std::uint32_t target_layer,
                          std::uint64_t target_iteration);

/// Drops the undispatched entries at the target layer's gate event.
/// In-flight transfers are non-preemptive and are not represented here;
/// they simply complete. Throws std::logic_error on a layer mismatch.
void clear_on_gate(PrefetchQueue& queue, std::uint32_t layer);

/// Aggregate predictor quality counters, reported per run.
struct PredictorStats {
    std::uint64_t draws = 0;         // stochastic predictions made
    std::uint64_t trace_supplied = 0;
    std::uint64_t head_top = 0;      // head was a true top-score expert
    std::uint64_t head_active = 0;   // head active but not top-score
    std::uint64_t head_inactive = 0;
    std::uint64_t issued = 0;        // prefetch transfers started
    std::uint64_t cancelled = 0;     // queue entries dropped at gate events

    double head_accuracy() const {
        const std::uint64_t total = draws + trace_supplied;
        return total == 0 ? 0.0 : static_cast<double>(head_top) / static_cast<double>(total);
    }
    double active_rate() const {
        const std::uint64_t non_top = head_active + head_inactive;
        return non_top == 0 ? 0.0
                            : static_cast<double>(head_active) / static_cast<double>(non_top);
    }

    void count_head(PredictedHeadKind kind, bool from_trace);
};

} // namespace moesched
