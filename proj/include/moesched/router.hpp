// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moesched/core.hpp"

namespace moesched {

/// Per-token band classification of one gate-score vector.
///
/// beta is the (k+1)-th score in descending order. Actives are the top-k
/// experts (ties broken by ascending index). Within the actives, experts
/// scoring in [beta, (1+alpha)*beta) are low-score; every other active is
/// top-score. Inactive experts scoring in [(1-alpha)*beta, beta) form the
/// alternative band. When beta == 0 the bands collapse: all actives are
/// top-score and no substitution is possible.
struct Classification {
    double beta = 0.0;
    double threshold_top = 0.0; // T = (1+alpha)*beta
    double threshold_low = 0.0; // L = beta
    double threshold_alt = 0.0; // R = (1-alpha)*beta
    std::vector<std::uint32_t> actives;   // top-k, score desc, index asc on ties
    std::vector<std::uint32_t> top_score; // subset of actives, ranking order
    std::vector<std::uint32_t> low_score; // subset of actives, ranking order
    std::vector<std::uint32_t> alt_band;  // inactive candidates, score desc
};

Classification classify(std::span<const double> scores, std::uint32_t k, double alpha);

struct Substitution {
    std::uint32_t dropped = 0; // low-score active that left the selection
    std::uint32_t chosen = 0;  // alternative that took its place
};

struct TokenRoute {
    std::vector<std::uint32_t> selected; // exactly k distinct experts
    std::vector<Substitution> substitutions;
    std::vector<std::uint32_t> kept_low; // low-score actives that stayed selected
    Classification cls;
};

/// Routing decision for one (iteration, layer) batch.
struct RouteResult {
    std::vector<TokenRoute> tokens;
    std::vector<std::uint32_t> top_score_set; // C: union of top-score experts, sorted
    std::vector<std::uint32_t> pending;       // kept low-score actives not resident, sorted

    std::vector<std::uint32_t> distinct_selected() const;
    std::uint64_t substitution_count() const;
    std::uint64_t kept_low_count() const;
};

/// Expert-cache routing for a batch of tokens at one layer.
///
/// Pass 1 collects every token's top-score experts into its selection and
/// into the shared set C. Pass 2 retains low-score actives that are
/// GPU-resident or in C (they cost nothing extra) and gathers the rest
/// into B_t; eligible alternatives A_t (alternative band, resident or in
/// C) then replace as many of B_t as they can cover, highest-scoring
/// alternatives first. The uncovered residue stays selected and is
/// reported as pending.
///
/// resident_mask has one byte per expert (nonzero = resident on GPU).
RouteResult route(const std::vector<std::vector<double>>& batch_scores,
                  std::span<const std::uint8_t> resident_mask,
                  std::uint32_t k,
                  double alpha);

/// Batch-aware re-selection of substitution targets: among band-eligible
/// alternatives, prefer the expert currently serving the most other
/// tokens, so fewer distinct experts cover more of the batch. Eligibility
/// extends to experts selected by other tokens even when they are neither
/// resident nor in C — they are computed anyway, so joining them is free.
/// Never touches top-score selections and never increases the number of
/// distinct non-resident experts.
RouteResult coalesce_for_batching(const RouteResult& result,
                                  const std::vector<std::vector<double>>& batch_scores,
                                  std::span<const std::uint8_t> resident_mask);

/// Plain top-k selection (score desc, index asc), baseline router.
std::vector<std::uint32_t> plain_top_k(std::span<const double> scores, std::uint32_t k);

} // namespace moesched
