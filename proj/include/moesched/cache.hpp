// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "moesched/core.hpp"

namespace moesched {

struct CacheError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// GPU residency tracker for non-shared experts, one slot pool per layer.
///
/// Eviction is either score-window (victim = unshielded resident with the
/// lowest mean gate score over the last `history_window` iterations; cold
/// experts average 0) or plain LRU over access stamps. Shields exempt the
/// executing layer's selected experts from eviction until the layer
/// completes. All ties break by ascending expert index.
class CacheState {
  public:
    CacheState(const ModelShape& shape, const CacheConfig& cfg, std::uint64_t seed);

    const std::vector<std::uint32_t>& resident(std::uint32_t layer) const;
    std::span<const std::uint8_t> resident_mask(std::uint32_t layer) const;
    bool is_resident(std::uint32_t layer, std::uint32_t index) const;

    /// Pushes one full score vector into the layer's history ring.
    void record_scores(std::uint32_t layer, std::span<const double> scores);

    /// Mean recorded score of one expert over the retained window; 0 when
    /// no history exists yet.
    double window_average(std::uint32_t layer, std::uint32_t index) const;

    /// Victim under the configured policy, or nullopt when every resident
    /// expert is shielded (or the layer has no residents).
    std::optional<std::uint32_t> try_evict_candidate(std::uint32_t layer) const;

    /// Same, but throws CacheError("no evictable expert") instead.
    std::uint32_t evict_candidate(std::uint32_t layer) const;

    void shield(std::uint32_t layer, std::uint32_t index);
    void unshield_layer(std::uint32_t layer);
    bool is_shielded(std::uint32_t layer, std::uint32_t index) const;

    /// Marks an access for LRU bookkeeping.
    void touch(std::uint32_t layer, std::uint32_t index, TimeUnits now);

    /// Inserts a non-resident expert, evicting first if the layer is at
    /// capacity. Returns the victim, if any. Throws std::logic_error when
    /// the expert is already resident (caller bug) and propagates
    /// CacheError when all residents are shielded.
    std::optional<std::uint32_t> admit(std::uint32_t layer, std::uint32_t index, TimeUnits now);

    std::uint32_t capacity() const { return cfg_.slots_per_layer; }
    CachePolicy policy() const { return cfg_.policy; }

    /// Sorted resident sets for every layer, for reporting.
    std::vector<std::vector<std::uint32_t>> snapshot() const;

  private:
    struct Layer {
        std::vector<std::uint32_t> resident; // sorted ascending
        std::vector<std::uint8_t> mask;      // size E
        std::vector<std::uint8_t> shielded;  // size E
        std::deque<std::vector<double>> history;
        std::vector<TimeUnits> last_access;  // size E
    };

    ModelShape shape_;
    CacheConfig cfg_;
    std::vector<Layer> layers_;
};

} // namespace moesched
