// SPDX-License-Identifier: Apache-2.0
#include "moesched/cache.hpp"

#include <algorithm>

#include "moesched/rng.hpp"

namespace moesched {

CacheState::CacheState(const ModelShape& shape, const CacheConfig& cfg, std::uint64_t seed)
    : shape_(shape), cfg_(cfg) {
    layers_.resize(shape.num_layers);
    const std::uint32_t e = shape.experts_per_layer;
    const std::uint32_t c = std::min(cfg.slots_per_layer, e);
    for (std::uint32_t layer = 0; layer < shape.num_layers; ++layer) {
        Layer& l = layers_[layer];
        l.mask.assign(e, 0);
        l.shielded.assign(e, 0);
        l.last_access.assign(e, 0);
        if (cfg.init_fill == InitFill::Empty) {
            // cold start, nothing resident
        } else if (cfg.init_fill == InitFill::FirstSlots) {
            for (std::uint32_t i = 0; i < c; ++i) {
                l.resident.push_back(i);
            }
        } else {
            // Seeded partial Fisher-Yates: c distinct indices per layer.
            Rng rng(derive_seed(seed, 0x11caffe0ULL + layer));
            std::vector<std::uint32_t> pool(e);
            for (std::uint32_t i = 0; i < e; ++i) {
                pool[i] = i;
            }
            for (std::uint32_t i = 0; i < c; ++i) {
                const std::uint64_t j = i + rng.next_below(e - i);
                std::swap(pool[i], pool[j]);
                l.resident.push_back(pool[i]);
            }
            std::sort(l.resident.begin(), l.resident.end());
        }
        for (std::uint32_t idx : l.resident) {
            l.mask[idx] = 1;
        }
    }
}

const std::vector<std::uint32_t>& CacheState::resident(std::uint32_t layer) const {
    return layers_.at(layer).resident;
}

std::span<const std::uint8_t> CacheState::resident_mask(std::uint32_t layer) const {
    return layers_.at(layer).mask;
}

bool CacheState::is_resident(std::uint32_t layer, std::uint32_t index) const {
    return layers_.at(layer).mask[index] != 0;
}

void CacheState::record_scores(std::uint32_t layer, std::span<const double> scores) {
    Layer& l = layers_.at(layer);
    if (scores.size() != shape_.experts_per_layer) {
        throw std::logic_error("record_scores: score vector length mismatch");
    }
    l.history.emplace_back(scores.begin(), scores.end());
    while (l.history.size() > cfg_.history_window) {
        l.history.pop_front();
    }
}

double CacheState::window_average(std::uint32_t layer, std::uint32_t index) const {
    const Layer& l = layers_.at(layer);
    if (l.history.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const auto& vec : l.history) {
        sum += vec[index];
    }
    return sum / static_cast<double>(l.history.size());
}

std::optional<std::uint32_t> CacheState::try_evict_candidate(std::uint32_t layer) const {
    const Layer& l = layers_.at(layer);
    std::optional<std::uint32_t> victim;
    if (cfg_.policy == CachePolicy::ScoreWindow) {
        double best = 0.0;
        for (std::uint32_t idx : l.resident) {
            if (l.shielded[idx]) {
                continue;
            }
            const double avg = window_average(layer, idx);
            if (!victim || avg < best) {
                victim = idx;
                best = avg;
            }
        }
    } else {
        TimeUnits best = 0;
        for (std::uint32_t idx : l.resident) {
            if (l.shielded[idx]) {
                continue;
            }
            if (!victim || l.last_access[idx] < best) {
                victim = idx;
                best = l.last_access[idx];
            }
        }
    }
    return victim;
}

std::uint32_t CacheState::evict_candidate(std::uint32_t layer) const {
    auto victim = try_evict_candidate(layer);
    if (!victim) {
        throw CacheError("no evictable expert");
    }
    return *victim;
}

void CacheState::shield(std::uint32_t layer, std::uint32_t index) {
    layers_.at(layer).shielded[index] = 1;
}

void CacheState::unshield_layer(std::uint32_t layer) {
    Layer& l = layers_.at(layer);
    std::fill(l.shielded.begin(), l.shielded.end(), 0);
}

bool CacheState::is_shielded(std::uint32_t layer, std::uint32_t index) const {
    return layers_.at(layer).shielded[index] != 0;
}

void CacheState::touch(std::uint32_t layer, std::uint32_t index, TimeUnits now) {
    layers_.at(layer).last_access[index] = now;
}

std::optional<std::uint32_t> CacheState::admit(std::uint32_t layer, std::uint32_t index,
                                               TimeUnits now) {
    Layer& l = layers_.at(layer);
    if (l.mask[index]) {
        throw std::logic_error("admit: expert already resident");
    }
    std::optional<std::uint32_t> evicted;
    if (cfg_.slots_per_layer == 0) {
        return evicted; // zero-slot cache: loads pass through, nothing sticks
    }
    if (l.resident.size() >= cfg_.slots_per_layer) {
        const std::uint32_t victim = evict_candidate(layer);
        l.resident.erase(std::find(l.resident.begin(), l.resident.end(), victim));
        l.mask[victim] = 0;
        evicted = victim;
    }
    l.resident.insert(std::upper_bound(l.resident.begin(), l.resident.end(), index), index);
    l.mask[index] = 1;
    l.last_access[index] = now;
    return evicted;
}

std::vector<std::vector<std::uint32_t>> CacheState::snapshot() const {
    std::vector<std::vector<std::uint32_t>> out;
    out.reserve(layers_.size());
    for (const Layer& l : layers_) {
        out.push_back(l.resident);
    }
    return out;
}

} // namespace moesched
