// SPDX-License-Identifier: Apache-2.0
#include "moesched/prefetch.hpp"

#include <algorithm>

#include "moesched/router.hpp"

namespace moesched {

namespace {

std::uint32_t argmax_min_index(std::span<const double> scores) {
    std::uint32_t best = 0;
    for (std::uint32_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) {
            best = i;
        }
    }
    return best;
}

PredictedHeadKind kind_of(std::uint32_t head, const Classification& cls) {
    if (std::find(cls.top_score.begin(), cls.top_score.end(), head) != cls.top_score.end()) {
        return PredictedHeadKind::TopScore;
    }
    if (std::find(cls.actives.begin(), cls.actives.end(), head) != cls.actives.end()) {
        return PredictedHeadKind::ActiveNonTop;
    }
    return PredictedHeadKind::Inactive;
}

} // namespace

PredictOutcome predict_scores(std::span<const double> true_next,
                              std::span<const double> supplied,
                              const PredictorConfig& cfg,
                              std::uint32_t k,
                              double alpha,
                              Rng& rng) {
    const Classification cls = classify(true_next, k, alpha);

    PredictOutcome out;
    if (!supplied.empty()) {
        out.scores.assign(supplied.begin(), supplied.end());
        out.head = argmax_min_index(out.scores);
        out.head_kind = kind_of(out.head, cls);
        out.from_trace = true;
        return out;
    }

    std::uint32_t head;
    if (rng.next_double() < cfg.p_top && !cls.top_score.empty()) {
        head = cls.top_score[rng.next_below(cls.top_score.size())];
        out.head_kind = PredictedHeadKind::TopScore;
    } else {
        std::vector<std::uint32_t> low_actives;
        for (std::uint32_t e : cls.actives) {
            if (std::find(cls.top_score.begin(), cls.top_score.end(), e) ==
                cls.top_score.end()) {
                low_actives.push_back(e);
            }
        }
        std::vector<std::uint32_t> inactives;
        for (std::uint32_t e = 0; e < true_next.size(); ++e) {
            if (std::find(cls.actives.begin(), cls.actives.end(), e) == cls.actives.end()) {
                inactives.push_back(e);
            }
        }
        if (rng.next_double() < cfg.p_active && !low_actives.empty()) {
            head = low_actives[rng.next_below(low_actives.size())];
            out.head_kind = PredictedHeadKind::ActiveNonTop;
        } else {
            head = inactives[rng.next_below(inactives.size())];
            out.head_kind = PredictedHeadKind::Inactive;
        }
    }

    out.scores.assign(true_next.begin(), true_next.end());
    const std::uint32_t true_top = argmax_min_index(true_next);
    std::swap(out.scores[head], out.scores[true_top]);
    out.head = head;
    return out;
}

PrefetchQueue build_queue(std::span<const double> predicted,
                          std::span<const std::uint8_t> resident_mask,
                          std::uint32_t depth,
                          std::uint32_t target_layer,
                          std::uint64_t target_iteration) {
    PrefetchQueue queue;
    queue.target_layer = target_layer;
    queue.target_iteration = target_iteration;
    if (depth == 0) {
        return queue;
    }
    std::vector<std::uint32_t> order(predicted.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&predicted](std::uint32_t a, std::uint32_t b) {
        if (predicted[a] != predicted[b]) {
            return predicted[a] > predicted[b];
        }
        return a < b;
    });
    for (std::uint32_t e : order) {
        if (queue.entries.size() >= depth) {
            break;
        }
        if (!resident_mask[e]) {
            queue.entries.push_back({e, predicted[e], false});
        }
    }
    return queue;
}

void clear_on_gate(PrefetchQueue& queue, std::uint32_t layer) {
    if (layer != queue.target_layer) {
        throw std::logic_error("clear_on_gate: layer mismatch");
    }
    std::erase_if(queue.entries, [](const PrefetchEntry& e) { return !e.issued; });
}

void PredictorStats::count_head(PredictedHeadKind kind, bool from_trace) {
    if (from_trace) {
        ++trace_supplied;
    } else {
        ++draws;
    }
    switch (kind) {
        case PredictedHeadKind::TopScore: ++head_top; break;
        case PredictedHeadKind::ActiveNonTop: ++head_active; break;
        case PredictedHeadKind::Inactive: ++head_inactive; break;
    }
}

} // namespace moesched
