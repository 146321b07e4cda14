// SPDX-License-Identifier: Apache-2.0
#include "moesched/router.hpp"

#include <algorithm>
#include <set>

namespace moesched {

namespace {

// Indices sorted by score descending, ascending index on ties. This is the
// canonical ranking everywhere: actives, alternatives, substitution order.
std::vector<std::uint32_t> ranking(std::span<const double> scores) {
    std::vector<std::uint32_t> order(scores.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&scores](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    });
    return order;
}

std::vector<std::uint32_t> sorted_unique(std::vector<std::uint32_t> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

} // namespace

std::vector<std::uint32_t> plain_top_k(std::span<const double> scores, std::uint32_t k) {
    std::vector<std::uint32_t> order = ranking(scores);
    order.resize(std::min<std::size_t>(k, order.size()));
    return order;
}

Classification classify(std::span<const double> scores, std::uint32_t k, double alpha) {
    if (scores.size() <= k) {
        throw ConfigError("classify: beta undefined, need at least k+1 experts");
    }
    const std::vector<std::uint32_t> order = ranking(scores);

    Classification cls;
    cls.beta = scores[order[k]];
    cls.threshold_top = (1.0 + alpha) * cls.beta;
    cls.threshold_low = cls.beta;
    cls.threshold_alt = (1.0 - alpha) * cls.beta;
    cls.actives.assign(order.begin(), order.begin() + k);

    for (std::uint32_t e : cls.actives) {
        const double s = scores[e];
        const bool low = cls.beta > 0.0 && s >= cls.threshold_low && s < cls.threshold_top;
        if (low) {
            cls.low_score.push_back(e);
        } else {
            cls.top_score.push_back(e);
        }
    }
    for (std::size_t i = k; i < order.size(); ++i) {
        const std::uint32_t e = order[i];
        const double s = scores[e];
        if (cls.beta > 0.0 && s >= cls.threshold_alt && s < cls.threshold_low) {
            cls.alt_band.push_back(e);
        }
    }
    return cls;
}

std::vector<std::uint32_t> RouteResult::distinct_selected() const {
    std::vector<std::uint32_t> all;
    for (const TokenRoute& t : tokens) {
        all.insert(all.end(), t.selected.begin(), t.selected.end());
    }
    return sorted_unique(std::move(all));
}

std::uint64_t RouteResult::substitution_count() const {
    std::uint64_t n = 0;
    for (const TokenRoute& t : tokens) {
        n += t.substitutions.size();
    }
    return n;
}

std::uint64_t RouteResult::kept_low_count() const {
    std::uint64_t n = 0;
    for (const TokenRoute& t : tokens) {
        n += t.kept_low.size();
    }
    return n;
}

RouteResult route(const std::vector<std::vector<double>>& batch_scores,
                  std::span<const std::uint8_t> resident_mask,
                  std::uint32_t k,
                  double alpha) {
    RouteResult result;
    result.tokens.resize(batch_scores.size());

    // Pass 1: classify, retain top-score experts, accumulate the shared set C.
    std::set<std::uint32_t> shared_top;
    for (std::size_t t = 0; t < batch_scores.size(); ++t) {
        TokenRoute& tok = result.tokens[t];
        tok.cls = classify(batch_scores[t], k, alpha);
        tok.selected = tok.cls.top_score;
        shared_top.insert(tok.cls.top_score.begin(), tok.cls.top_score.end());
    }
    result.top_score_set.assign(shared_top.begin(), shared_top.end());

    // Pass 2: low-score actives already on the GPU or in C stay selected
    // for free; the rest are substituted from the eligible alternatives.
    std::vector<std::uint32_t> pending;
    for (std::size_t t = 0; t < batch_scores.size(); ++t) {
        TokenRoute& tok = result.tokens[t];

        std::vector<std::uint32_t> b_low; // B_t, score descending
        for (std::uint32_t e : tok.cls.low_score) {
            if (resident_mask[e] || shared_top.count(e) != 0) {
                tok.selected.push_back(e);
            } else {
                b_low.push_back(e);
            }
        }

        std::vector<std::uint32_t> alt; // A_t, score descending
        for (std::uint32_t e : tok.cls.alt_band) {
            if (resident_mask[e] || shared_top.count(e) != 0) {
                alt.push_back(e);
            }
        }

        const std::size_t m = b_low.size();
        const std::size_t covered = std::min(m, alt.size());
        const std::size_t kept = m - covered;
        // Keep the strongest low-score actives, replace the weakest.
        for (std::size_t i = 0; i < kept; ++i) {
            tok.selected.push_back(b_low[i]);
            tok.kept_low.push_back(b_low[i]);
            pending.push_back(b_low[i]); // b_low is non-resident by construction
        }
        for (std::size_t i = 0; i < covered; ++i) {
            tok.selected.push_back(alt[i]);
            tok.substitutions.push_back({b_low[kept + i], alt[i]});
        }
    }
    result.pending = sorted_unique(std::move(pending));
    return result;
}

RouteResult coalesce_for_batching(const RouteResult& result,
                                  const std::vector<std::vector<double>>& batch_scores,
                                  std::span<const std::uint8_t> resident_mask) {
    RouteResult out = result;
    const std::size_t num_tokens = out.tokens.size();
    if (num_tokens == 0) {
        return out;
    }
    const std::size_t num_experts = batch_scores[0].size();

    std::vector<std::uint32_t> batch_count(num_experts, 0);
    for (const TokenRoute& tok : out.tokens) {
        for (std::uint32_t e : tok.selected) {
            ++batch_count[e];
        }
    }
    std::set<std::uint32_t> shared_top(out.top_score_set.begin(), out.top_score_set.end());

    // Greedy passes until stable. Each swap strictly concentrates batches
    // (sum of squared batch sizes increases), so this terminates.
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t t = 0; t < num_tokens; ++t) {
            TokenRoute& tok = out.tokens[t];
            const std::vector<double>& scores = batch_scores[t];
            std::set<std::uint32_t> selected(tok.selected.begin(), tok.selected.end());
            std::set<std::uint32_t> actives(tok.cls.actives.begin(), tok.cls.actives.end());

            for (std::uint32_t original : tok.cls.low_score) {
                // Locate the slot that originated from this low-score active.
                std::uint32_t occupant = 0;
                Substitution* sub = nullptr;
                bool is_kept = std::find(tok.kept_low.begin(), tok.kept_low.end(), original) !=
                               tok.kept_low.end();
                if (is_kept) {
                    occupant = original;
                } else {
                    auto it = std::find_if(tok.substitutions.begin(), tok.substitutions.end(),
                                           [original](const Substitution& s) {
                                               return s.dropped == original;
                                           });
                    if (it == tok.substitutions.end()) {
                        continue;
                    }
                    sub = &*it;
                    occupant = sub->chosen;
                }

                const std::uint32_t occupant_others = batch_count[occupant] - 1;
                std::uint32_t best = occupant;
                std::uint32_t best_others = occupant_others;
                for (std::uint32_t x = 0; x < num_experts; ++x) {
                    const double s = scores[x];
                    if (!(tok.cls.beta > 0.0 && s >= tok.cls.threshold_alt &&
                          s < tok.cls.threshold_low)) {
                        continue; // outside the substitution band
                    }
                    if (actives.count(x) != 0 || selected.count(x) != 0) {
                        continue;
                    }
                    const std::uint32_t others = batch_count[x];
                    const bool eligible = resident_mask[x] || shared_top.count(x) != 0 ||
                                          others > 0;
                    if (!eligible) {
                        continue;
                    }
                    if (others > best_others ||
                        (others == best_others && best != occupant &&
                         (s > scores[best] || (s == scores[best] && x < best)))) {
                        best = x;
                        best_others = others;
                    }
                }
                if (best == occupant || best_others <= occupant_others) {
                    continue;
                }

                // Swap the slot over to the bigger batch.
                *std::find(tok.selected.begin(), tok.selected.end(), occupant) = best;
                selected.erase(occupant);
                selected.insert(best);
                --batch_count[occupant];
                ++batch_count[best];
                if (sub != nullptr) {
                    sub->chosen = best;
                } else {
                    tok.kept_low.erase(
                        std::find(tok.kept_low.begin(), tok.kept_low.end(), original));
                    tok.substitutions.push_back({original, best});
                }
                changed = true;
            }
        }
    }

    std::vector<std::uint32_t> pending;
    for (const TokenRoute& tok : out.tokens) {
        for (std::uint32_t e : tok.kept_low) {
            if (!resident_mask[e]) {
                pending.push_back(e);
            }
        }
    }
    out.pending = sorted_unique(std::move(pending));
    return out;
}

} // namespace moesched
