// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference evaluator for the expert-cache routing rules. It is
// written directly from the band definitions, independently of the library
// implementation: per token, rank experts, take beta as the (k+1)-th
// score, split actives at (1+alpha)*beta, retain low-score actives that
// are resident or in the shared top-score set, collect inactive
// alternatives in [(1-alpha)*beta, beta) that are resident or in that set,
// and substitute the weakest remaining low-score actives while
// alternatives last.
#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

namespace route_oracle {

struct TokenOutcome {
    std::set<std::uint32_t> selected;
    std::set<std::uint32_t> dropped;   // low-score actives replaced
    std::set<std::uint32_t> chosen;    // alternatives substituted in
    std::set<std::uint32_t> kept_low;  // low-score actives that survived
};

struct Outcome {
    std::vector<TokenOutcome> tokens;
    std::set<std::uint32_t> shared_top; // C
    std::set<std::uint32_t> pending;    // kept low-score actives off the GPU
};

inline std::vector<std::uint32_t> rank_desc(const std::vector<double>& scores) {
    std::vector<std::uint32_t> order(scores.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return scores[a] > scores[b];
    });
    return order;
}

inline Outcome evaluate(const std::vector<std::vector<double>>& batch,
                        const std::vector<std::uint8_t>& resident, std::uint32_t k,
                        double alpha) {
    Outcome out;
    out.tokens.resize(batch.size());

    struct Bands {
        double beta = 0.0;
        double top = 0.0;
        double low = 0.0;
        double alt = 0.0;
        std::vector<std::uint32_t> actives;
    };
    std::vector<Bands> bands(batch.size());

    // First pass: every token contributes its top-score actives to C.
    for (std::size_t t = 0; t < batch.size(); ++t) {
        const std::vector<double>& s = batch[t];
        Bands& b = bands[t];
        const std::vector<std::uint32_t> order = rank_desc(s);
        b.actives.assign(order.begin(), order.begin() + k);
        b.beta = s[order[k]];
        b.top = (1.0 + alpha) * b.beta;
        b.low = b.beta;
        b.alt = (1.0 - alpha) * b.beta;
        for (std::uint32_t e : b.actives) {
            const bool is_low = b.beta > 0.0 && s[e] >= b.low && s[e] < b.top;
            if (!is_low) {
                out.tokens[t].selected.insert(e);
                out.shared_top.insert(e);
            }
        }
    }

    // Second pass: substitute per token.
    for (std::size_t t = 0; t < batch.size(); ++t) {
        const std::vector<double>& s = batch[t];
        const Bands& b = bands[t];
        TokenOutcome& tok = out.tokens[t];

        std::vector<std::uint32_t> b_low; // problem lows, strongest first
        for (std::uint32_t e : rank_desc(s)) {
            const bool active =
                std::find(b.actives.begin(), b.actives.end(), e) != b.actives.end();
            if (active && b.beta > 0.0 && s[e] >= b.low && s[e] < b.top) {
                if (resident[e] || out.shared_top.count(e) != 0) {
                    tok.selected.insert(e); // already free to compute
                } else {
                    b_low.push_back(e);
                }
            }
        }
        std::vector<std::uint32_t> alts; // eligible alternatives, strongest first
        for (std::uint32_t e : rank_desc(s)) {
            const bool active =
                std::find(b.actives.begin(), b.actives.end(), e) != b.actives.end();
            if (!active && b.beta > 0.0 && s[e] >= b.alt && s[e] < b.low &&
                (resident[e] || out.shared_top.count(e) != 0)) {
                alts.push_back(e);
            }
        }

        const std::size_t m = b_low.size();
        const std::size_t used = std::min(m, alts.size());
        for (std::size_t i = 0; i < m - used; ++i) {
            tok.selected.insert(b_low[i]);
            tok.kept_low.insert(b_low[i]);
            if (!resident[b_low[i]]) {
                out.pending.insert(b_low[i]);
            }
        }
        for (std::size_t i = 0; i < used; ++i) {
            tok.selected.insert(alts[i]);
            tok.chosen.insert(alts[i]);
            tok.dropped.insert(b_low[m - used + i]);
        }
    }
    return out;
}

} // namespace route_oracle
