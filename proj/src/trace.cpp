// SPDX-License-Identifier: Apache-2.0
#include "moesched/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "moesched/rng.hpp"
#include "moesched/router.hpp"

namespace moesched {

namespace {

std::uint32_t hot_set_size(const SkewProfile& profile, std::uint32_t experts) {
    const auto h = static_cast<std::uint32_t>(std::lround(profile.hot_fraction * experts));
    return std::clamp<std::uint32_t>(h, 1, experts);
}

// Keeps each hot expert with probability `persistence`; dropped slots are
// refilled uniformly from the experts not already in the new set (dropped
// members may re-enter). With persistence 0 the new set is a uniform
// random subset, independent of the old one.
void evolve_hot_set(std::vector<std::uint32_t>& hot, std::uint32_t experts, double persistence,
                    Rng& rng) {
    std::vector<std::uint8_t> in_new(experts, 0);
    std::vector<std::uint32_t> kept;
    for (std::uint32_t e : hot) {
        if (rng.next_double() < persistence) {
            kept.push_back(e);
            in_new[e] = 1;
        }
    }
    const std::size_t need = hot.size() - kept.size();
    for (std::size_t i = 0; i < need; ++i) {
        std::vector<std::uint32_t> candidates;
        candidates.reserve(experts);
        for (std::uint32_t e = 0; e < experts; ++e) {
            if (!in_new[e]) {
                candidates.push_back(e);
            }
        }
        const std::uint32_t pick = candidates[rng.next_below(candidates.size())];
        kept.push_back(pick);
        in_new[pick] = 1;
    }
    std::sort(kept.begin(), kept.end());
    hot = std::move(kept);
}

// Cold-tier Dirichlet shape. Flat-ish (low variance) so that scores around
// the (k+1)-th rank sit close together: that is what populates both the
// low-score band and the alternative band.
constexpr double kColdShape = 2.0;

// Hot-tier weights are drawn once per (iteration, layer) and shared by the
// iteration's tokens: the layer emphasizes the same experts for the whole
// decode step, so high-scoring experts that miss one token's top-k stay
// likely to be activated soon. Cold weights are per token.
std::vector<double> draw_hot_weights(std::size_t count, const SkewProfile& profile, Rng& rng) {
    const double hot_shape = 1.0 / std::max(profile.concentration, 1e-9);
    std::vector<double> weights(count);
    double sum = 0.0;
    for (double& w : weights) {
        w = rng.next_gamma(hot_shape);
        sum += w;
    }
    for (double& w : weights) {
        w = sum > 0.0 ? w / sum * profile.hot_mass : 0.0;
    }
    return weights;
}

std::vector<double> draw_score_vector(const std::vector<std::uint32_t>& hot,
                                      const std::vector<double>& hot_weights,
                                      std::uint32_t experts, const SkewProfile& profile,
                                      Rng& rng) {
    std::vector<double> scores(experts, 0.0);
    std::vector<std::uint8_t> is_hot(experts, 0);
    for (std::size_t i = 0; i < hot.size(); ++i) {
        is_hot[hot[i]] = 1;
        scores[hot[i]] = hot_weights[i];
    }
    const double cold_mass =
        hot.size() == experts ? 0.0 : (1.0 - std::min(profile.hot_mass, 1.0));
    double cold_sum = 0.0;
    std::vector<double> cold(experts, 0.0);
    for (std::uint32_t e = 0; e < experts; ++e) {
        if (!is_hot[e]) {
            cold[e] = rng.next_gamma(kColdShape);
            cold_sum += cold[e];
        }
    }
    for (std::uint32_t e = 0; e < experts; ++e) {
        if (!is_hot[e]) {
            scores[e] = cold_sum > 0.0 ? cold[e] / cold_sum * cold_mass : 0.0;
        }
    }
    return scores;
}

} // namespace

GateTrace generate_trace(const ModelShape& shape, const SkewProfile& profile,
                         std::uint64_t iterations, std::uint64_t seed) {
    GateTrace trace;
    trace.shape = shape;

    Rng rng(derive_seed(seed, 0x7ace5eedULL));
    const std::uint32_t experts = shape.experts_per_layer;
    const std::uint32_t h = hot_set_size(profile, experts);

    // Initial hot sets: one uniform h-subset per layer.
    std::vector<std::vector<std::uint32_t>> hot(shape.num_layers);
    for (std::uint32_t layer = 0; layer < shape.num_layers; ++layer) {
        std::vector<std::uint32_t> pool(experts);
        for (std::uint32_t i = 0; i < experts; ++i) {
            pool[i] = i;
        }
        for (std::uint32_t i = 0; i < h; ++i) {
            const std::uint64_t j = i + rng.next_below(experts - i);
            std::swap(pool[i], pool[j]);
            hot[layer].push_back(pool[i]);
        }
        std::sort(hot[layer].begin(), hot[layer].end());
    }

    trace.iterations.reserve(iterations);
    for (std::uint64_t it = 0; it < iterations; ++it) {
        TraceIteration iter;
        iter.scores.resize(shape.num_layers);
        iter.predicted.resize(shape.num_layers);
        for (std::uint32_t layer = 0; layer < shape.num_layers; ++layer) {
            if (it > 0) {
                evolve_hot_set(hot[layer], experts, profile.persistence, rng);
            }
            iter.scores[layer].reserve(shape.batch_size);
            iter.predicted[layer].assign(shape.batch_size, {});
            const std::vector<double> hot_weights =
                draw_hot_weights(hot[layer].size(), profile, rng);
            for (std::uint32_t tok = 0; tok < shape.batch_size; ++tok) {
                iter.scores[layer].push_back(
                    draw_score_vector(hot[layer], hot_weights, experts, profile, rng));
            }
        }
        trace.iterations.push_back(std::move(iter));
    }
    return trace;
}

void save_trace(const GateTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open trace file for writing: " + path);
    }
    nlohmann::json header = {{"L", trace.shape.num_layers},
                             {"E", trace.shape.experts_per_layer},
                             {"k", trace.shape.top_k},
                             {"B", trace.shape.batch_size}};
    out << header.dump() << '\n';
    for (std::uint64_t it = 0; it < trace.iterations.size(); ++it) {
        const TraceIteration& iter = trace.iterations[it];
        for (std::uint32_t layer = 0; layer < trace.shape.num_layers; ++layer) {
            for (std::uint32_t tok = 0; tok < trace.shape.batch_size; ++tok) {
                nlohmann::json line = {{"it", it},
                                       {"layer", layer},
                                       {"tok", tok},
                                       {"s", iter.scores[layer][tok]}};
                if (!iter.predicted[layer][tok].empty()) {
                    line["pred"] = iter.predicted[layer][tok];
                }
                out << line.dump() << '\n';
            }
        }
    }
    if (!out) {
        throw IoError("write failure on trace file: " + path);
    }
}

GateTrace load_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open trace file: " + path);
    }

    auto fail = [&path](std::uint64_t line_no, const std::string& what) -> IoError {
        std::ostringstream msg;
        msg << path << ":" << line_no << ": " << what;
        return IoError(msg.str());
    };

    std::string line;
    std::uint64_t line_no = 0;
    if (!std::getline(in, line)) {
        throw fail(1, "missing header line");
    }
    ++line_no;
    GateTrace trace;
    try {
        nlohmann::json header = nlohmann::json::parse(line);
        trace.shape.num_layers = header.at("L").get<std::uint32_t>();
        trace.shape.experts_per_layer = header.at("E").get<std::uint32_t>();
        trace.shape.top_k = header.at("k").get<std::uint32_t>();
        trace.shape.batch_size = header.at("B").get<std::uint32_t>();
    } catch (const nlohmann::json::exception& e) {
        throw fail(line_no, std::string("bad header: ") + e.what());
    }
    if (trace.shape.num_layers == 0 || trace.shape.experts_per_layer == 0 ||
        trace.shape.batch_size == 0) {
        throw fail(line_no, "header dimensions must be positive");
    }

    const std::uint32_t layers = trace.shape.num_layers;
    const std::uint32_t experts = trace.shape.experts_per_layer;
    const std::uint32_t batch = trace.shape.batch_size;

    std::uint64_t expect_it = 0;
    std::uint32_t expect_layer = 0;
    std::uint32_t expect_tok = 0;
    TraceIteration current;
    auto fresh_iteration = [&]() {
        TraceIteration iter;
        iter.scores.assign(layers, {});
        iter.predicted.assign(layers, {});
        for (std::uint32_t l = 0; l < layers; ++l) {
            iter.scores[l].assign(batch, {});
            iter.predicted[l].assign(batch, {});
        }
        return iter;
    };
    current = fresh_iteration();
    bool have_records = false;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw fail(line_no, std::string("malformed record: ") + e.what());
        }
        std::uint64_t it;
        std::uint32_t layer;
        std::uint32_t tok;
        std::vector<double> scores;
        try {
            it = rec.at("it").get<std::uint64_t>();
            layer = rec.at("layer").get<std::uint32_t>();
            tok = rec.at("tok").get<std::uint32_t>();
            scores = rec.at("s").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw fail(line_no, std::string("missing field: ") + e.what());
        }
        if (it != expect_it || layer != expect_layer || tok != expect_tok) {
            std::ostringstream msg;
            msg << "record out of order: got (it=" << it << ", layer=" << layer
                << ", tok=" << tok << "), expected (it=" << expect_it
                << ", layer=" << expect_layer << ", tok=" << expect_tok << ")";
            throw fail(line_no, msg.str());
        }
        if (scores.size() != experts) {
            std::ostringstream msg;
            msg << "field 's': expected " << experts << " scores, got " << scores.size();
            throw fail(line_no, msg.str());
        }
        double sum = 0.0;
        for (double s : scores) {
            if (s < 0.0) {
                throw fail(line_no, "field 's': negative score");
            }
            sum += s;
        }
        if (sum > 1.0 + 1e-6) {
            throw fail(line_no, "field 's': scores sum above 1");
        }
        current.scores[layer][tok] = std::move(scores);
        if (rec.contains("pred")) {
            std::vector<double> pred;
            try {
                pred = rec.at("pred").get<std::vector<double>>();
            } catch (const nlohmann::json::exception& e) {
                throw fail(line_no, std::string("field 'pred': ") + e.what());
            }
            if (pred.size() != experts) {
                std::ostringstream msg;
                msg << "field 'pred': expected " << experts << " scores, got " << pred.size();
                throw fail(line_no, msg.str());
            }
            current.predicted[layer][tok] = std::move(pred);
        }
        have_records = true;

        // Advance the canonical (it, layer, tok) cursor.
        if (++expect_tok == batch) {
            expect_tok = 0;
            if (++expect_layer == layers) {
                expect_layer = 0;
                ++expect_it;
                trace.iterations.push_back(std::move(current));
                current = fresh_iteration();
                have_records = false;
            }
        }
    }
    if (have_records || expect_layer != 0 || expect_tok != 0) {
        throw fail(line_no, "truncated trace: incomplete final iteration");
    }
    return trace;
}

std::vector<double> reuse_curve(const GateTrace& trace) {
    if (trace.iterations.size() < 2) {
        throw ConfigError("reuse_curve: needs >=2 iterations");
    }
    const std::uint32_t experts = trace.shape.experts_per_layer;
    const std::uint32_t k = trace.shape.top_k;
    std::vector<std::uint64_t> active_next(experts, 0);
    std::uint64_t samples = 0;

    for (std::size_t it = 0; it + 1 < trace.iterations.size(); ++it) {
        const TraceIteration& cur = trace.iterations[it];
        const TraceIteration& nxt = trace.iterations[it + 1];
        for (std::uint32_t layer = 0; layer < trace.shape.num_layers; ++layer) {
            for (std::uint32_t tok = 0; tok < trace.shape.batch_size; ++tok) {
                const std::vector<double>& cur_scores = cur.scores[layer][tok];
                const std::vector<double>& nxt_scores = nxt.scores[layer][tok];
                std::vector<std::uint32_t> cur_rank = plain_top_k(cur_scores, experts);
                std::vector<std::uint32_t> nxt_active = plain_top_k(nxt_scores, k);
                std::vector<std::uint8_t> active(experts, 0);
                for (std::uint32_t e : nxt_active) {
                    active[e] = 1;
                }
                for (std::uint32_t r = 0; r < experts; ++r) {
                    active_next[r] += active[cur_rank[r]];
                }
                ++samples;
            }
        }
    }
    std::vector<double> curve(experts, 0.0);
    for (std::uint32_t r = 0; r < experts; ++r) {
        curve[r] = static_cast<double>(active_next[r]) / static_cast<double>(samples);
    }
    return curve;
}

std::string fingerprint_bytes(const std::string& bytes) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return std::string(buf);
}

std::string fingerprint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open file for fingerprinting: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return fingerprint_bytes(ss.str());
}

} // namespace moesched
