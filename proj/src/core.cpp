// SPDX-License-Identifier: Apache-2.0
#include "moesched/core.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace moesched {

std::string StageSet::label() const {
    std::string out;
    auto append = [&out](const char* name) {
        if (!out.empty()) {
            out += '+';
        }
        out += name;
    };
    if (ce) append("CE");
    if (er) append("ER");
    if (pre) append("Pre");
    if (ba) append("BA");
    return out.empty() ? "baseline" : out;
}

StageSet StageSet::all() {
    return StageSet{true, true, true, true};
}

ValidationReport validate_config(const SimConfig& cfg) {
    ValidationReport report;
    auto violation = [&report](std::string field, std::string rule) {
        report.violations.push_back({std::move(field), std::move(rule)});
    };
    auto warning = [&report](std::string field, std::string rule) {
        report.warnings.push_back({std::move(field), std::move(rule)});
    };

    const ModelShape& s = cfg.shape;
    if (s.num_layers == 0) violation("shape.num_layers", "must be >= 1");
    if (s.experts_per_layer == 0) violation("shape.experts_per_layer", "must be >= 1");
    if (s.top_k == 0) violation("shape.top_k", "must be >= 1");
    if (s.batch_size == 0) violation("shape.batch_size", "must be >= 1");
    if (s.top_k + 1 > s.experts_per_layer) {
        violation("shape.top_k", "k + 1 <= E required");
    }
    if (!(cfg.router.alpha >= 0.0 && cfg.router.alpha < 1.0)) {
        violation("router.alpha", "must satisfy 0 <= alpha < 1");
    }
    if (cfg.cache.slots_per_layer > s.experts_per_layer) {
        violation("cache.slots_per_layer", "slots_per_layer <= E");
    }
    if (cfg.cache.history_window == 0) {
        violation("cache.history_window", "must be >= 1");
    }
    if (!(cfg.predictor.p_top >= 0.0 && cfg.predictor.p_top <= 1.0)) {
        violation("predictor.p_top", "must be in [0, 1]");
    }
    if (!(cfg.predictor.p_active >= 0.0 && cfg.predictor.p_active <= 1.0)) {
        violation("predictor.p_active", "must be in [0, 1]");
    }
    // The model only makes sense when off-GPU work dominates GPU compute.
    if (cfg.cost.t_load < 10 * cfg.cost.t_gpu) {
        warning("cost.t_load", "expected to be much larger than t_gpu");
    }
    if (cfg.cost.t_cpu_token < 10 * cfg.cost.t_gpu) {
        warning("cost.t_cpu_token", "expected to be much larger than t_gpu");
    }
    return report;
}

std::string to_string(CachePolicy policy) {
    return policy == CachePolicy::ScoreWindow ? "score_window" : "lru";
}

std::string to_string(InitFill fill) {
    switch (fill) {
        case InitFill::FirstSlots: return "first_slots";
        case InitFill::SeededRandom: return "seeded_random";
        case InitFill::Empty: return "empty";
    }
    return "first_slots";
}

namespace {

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

CachePolicy cache_policy_from_string(const std::string& name) {
    const std::string n = to_lower(name);
    if (n == "score" || n == "score_window") {
        return CachePolicy::ScoreWindow;
    }
    if (n == "lru") {
        return CachePolicy::LRU;
    }
    throw ConfigError("unknown cache policy '" + name + "' (expected: score, lru)");
}

InitFill init_fill_from_string(const std::string& name) {
    const std::string n = to_lower(name);
    if (n == "first_slots") {
        return InitFill::FirstSlots;
    }
    if (n == "seeded_random") {
        return InitFill::SeededRandom;
    }
    if (n == "empty") {
        return InitFill::Empty;
    }
    throw ConfigError("unknown init fill '" + name +
                      "' (expected: first_slots, seeded_random, empty)");
}

StageSet parse_stages(const std::string& spec) {
    StageSet stages;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string n = to_lower(item);
        if (n.empty() || n == "none") {
            continue;
        }
        if (n == "ce") {
            stages.ce = true;
        } else if (n == "er") {
            stages.er = true;
        } else if (n == "pre") {
            stages.pre = true;
        } else if (n == "ba") {
            stages.ba = true;
        } else if (n == "all") {
            stages = StageSet::all();
        } else {
            throw ConfigError("unknown stage '" + item + "' (expected: ce, er, pre, ba)");
        }
    }
    return stages;
}

void to_json(nlohmann::json& j, const ModelShape& v) {
    j = {{"num_layers", v.num_layers},
         {"experts_per_layer", v.experts_per_layer},
         {"top_k", v.top_k},
         {"batch_size", v.batch_size}};
}

void from_json(const nlohmann::json& j, ModelShape& v) {
    j.at("num_layers").get_to(v.num_layers);
    j.at("experts_per_layer").get_to(v.experts_per_layer);
    j.at("top_k").get_to(v.top_k);
    j.at("batch_size").get_to(v.batch_size);
}

void to_json(nlohmann::json& j, const RouterConfig& v) {
    j = {{"alpha", v.alpha}};
}

void from_json(const nlohmann::json& j, RouterConfig& v) {
    j.at("alpha").get_to(v.alpha);
}

void to_json(nlohmann::json& j, const CacheConfig& v) {
    j = {{"slots_per_layer", v.slots_per_layer},
         {"history_window", v.history_window},
         {"policy", to_string(v.policy)},
         {"init_fill", to_string(v.init_fill)}};
}

void from_json(const nlohmann::json& j, CacheConfig& v) {
    j.at("slots_per_layer").get_to(v.slots_per_layer);
    j.at("history_window").get_to(v.history_window);
    v.policy = cache_policy_from_string(j.at("policy").get<std::string>());
    if (j.contains("init_fill")) {
        v.init_fill = init_fill_from_string(j.at("init_fill").get<std::string>());
    }
}

void to_json(nlohmann::json& j, const CostModel& v) {
    j = {{"t_attn", v.t_attn},
         {"t_gpu", v.t_gpu},
         {"t_cpu_token", v.t_cpu_token},
         {"t_load", v.t_load},
         {"t_route", v.t_route}};
}

void from_json(const nlohmann::json& j, CostModel& v) {
    j.at("t_attn").get_to(v.t_attn);
    j.at("t_gpu").get_to(v.t_gpu);
    j.at("t_cpu_token").get_to(v.t_cpu_token);
    j.at("t_load").get_to(v.t_load);
    if (j.contains("t_route")) {
        j.at("t_route").get_to(v.t_route);
    }
}

void to_json(nlohmann::json& j, const PredictorConfig& v) {
    j = {{"p_top", v.p_top},
         {"p_active", v.p_active},
         {"queue_depth", v.queue_depth}};
}

void from_json(const nlohmann::json& j, PredictorConfig& v) {
    j.at("p_top").get_to(v.p_top);
    j.at("p_active").get_to(v.p_active);
    if (j.contains("queue_depth")) {
        j.at("queue_depth").get_to(v.queue_depth);
    }
}

void to_json(nlohmann::json& j, const StageSet& v) {
    j = nlohmann::json::array();
    if (v.ce) j.push_back("CE");
    if (v.er) j.push_back("ER");
    if (v.pre) j.push_back("Pre");
    if (v.ba) j.push_back("BA");
}

void from_json(const nlohmann::json& j, StageSet& v) {
    v = StageSet{};
    for (const auto& item : j) {
        const std::string low = to_lower(item.get<std::string>());
        if (low == "ce") v.ce = true;
        else if (low == "er") v.er = true;
        else if (low == "pre") v.pre = true;
        else if (low == "ba") v.ba = true;
        else throw ConfigError("unknown stage '" + item.get<std::string>() + "' in config");
    }
}

void to_json(nlohmann::json& j, const SimConfig& v) {
    j = {{"shape", v.shape},
         {"router", v.router},
         {"cache", v.cache},
         {"cost", v.cost},
         {"predictor", v.predictor},
         {"stages", v.stages},
         {"seed", v.seed}};
}

void from_json(const nlohmann::json& j, SimConfig& v) {
    j.at("shape").get_to(v.shape);
    j.at("router").get_to(v.router);
    j.at("cache").get_to(v.cache);
    j.at("cost").get_to(v.cost);
    j.at("predictor").get_to(v.predictor);
    j.at("stages").get_to(v.stages);
    j.at("seed").get_to(v.seed);
}

SimConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    try {
        return j.get<SimConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config field error in " + path + ": " + e.what());
    }
}

} // namespace moesched
