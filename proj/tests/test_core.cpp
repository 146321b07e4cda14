// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>

#include "moesched/core.hpp"
#include "moesched/rng.hpp"

using namespace moesched;

namespace {

bool has_violation(const ValidationReport& report, const std::string& field) {
    for (const ValidationIssue& v : report.violations) {
        if (v.field == field) {
            return true;
        }
    }
    return false;
}

} // namespace

TEST_CASE("validate: k = E is rejected, beta would be undefined") {
    SimConfig cfg;
    cfg.shape = {4, 8, 8, 1};
    const ValidationReport report = validate_config(cfg);
    CHECK_FALSE(report.ok());
    CHECK(has_violation(report, "shape.top_k"));
}

TEST_CASE("validate: reference-style config passes") {
    SimConfig cfg;
    cfg.shape = {4, 64, 6, 1};
    cfg.router.alpha = 0.35;
    CHECK(validate_config(cfg).ok());
}

TEST_CASE("validate: more slots than experts is rejected") {
    SimConfig cfg;
    cfg.shape = {4, 64, 6, 1};
    cfg.cache.slots_per_layer = 65;
    const ValidationReport report = validate_config(cfg);
    CHECK_FALSE(report.ok());
    CHECK(has_violation(report, "cache.slots_per_layer"));
}

TEST_CASE("validate: alpha bounds") {
    SimConfig cfg;
    cfg.router.alpha = 1.0;
    CHECK(has_violation(validate_config(cfg), "router.alpha"));
    cfg.router.alpha = -0.1;
    CHECK(has_violation(validate_config(cfg), "router.alpha"));
    cfg.router.alpha = 0.0;
    CHECK(validate_config(cfg).ok());
}

TEST_CASE("validate: suspicious cost model only warns") {
    SimConfig cfg;
    cfg.cost.t_load = 2;
    cfg.cost.t_gpu = 1;
    const ValidationReport report = validate_config(cfg);
    CHECK(report.ok());
    CHECK_FALSE(report.warnings.empty());
}

TEST_CASE("config round-trips through JSON losslessly") {
    SimConfig cfg;
    cfg.shape = {4, 64, 6, 3};
    cfg.router.alpha = 0.25;
    cfg.cache = {16, 16, CachePolicy::LRU, InitFill::SeededRandom};
    cfg.cost = {5, 1, 30, 100, 2};
    cfg.predictor = {0.82, 0.95, 4};
    cfg.stages = {true, false, true, false};
    cfg.seed = 0xdeadbeef12345678ULL;

    nlohmann::json j = cfg;
    const SimConfig back = j.get<SimConfig>();
    nlohmann::json j2 = back;
    CHECK(j.dump() == j2.dump());
    CHECK(back.shape == cfg.shape);
    CHECK(back.router.alpha == cfg.router.alpha);
    CHECK(back.cache.policy == CachePolicy::LRU);
    CHECK(back.cache.init_fill == InitFill::SeededRandom);
    CHECK(back.stages == cfg.stages);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("stage labels") {
    CHECK(StageSet{}.label() == "baseline");
    CHECK(StageSet{true, false, false, false}.label() == "CE");
    CHECK(StageSet::all().label() == "CE+ER+Pre+BA");
    CHECK(parse_stages("ce,er,pre,ba").label() == "CE+ER+Pre+BA");
    CHECK(parse_stages("CE,ER").label() == "CE+ER");
    CHECK(parse_stages("").label() == "baseline");
    CHECK(parse_stages("none").label() == "baseline");
    CHECK_THROWS_AS(parse_stages("bogus"), ConfigError);
}

TEST_CASE("queue depth defaults to top_k") {
    SimConfig cfg;
    cfg.shape.top_k = 6;
    CHECK(cfg.effective_queue_depth() == 6);
    cfg.predictor.queue_depth = 3;
    CHECK(cfg.effective_queue_depth() == 3);
}

TEST_CASE("expert ids order lexicographically") {
    CHECK(ExpertId{0, 5} < ExpertId{1, 0});
    CHECK(ExpertId{1, 2} < ExpertId{1, 3});
    CHECK(ExpertId{2, 2} == ExpertId{2, 2});
}

TEST_CASE("rng streams are deterministic and distinct") {
    Rng a(42);
    Rng b(42);
    Rng c(43);
    for (int i = 0; i < 100; ++i) {
        const std::uint64_t va = a.next_u64();
        CHECK(va == b.next_u64());
    }
    CHECK(a.next_u64() != c.next_u64());
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("rng uniform and gamma stay in range") {
    Rng rng(7);
    double gamma_sum = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const double u = rng.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double g = rng.next_gamma(0.25);
        CHECK(g >= 0.0);
        gamma_sum += g;
    }
    // Gamma(0.25) has mean 0.25.
    CHECK(gamma_sum / 2000.0 == doctest::Approx(0.25).epsilon(0.15));
}
