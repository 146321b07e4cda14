// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "moesched/router.hpp"
#include "moesched/trace.hpp"

using namespace moesched;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("generated vectors satisfy the gate invariants") {
    ModelShape shape{2, 16, 4, 2};
    GateTrace trace = generate_trace(shape, SkewProfile{}, 50, 3);
    REQUIRE(trace.iterations.size() == 50);
    for (const TraceIteration& iter : trace.iterations) {
        REQUIRE(iter.scores.size() == 2);
        for (const auto& layer : iter.scores) {
            REQUIRE(layer.size() == 2);
            for (const auto& vec : layer) {
                REQUIRE(vec.size() == 16);
                double sum = 0.0;
                for (double s : vec) {
                    CHECK(s >= 0.0);
                    sum += s;
                }
                CHECK(sum <= 1.0 + 1e-6);
            }
        }
    }
}

TEST_CASE("zero iterations is a valid empty trace") {
    ModelShape shape{2, 8, 2, 1};
    GateTrace trace = generate_trace(shape, SkewProfile{}, 0, 3);
    CHECK(trace.iterations.empty());
}

TEST_CASE("full persistence with a single hot expert pins the top-1") {
    ModelShape shape{1, 16, 2, 1};
    SkewProfile profile;
    profile.hot_fraction = 1.0 / 16.0;
    profile.persistence = 1.0;
    GateTrace trace = generate_trace(shape, profile, 40, 11);
    std::uint32_t first = plain_top_k(trace.iterations[0].scores[0][0], 1)[0];
    for (const TraceIteration& iter : trace.iterations) {
        CHECK(plain_top_k(iter.scores[0][0], 1)[0] == first);
    }
}

TEST_CASE("same seed, same bytes; different seed, different trace") {
    ModelShape shape{2, 16, 4, 1};
    const std::string path_a = temp_path("moesched_trace_a.jsonl");
    const std::string path_b = temp_path("moesched_trace_b.jsonl");
    save_trace(generate_trace(shape, SkewProfile{}, 20, 7), path_a);
    save_trace(generate_trace(shape, SkewProfile{}, 20, 7), path_b);
    CHECK(slurp(path_a) == slurp(path_b));
    CHECK(fingerprint_file(path_a) == fingerprint_file(path_b));

    save_trace(generate_trace(shape, SkewProfile{}, 20, 8), path_b);
    CHECK(slurp(path_a) != slurp(path_b));
}

TEST_CASE("save/load round-trips exactly") {
    ModelShape shape{3, 12, 3, 2};
    GateTrace trace = generate_trace(shape, SkewProfile{}, 15, 5);
    // Exercise the optional prediction channel too.
    trace.iterations[2].predicted[1][0] = trace.iterations[2].scores[1][0];
    const std::string path = temp_path("moesched_trace_rt.jsonl");
    save_trace(trace, path);
    GateTrace loaded = load_trace(path);
    CHECK(loaded == trace);
}

TEST_CASE("loader reports the offending line") {
    const std::string path = temp_path("moesched_trace_bad.jsonl");
    ModelShape shape{1, 4, 2, 1};
    GateTrace trace = generate_trace(shape, SkewProfile{}, 3, 1);
    save_trace(trace, path);

    SUBCASE("wrong vector length on line 3") {
        std::ifstream in(path);
        std::string all;
        std::string line;
        int n = 0;
        while (std::getline(in, line)) {
            if (++n == 3) {
                nlohmann::json rec = nlohmann::json::parse(line);
                rec["s"] = std::vector<double>{0.1, 0.2, 0.3}; // E-1 entries
                line = rec.dump();
            }
            all += line + "\n";
        }
        in.close();
        std::ofstream out(path, std::ios::binary);
        out << all;
        out.close();
        CHECK_THROWS_WITH_AS(load_trace(path),
                             doctest::Contains(":3: field 's': expected 4 scores"), IoError);
    }

    SUBCASE("negative score is rejected") {
        std::ofstream out(path, std::ios::binary);
        out << R"({"L":1,"E":4,"k":2,"B":1})" << "\n";
        out << R"({"it":0,"layer":0,"tok":0,"s":[0.5,-0.1,0.3,0.2]})" << "\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_trace(path), doctest::Contains("negative score"), IoError);
    }

    SUBCASE("malformed json names the line") {
        std::ofstream out(path, std::ios::binary);
        out << R"({"L":1,"E":4,"k":2,"B":1})" << "\n";
        out << "not json\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_trace(path), doctest::Contains(":2:"), IoError);
    }

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_trace(temp_path("moesched_no_such_trace.jsonl")), IoError);
    }
}

TEST_CASE("missing predictions load as absent") {
    ModelShape shape{1, 4, 2, 1};
    GateTrace trace = generate_trace(shape, SkewProfile{}, 2, 1);
    const std::string path = temp_path("moesched_trace_nopred.jsonl");
    save_trace(trace, path);
    GateTrace loaded = load_trace(path);
    for (const TraceIteration& iter : loaded.iterations) {
        for (const auto& layer : iter.predicted) {
            for (const auto& vec : layer) {
                CHECK(vec.empty());
            }
        }
    }
}

TEST_CASE("reuse curve: degenerate persistence keeps rank 1 at probability 1") {
    ModelShape shape{1, 16, 2, 1};
    SkewProfile profile;
    profile.hot_fraction = 1.0 / 16.0;
    profile.persistence = 1.0;
    GateTrace trace = generate_trace(shape, profile, 60, 11);
    std::vector<double> curve = reuse_curve(trace);
    CHECK(curve[0] == doctest::Approx(1.0));
}

TEST_CASE("reuse curve: zero persistence makes every rank reuse at k/E") {
    ModelShape shape{1, 8, 2, 1};
    SkewProfile profile;
    profile.persistence = 0.0;
    profile.hot_fraction = 0.25;
    GateTrace trace = generate_trace(shape, profile, 10000, 17);
    std::vector<double> curve = reuse_curve(trace);
    for (double p : curve) {
        CHECK(std::abs(p - 2.0 / 8.0) <= 0.05);
    }
}

TEST_CASE("reuse curve: default profile decays from rank 1 to rank E") {
    ModelShape shape{2, 64, 6, 1};
    GateTrace trace = generate_trace(shape, SkewProfile{}, 800, 7);
    std::vector<double> curve = reuse_curve(trace);
    CHECK(curve.front() - curve.back() >= 0.2);
}

TEST_CASE("reuse curve needs two iterations") {
    ModelShape shape{1, 8, 2, 1};
    GateTrace trace = generate_trace(shape, SkewProfile{}, 1, 1);
    CHECK_THROWS_WITH_AS(reuse_curve(trace), doctest::Contains(">=2 iterations"), ConfigError);
}

TEST_CASE("default profile: rank curve decreasing, few experts above the band") {
    ModelShape shape{2, 64, 6, 1};
    GateTrace trace = generate_trace(shape, SkewProfile{}, 1000, 7);

    std::vector<double> mean_by_rank(64, 0.0);
    double above_band = 0.0;
    std::uint64_t both_classes = 0;
    std::uint64_t samples = 0;
    for (const TraceIteration& iter : trace.iterations) {
        for (const auto& layer : iter.scores) {
            for (const auto& vec : layer) {
                const Classification cls = classify(vec, 6, 0.25);
                const std::vector<std::uint32_t> order = plain_top_k(vec, 64);
                for (std::uint32_t r = 0; r < 64; ++r) {
                    mean_by_rank[r] += vec[order[r]];
                }
                above_band += static_cast<double>(cls.top_score.size());
                if (!cls.top_score.empty() && !cls.low_score.empty()) {
                    ++both_classes;
                }
                ++samples;
            }
        }
    }
    for (std::uint32_t r = 0; r + 1 < 64; ++r) {
        CHECK(mean_by_rank[r] >= mean_by_rank[r + 1]);
    }
    // Mean count of actives above (1+0.25)*beta stays below k/2.
    CHECK(above_band / static_cast<double>(samples) < 3.0);
    // Both router classes appear together in >= 80% of the vectors.
    CHECK(static_cast<double>(both_classes) / static_cast<double>(samples) >= 0.8);
}
