#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "holotea/stack.hpp"
#include "holotea/synth.hpp"

using namespace holotea;

namespace {

Spot make_spot(std::int64_t id, double a, double b, std::int64_t z) {
    Spot s;
    s.id = id;
    s.a = a;
    s.b = b;
    s.section = z;
    s.embedding = {0.0};
    return s;
}

Section line_section(std::int64_t z, const std::vector<double>& coords) {
    Section sec;
    sec.z = z;
    std::int64_t id = z * 100;
    for (double a : coords) sec.spots.push_back(make_spot(id++, a, 0.0, z));
    return sec;
}

}  // namespace

TEST_CASE("knn graph picks the brute-force nearest neighbor") {
    // Collinear spots at a = 0, 1, 3: the middle spot is closer to 0.
    Section sec = line_section(1, {0.0, 1.0, 3.0});
    NeighborGraph g = build_knn_graph(sec, 1);
    REQUIRE(g.neighbors.size() == 3);
    CHECK(g.neighbors[1] == std::vector<std::int64_t>{0});
    CHECK(g.distances[1][0] == doctest::Approx(1.0));
    CHECK(g.neighbors[0] == std::vector<std::int64_t>{1});
    CHECK(g.neighbors[2] == std::vector<std::int64_t>{1});
}

TEST_CASE("knn graph with k >= N-1 is the complete graph minus self") {
    Section sec = line_section(1, {0.0, 1.0, 2.0, 5.0});
    NeighborGraph g = build_knn_graph(sec, 10);
    for (std::size_t i = 0; i < g.neighbors.size(); ++i) {
        CHECK(g.neighbors[i].size() == 3);
        for (std::int64_t j : g.neighbors[i]) CHECK(j != static_cast<std::int64_t>(i));
    }
}

TEST_CASE("knn graph matches brute-force distances on a random section") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Section sec;
    sec.z = 1;
    for (int i = 0; i < 40; ++i) sec.spots.push_back(make_spot(i, u(rng), u(rng), 1));
    const std::int64_t k = 5;
    NeighborGraph g = build_knn_graph(sec, k);
    for (std::size_t i = 0; i < sec.spots.size(); ++i) {
        // Brute-force: sort all other spots by (distance, id).
        std::vector<std::pair<double, std::int64_t>> all;
        for (std::size_t j = 0; j < sec.spots.size(); ++j) {
            if (j == i) continue;
            double da = sec.spots[i].a - sec.spots[j].a;
            double db = sec.spots[i].b - sec.spots[j].b;
            all.emplace_back(std::sqrt(da * da + db * db), static_cast<std::int64_t>(j));
        }
        std::sort(all.begin(), all.end());
        REQUIRE(g.neighbors[i].size() == static_cast<std::size_t>(k));
        for (std::int64_t n = 0; n < k; ++n) {
            CHECK(g.neighbors[i][n] == all[n].second);
            CHECK(g.distances[i][n] == doctest::Approx(all[n].first).epsilon(1e-12));
        }
    }
}

TEST_CASE("knn graph rejects an empty section") {
    Section sec;
    sec.z = 1;
    CHECK_THROWS_AS(build_knn_graph(sec, 3), EmptyInputError);
}

TEST_CASE("adjacent candidates pick the planar-nearest spots on z+-1") {
    SlideStack stack;
    stack.gene_count = 1;
    stack.embedding_dim = 1;
    stack.sections.push_back(line_section(1, {0.0, 0.4, 0.9, 1.6, 2.5}));
    stack.sections.push_back(line_section(2, {1.0}));
    stack.sections.push_back(line_section(3, {0.8, 1.1, 3.0, 4.0, 5.0}));
    const Spot& q = stack.section(2).spots[0];

    AdjacentCandidates c = adjacent_candidates(stack, q, 2, CandidateSource::Any);
    REQUIRE(c.available);
    REQUIRE(c.candidates.size() == 2);
    // Exhaustive distances: z=1 gives {1.0, 0.6, 0.1, 0.6, 1.5}; z=3 gives
    // {0.2, 0.1, 2.0, 3.0, 4.0}. Two nearest: 0.1 (z=1 idx 2) and 0.1 (z=3 idx 1).
    std::vector<double> ds = c.distances;
    CHECK(ds[0] == doctest::Approx(0.1));
    CHECK(ds[1] == doctest::Approx(0.1));
    for (auto& [z, idx] : c.candidates) CHECK((z == 1 || z == 3));
}

TEST_CASE("single-section stack yields no adjacent candidates") {
    SlideStack stack;
    stack.gene_count = 1;
    stack.embedding_dim = 1;
    stack.sections.push_back(line_section(1, {0.0, 1.0}));
    AdjacentCandidates c =
        adjacent_candidates(stack, stack.section(1).spots[0], 4, CandidateSource::Any);
    CHECK_FALSE(c.available);
    CHECK(c.candidates.empty());
}

TEST_CASE("labeled-expression candidate source skips unlabeled sections") {
    SlideStack stack;
    stack.gene_count = 1;
    stack.embedding_dim = 1;
    stack.sections.push_back(line_section(1, {0.0, 1.0}));  // unlabeled
    stack.sections.push_back(line_section(2, {0.5}));
    stack.sections.push_back(line_section(3, {0.6, 2.0}));
    for (auto& s : stack.section(3).spots) {
        s.expression = {1.0};
        s.counts = {2.0};
    }
    AdjacentCandidates c = adjacent_candidates(stack, stack.section(2).spots[0], 3,
                                               CandidateSource::LabeledExpression);
    REQUIRE(c.available);
    for (auto& [z, idx] : c.candidates) CHECK(z == 3);
}

TEST_CASE("positional features at the frame origin follow the sin0/cos0 pattern") {
    BoundingBox frame{0.0, 1.0, 0.0, 1.0};
    Spot s = make_spot(1, 0.0, 0.0, 1);
    auto f = positional_features(s, frame, 8);
    REQUIRE(f.size() == 8);
    for (std::size_t i = 0; i < f.size(); i += 2) {
        CHECK(f[i] == doctest::Approx(0.0));      // sin(0)
        CHECK(f[i + 1] == doctest::Approx(1.0));  // cos(0)
    }
}

TEST_CASE("identical coordinates give identical positional features") {
    BoundingBox frame{0.0, 2.0, -1.0, 1.0};
    Spot a = make_spot(1, 0.7, 0.3, 1);
    Spot b = make_spot(2, 0.7, 0.3, 2);
    CHECK(positional_features(a, frame, 16) == positional_features(b, frame, 16));
}

TEST_CASE("positional features are invariant under joint translation") {
    BoundingBox frame{0.0, 2.0, 0.0, 3.0};
    Spot s = make_spot(1, 1.1, 2.2, 1);
    auto base = positional_features(s, frame, 16);

    const double da = 5.0, db = -3.0;
    BoundingBox shifted{frame.a_min + da, frame.a_max + da, frame.b_min + db, frame.b_max + db};
    Spot t = make_spot(1, s.a + da, s.b + db, 1);
    auto moved = positional_features(t, shifted, 16);
    REQUIRE(moved.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-12));
}

TEST_CASE("out-of-frame coordinates are clamped and counted") {
    BoundingBox frame{0.0, 1.0, 0.0, 1.0};
    Spot inside = make_spot(1, 1.0, 1.0, 1);
    Spot outside = make_spot(2, 1.5, 1.0, 1);
    std::int64_t clamped = 0;
    auto fo = positional_features(outside, frame, 8, &clamped);
    CHECK(clamped == 1);
    CHECK(fo == positional_features(inside, frame, 8));
}

TEST_CASE("stack save/load round-trips spots, matrices, and labels") {
    SynthConfig cfg;
    cfg.sections = 3;
    cfg.spots = 25;
    cfg.genes = 7;
    cfg.embed_dim = 5;
    cfg.regions = 2;
    cfg.seed = 3;
    SynthResult res = generate_stack(cfg);

    std::string dir = (std::filesystem::temp_directory_path() / "holotea_stack_rt").string();
    std::filesystem::remove_all(dir);
    save_stack(dir, res.stack, &res.labels);
    SlideStack back = load_stack(dir);

    REQUIRE(back.depth() == res.stack.depth());
    CHECK(back.gene_count == res.stack.gene_count);
    CHECK(back.embedding_dim == res.stack.embedding_dim);
    for (std::int64_t z = 1; z <= back.depth(); ++z) {
        const Section& s0 = res.stack.section(z);
        const Section& s1 = back.section(z);
        REQUIRE(s1.spots.size() == s0.spots.size());
        for (std::size_t i = 0; i < s0.spots.size(); ++i) {
            CHECK(s1.spots[i].id == s0.spots[i].id);
            CHECK(s1.spots[i].a == s0.spots[i].a);
            CHECK(s1.spots[i].b == s0.spots[i].b);
            CHECK(s1.spots[i].expression == s0.spots[i].expression);
            CHECK(s1.spots[i].counts == s0.spots[i].counts);
            CHECK(s1.spots[i].embedding == s0.spots[i].embedding);
        }
    }
    auto labels = load_region_labels(dir, back);
    CHECK(labels == res.labels);
    std::filesystem::remove_all(dir);
}

TEST_CASE("expression_matrix reproduces stored rows and rejects unlabeled sections") {
    SynthConfig cfg;
    cfg.sections = 2;
    cfg.spots = 9;
    cfg.genes = 4;
    cfg.seed = 5;
    SynthResult res = generate_stack(cfg);
    Tensor2 m = expression_matrix(res.stack.section(1), cfg.genes);
    REQUIRE(m.rows == cfg.spots);
    REQUIRE(m.cols == cfg.genes);
    for (std::int64_t i = 0; i < m.rows; ++i)
        for (std::int64_t g = 0; g < m.cols; ++g)
            CHECK(m.at(i, g) == res.stack.section(1).spots[i].expression[g]);

    Section bare;
    bare.z = 1;
    bare.spots.push_back(make_spot(1, 0, 0, 1));
    CHECK_THROWS(expression_matrix(bare, 4));
}

TEST_CASE("matrix file round-trip is exact") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor2 m(13, 6);
    for (auto& v : m.data) v = n(rng);
    std::string path = (std::filesystem::temp_directory_path() / "holotea_mat.bin").string();
    save_matrix(path, m);
    Tensor2 back = load_matrix(path);
    CHECK(back.rows == m.rows);
    CHECK(back.cols == m.cols);
    CHECK(back.data == m.data);
    std::filesystem::remove(path);
}
