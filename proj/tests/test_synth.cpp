#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "holotea/synth.hpp"

using namespace holotea;

TEST_CASE("generated stacks honor the configured shape") {
    SynthConfig cfg;
    cfg.sections = 4;
    cfg.spots = 37;
    cfg.genes = 9;
    cfg.embed_dim = 6;
    cfg.regions = 3;
    cfg.seed = 1;
    SynthResult res = generate_stack(cfg);
    res.stack.validate();
    REQUIRE(res.stack.depth() == 4);
    CHECK(res.stack.gene_count == 9);
    CHECK(res.stack.embedding_dim == 6);
    REQUIRE(res.labels.size() == 4);
    for (std::int64_t z = 1; z <= 4; ++z) {
        CHECK(res.stack.section(z).spots.size() == 37);
        CHECK(res.labels[z - 1].size() == 37);
        for (std::int64_t r : res.labels[z - 1]) {
            CHECK(r >= 0);
            CHECK(r < 3);
        }
        for (const Spot& s : res.stack.section(z).spots) {
            CHECK(s.labeled());
            CHECK(s.expression.size() == 9);
            CHECK(s.counts.size() == 9);
            CHECK(s.embedding.size() == 6);
        }
    }
}

TEST_CASE("same seed produces bitwise identical stacks") {
    SynthConfig cfg;
    cfg.sections = 3;
    cfg.spots = 20;
    cfg.genes = 6;
    cfg.seed = 42;
    SynthResult a = generate_stack(cfg);
    SynthResult b = generate_stack(cfg);
    CHECK(a.labels == b.labels);
    for (std::int64_t z = 1; z <= 3; ++z)
        for (std::size_t i = 0; i < a.stack.section(z).spots.size(); ++i) {
            const Spot &sa = a.stack.section(z).spots[i], &sb = b.stack.section(z).spots[i];
            CHECK(sa.a == sb.a);
            CHECK(sa.b == sb.b);
            CHECK(sa.expression == sb.expression);
            CHECK(sa.counts == sb.counts);
            CHECK(sa.embedding == sb.embedding);
        }
    SynthConfig other = cfg;
    other.seed = 43;
    SynthResult c = generate_stack(other);
    CHECK(a.stack.section(1).spots[0].counts != c.stack.section(1).spots[0].counts);
}

TEST_CASE("program means carry the marker block structure") {
    SynthConfig cfg;
    cfg.genes = 10;
    cfg.regions = 2;
    cfg.seed = 7;
    Tensor2 means = program_means(cfg);
    REQUIRE(means.rows == 2);
    REQUIRE(means.cols == 10);
    // 20% of 10 genes = 2 markers per region at x8 the modulated base. Marker
    // genes must dominate their own region's profile.
    for (std::int64_t r = 0; r < 2; ++r) {
        double marker_min = 1e300, other_max = 0.0;
        for (std::int64_t g = 0; g < 10; ++g) {
            bool marker = (g >= r * 2 && g < r * 2 + 2);
            if (marker)
                marker_min = std::min(marker_min, means.at(r, g));
            else
                other_max = std::max(other_max, means.at(r, g));
        }
        CHECK(marker_min > other_max);
    }
}

TEST_CASE("region-grouped count means match the program within 5%") {
    SynthConfig cfg;
    cfg.sections = 5;
    cfg.spots = 400;  // >= 500 spots per region across the stack
    cfg.genes = 8;
    cfg.regions = 2;
    cfg.seed = 23;
    SynthResult res = generate_stack(cfg);
    Tensor2 means = program_means(cfg);

    std::map<std::int64_t, std::pair<std::vector<double>, std::int64_t>> agg;
    for (std::int64_t z = 1; z <= cfg.sections; ++z)
        for (std::size_t i = 0; i < res.stack.section(z).spots.size(); ++i) {
            auto& [sum, n] = agg[res.labels[z - 1][i]];
            sum.resize(cfg.genes, 0.0);
            for (std::int64_t g = 0; g < cfg.genes; ++g)
                sum[g] += res.stack.section(z).spots[i].counts[g];
            ++n;
        }
    std::int64_t checked = 0;
    for (auto& [r, pr] : agg) {
        // The 5% tolerance is calibrated for >= 500 spots; Voronoi occupancy
        // is uneven, so smaller regions are skipped.
        if (pr.second < 500) continue;
        ++checked;
        for (std::int64_t g = 0; g < cfg.genes; ++g) {
            double expected = (1.0 - cfg.program.pi) * means.at(r, g);
            double got = pr.first[g] / double(pr.second);
            CHECK(std::abs(got - expected) / expected < 0.05);
        }
    }
    CHECK(checked >= 1);
}

TEST_CASE("smooth stacks align region labels across adjacent sections") {
    SynthConfig cfg;
    cfg.sections = 6;
    cfg.spots = 200;
    cfg.genes = 5;
    cfg.regions = 4;
    cfg.smoothness = 0.9;
    cfg.seed = 31;
    SynthResult res = generate_stack(cfg);

    std::int64_t agree = 0, total = 0;
    for (std::int64_t z = 1; z < cfg.sections; ++z) {
        const Section& cur = res.stack.section(z);
        const Section& nxt = res.stack.section(z + 1);
        for (std::size_t i = 0; i < cur.spots.size(); ++i) {
            // Planar-nearest spot on z+1.
            double best = 1e300;
            std::size_t arg = 0;
            for (std::size_t j = 0; j < nxt.spots.size(); ++j) {
                double da = cur.spots[i].a - nxt.spots[j].a;
                double db = cur.spots[i].b - nxt.spots[j].b;
                double d2 = da * da + db * db;
                if (d2 < best) {
                    best = d2;
                    arg = j;
                }
            }
            ++total;
            if (res.labels[z - 1][i] == res.labels[z][arg]) ++agree;
        }
    }
    CHECK(double(agree) / double(total) > 0.9);
}

TEST_CASE("embedding separation grows with the signal-to-noise ratio") {
    auto separation = [](double snr) {
        SynthConfig cfg;
        cfg.sections = 2;
        cfg.spots = 300;
        cfg.genes = 4;
        cfg.embed_dim = 8;
        cfg.regions = 2;
        cfg.snr = snr;
        cfg.seed = 9;
        SynthResult res = generate_stack(cfg);
        // Mean embedding per region; separation = distance between the two
        // region centroids.
        std::vector<std::vector<double>> cent(2, std::vector<double>(8, 0.0));
        std::vector<double> n(2, 0.0);
        for (std::int64_t z = 1; z <= 2; ++z)
            for (std::size_t i = 0; i < res.stack.section(z).spots.size(); ++i) {
                std::int64_t r = res.labels[z - 1][i];
                n[r] += 1.0;
                for (int d = 0; d < 8; ++d)
                    cent[r][d] += res.stack.section(z).spots[i].embedding[d];
            }
        double dist2 = 0.0;
        for (int d = 0; d < 8; ++d) {
            double delta = cent[0][d] / n[0] - cent[1][d] / n[1];
            dist2 += delta * delta;
        }
        return std::sqrt(dist2);
    };
    double lo = separation(0.5);
    double hi = separation(8.0);
    CHECK(hi > 2.0 * lo);
}

TEST_CASE("invalid synth configurations are rejected") {
    SynthConfig cfg;
    cfg.regions = 0;
    CHECK_THROWS(cfg.validate());
    cfg.regions = 2;
    cfg.smoothness = 1.5;
    CHECK_THROWS(cfg.validate());
    cfg.smoothness = 0.5;
    cfg.spots = 0;
    CHECK_THROWS(cfg.validate());
}
