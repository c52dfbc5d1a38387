#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "holotea/denoiser.hpp"
#include "holotea/flow.hpp"
#include "holotea/synth.hpp"

using namespace holotea;

namespace {

// Small config that keeps eval-mode forwards cheap.
DenoiserConfig small_config(std::int64_t genes, std::int64_t embed_dim, bool control) {
    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.k = 4;
    cfg.m = 4;
    cfg.dropout = 0.0;
    cfg.ff_mult = 2;
    cfg.gene_count = genes;
    cfg.embed_dim = embed_dim;
    cfg.time_dim = 8;
    cfg.pos_dim = 8;
    cfg.rbf_bins = 4;
    cfg.rbf_centers = {0.05, 0.1, 0.2, 0.4};
    cfg.rbf_width = 0.1;
    cfg.use_control = control;
    cfg.control.grid_h = 6;
    cfg.control.grid_w = 6;
    cfg.control.channels = 3;
    cfg.control.token_dim = 4;
    cfg.control.proj_rank = 3;
    return cfg;
}

struct Fixture {
    SynthResult res;
    DenoiserConfig cfg;
    ParamStore params;
    NeighborGraph graph;
    GeneProjection proj;
    Tensor2 x_t;
    Tensor2 adj;

    explicit Fixture(bool control, std::uint64_t seed = 42) {
        SynthConfig scfg;
        scfg.sections = 3;
        scfg.spots = 24;
        scfg.genes = 6;
        scfg.embed_dim = 4;
        scfg.seed = 7;
        res = generate_stack(scfg);
        cfg = small_config(scfg.genes, scfg.embed_dim, control);
        std::mt19937_64 rng(seed);
        params = init_denoiser(cfg, rng);
        // Zero-initialized injection weights hide the control path; randomize
        // them so conditioning tests observe a live signal.
        for (const auto& name : params.names())
            if (name.find("inj") != std::string::npos)
                for (auto& v : params.get(name).data) v = 0.05 * double((rng() % 100)) - 2.5;
        graph = build_knn_graph(res.stack.section(2), cfg.k);
        proj = top_variance_projection(res.stack, {1, 2, 3}, cfg.control.proj_rank);
        x_t = expression_matrix(res.stack.section(2), scfg.genes);
        BlendConfig blend;
        adj = adjacent_token_matrix(res.stack, 2, proj, blend, 4, TokenMode::Train, nullptr);
    }

    ForwardInputs inputs(double t) const {
        ForwardInputs in;
        in.x_t = &x_t;
        in.t = t;
        in.section = &res.stack.section(2);
        in.frame = res.stack.frame();
        in.graph = &graph;
        in.adj_token = &adj;
        in.proj = &proj;
        return in;
    }
};

}  // namespace

TEST_CASE("time features start with the (sin 0, cos 0) pattern") {
    auto f = time_features(0.0, 8);
    REQUIRE(f.size() == 8);
    CHECK(f[0] == doctest::Approx(0.0));
    CHECK(f[1] == doctest::Approx(1.0));
    auto g = time_features(0.37, 8);
    CHECK(f != g);
}

TEST_CASE("fit_rbf freezes centers inside the observed edge-distance range") {
    SynthConfig scfg;
    scfg.sections = 2;
    scfg.spots = 40;
    scfg.genes = 4;
    scfg.embed_dim = 3;
    scfg.seed = 3;
    SynthResult res = generate_stack(scfg);
    DenoiserConfig cfg = small_config(4, 3, false);
    fit_rbf(cfg, res.stack);
    REQUIRE(static_cast<std::int64_t>(cfg.rbf_centers.size()) == cfg.rbf_bins);
    CHECK(std::is_sorted(cfg.rbf_centers.begin(), cfg.rbf_centers.end()));
    CHECK(cfg.rbf_width > 0.0);

    double dmin = 1e300, dmax = 0.0;
    for (std::int64_t z = 1; z <= 2; ++z) {
        NeighborGraph g = build_knn_graph(res.stack.section(z), cfg.k);
        for (const auto& row : g.distances)
            for (double d : row) {
                dmin = std::min(dmin, d);
                dmax = std::max(dmax, d);
            }
    }
    CHECK(cfg.rbf_centers.front() >= dmin - 1e-12);
    CHECK(cfg.rbf_centers.back() <= dmax + 1e-12);
}

TEST_CASE("denoiser config round-trips through its checkpoint records") {
    DenoiserConfig cfg = small_config(6, 4, true);
    std::mt19937_64 rng(1);
    ParamStore params = init_denoiser(cfg, rng);
    DenoiserConfig back = denoiser_config_from(params);
    CHECK(back.layers == cfg.layers);
    CHECK(back.hidden == cfg.hidden);
    CHECK(back.heads == cfg.heads);
    CHECK(back.k == cfg.k);
    CHECK(back.m == cfg.m);
    CHECK(back.gene_count == cfg.gene_count);
    CHECK(back.embed_dim == cfg.embed_dim);
    CHECK(back.rbf_centers == cfg.rbf_centers);
    CHECK(back.rbf_width == cfg.rbf_width);
    CHECK(back.use_control == cfg.use_control);
    CHECK(back.control.grid_h == cfg.control.grid_h);
    CHECK(back.control.proj_rank == cfg.control.proj_rank);
}

TEST_CASE("build_tokens produces one hidden-width row per spot") {
    Fixture f(false);
    Tape tp;
    auto bound = bind_params(tp, f.params, false);
    Var tokens = build_tokens(tp, bound, f.cfg, f.x_t, 0.5, f.res.stack.section(2),
                              f.res.stack.frame());
    CHECK(tp.value(tokens).rows == f.x_t.rows);
    CHECK(tp.value(tokens).cols == f.cfg.hidden);
}

TEST_CASE("local attention rows are convex: all-ones values pass through") {
    Tape t;
    std::mt19937_64 rng(2);
    const std::int64_t n = 6, heads = 2, d = 8;
    Var q = t.leaf(randn(n, d, rng, 1.0));
    Var k = t.leaf(randn(n, d, rng, 1.0));
    Var v = t.leaf(Tensor2(n, d, 1.0));
    std::vector<std::vector<std::int64_t>> nb(n);
    std::int64_t edges = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        nb[i] = {i, (i + 1) % n, (i + 2) % n};
        edges += 3;
    }
    Var bias = t.leaf(Tensor2(edges, heads));
    Var out = local_attention(t, q, k, v, bias, nb, heads);
    for (double x : t.value(out).data) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("local attention with a single masked-self neighbor copies its value") {
    Tape t;
    std::mt19937_64 rng(4);
    const std::int64_t n = 3, heads = 1, d = 4;
    Var q = t.leaf(randn(n, d, rng, 1.0));
    Var k = t.leaf(randn(n, d, rng, 1.0));
    Tensor2 values = randn(n, d, rng, 1.0);
    Var v = t.leaf(values);
    std::vector<std::vector<std::int64_t>> nb = {{1}, {2}, {0}};
    Var bias = t.leaf(Tensor2(3, heads));
    Tensor2 out = t.value(local_attention(t, q, k, v, bias, nb, heads));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < d; ++c)
            CHECK(out.at(i, c) == doctest::Approx(values.at(nb[i][0], c)).epsilon(1e-12));
}

TEST_CASE("a -1e9 bias suppresses an edge below 1e-12") {
    Tape t;
    std::mt19937_64 rng(6);
    const std::int64_t heads = 1, d = 4;
    Var q = t.leaf(randn(2, d, rng, 1.0));
    Var k = t.leaf(randn(2, d, rng, 1.0));
    Tensor2 values = Tensor2::from(2, d, {1, 1, 1, 1, -1, -1, -1, -1});
    Var v = t.leaf(values);
    std::vector<std::vector<std::int64_t>> nb = {{0, 1}, {0, 1}};
    Tensor2 b(4, heads);
    b.at(1, 0) = -1e9;  // spot 0's edge to spot 1
    Var bias = t.leaf(b);
    Tensor2 out = t.value(local_attention(t, q, k, v, bias, nb, heads));
    // Row 0 attends (almost) only to spot 0's value of +1.
    for (std::int64_t c = 0; c < d; ++c) CHECK(std::abs(out.at(0, c) - 1.0) < 1e-12);
}

TEST_CASE("denoiser eval output shape and bitwise repeatability") {
    Fixture f(true);
    ForwardInputs in = f.inputs(0.5);
    Tensor2 a = denoise_eval(f.params, f.cfg, in);
    Tensor2 b = denoise_eval(f.params, f.cfg, in);
    CHECK(a.rows == f.x_t.rows);
    CHECK(a.cols == f.cfg.gene_count);
    CHECK(a.data == b.data);
    CHECK(a.all_finite());
}

TEST_CASE("denoiser is permutation equivariant") {
    Fixture f(true);
    const std::int64_t n = f.x_t.rows;
    Tensor2 base = denoise_eval(f.params, f.cfg, f.inputs(0.6));

    std::vector<std::int64_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(99);
    std::shuffle(perm.begin(), perm.end(), rng);

    Fixture g(true);
    Section& sec = g.res.stack.section(2);
    Section orig = sec;
    for (std::int64_t i = 0; i < n; ++i) {
        sec.spots[i] = orig.spots[perm[i]];
        for (std::int64_t c = 0; c < g.x_t.cols; ++c)
            g.x_t.at(i, c) = f.x_t.at(perm[i], c);
        for (std::int64_t c = 0; c < g.adj.cols; ++c)
            g.adj.at(i, c) = f.adj.at(perm[i], c);
    }
    g.graph = build_knn_graph(sec, g.cfg.k);
    Tensor2 permuted = denoise_eval(g.params, g.cfg, g.inputs(0.6));

    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < base.cols; ++c)
            CHECK(permuted.at(i, c) == doctest::Approx(base.at(perm[i], c)).epsilon(1e-9));
}

TEST_CASE("time conditioning is live") {
    Fixture f(true);
    Tensor2 a = denoise_eval(f.params, f.cfg, f.inputs(0.2));
    Tensor2 b = denoise_eval(f.params, f.cfg, f.inputs(0.8));
    double diff = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.data[i] - b.data[i]));
    CHECK(diff > 1e-8);
}

TEST_CASE("the control gate silences conditioning at t=0") {
    Fixture f(true);
    ForwardInputs in = f.inputs(0.0);
    Tensor2 a = denoise_eval(f.params, f.cfg, in);
    Tensor2 other_adj = f.adj;
    for (auto& v : other_adj.data) v += 3.0;
    in.adj_token = &other_adj;
    Tensor2 b = denoise_eval(f.params, f.cfg, in);
    CHECK(a.data == b.data);

    // Past warm-up the same perturbation must register.
    ForwardInputs warm = f.inputs(0.9);
    Tensor2 c = denoise_eval(f.params, f.cfg, warm);
    warm.adj_token = &other_adj;
    Tensor2 d = denoise_eval(f.params, f.cfg, warm);
    CHECK(c.data != d.data);
}

TEST_CASE("m=0 disables the inducing stage and still runs") {
    Fixture f(false);
    f.cfg.m = 0;
    std::mt19937_64 rng(5);
    f.params = init_denoiser(f.cfg, rng);
    for (const auto& name : f.params.names()) CHECK(name.find("gsa") == std::string::npos);
    Tensor2 out = denoise_eval(f.params, f.cfg, f.inputs(0.5));
    CHECK(out.rows == f.x_t.rows);
    CHECK(out.cols == f.cfg.gene_count);
    CHECK(out.all_finite());
}

TEST_CASE("analytic FLOP counts scale linearly (GSA) and quadratically (dense)") {
    const std::int64_t m = 16, d = 64;
    double r_gsa = gsa_flops(4000, m, d) / gsa_flops(2000, m, d);
    CHECK(r_gsa > 1.9);
    CHECK(r_gsa < 2.1);
    double r_dense = dense_attention_flops(4000, d) / dense_attention_flops(2000, d);
    CHECK(r_dense > 3.5);
    CHECK(r_dense <= 4.0 + 1e-9);
}

TEST_CASE("dense attention reference matches a scalar-loop oracle") {
    std::mt19937_64 rng(11);
    const std::int64_t n = 7, heads = 2, d = 8, dh = d / heads;
    Tensor2 x = randn(n, d, rng, 1.0);
    Tensor2 wq = randn(d, d, rng, 0.3), wk = randn(d, d, rng, 0.3), wv = randn(d, d, rng, 0.3);
    Tensor2 out = dense_attention_eval(x, wq, wk, wv, heads);
    REQUIRE(out.rows == n);
    REQUIRE(out.cols == d);

    Tensor2 q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
    const double inv = 1.0 / std::sqrt(double(dh));
    for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t i = 0; i < n; ++i) {
            std::vector<double> logits(n);
            double mx = -1e300;
            for (std::int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::int64_t c = 0; c < dh; ++c)
                    s += q.at(i, h * dh + c) * k.at(j, h * dh + c);
                logits[j] = s * inv;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                denom += l;
            }
            for (std::int64_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < n; ++j) acc += logits[j] / denom * v.at(j, h * dh + c);
                CHECK(out.at(i, h * dh + c) == doctest::Approx(acc).epsilon(1e-10));
            }
        }
}

TEST_CASE("full denoiser gradients match finite differences on the toy stack") {
    GradCheckResult res = denoiser_grad_check(17);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_err < 1e-4);
}
