#include "holotea/denoiser.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace holotea {

namespace {
constexpr double kLnEps = 1e-5;

std::string lp(std::int64_t layer) { return "denoiser/l" + std::to_string(layer) + "/"; }

Var bound_at(const std::map<std::string, Var>& bound, const std::string& name) {
    auto it = bound.find(name);
    if (it == bound.end()) throw std::logic_error("denoiser: missing parameter " + name);
    return it->second;
}

Var pre_norm(Tape& tp, const std::map<std::string, Var>& b, const std::string& prefix, Var x) {
    return layer_norm_fb(tp, x, bound_at(b, prefix + "g"), bound_at(b, prefix + "b"), kLnEps);
}

/// Two-layer GELU feed-forward applied to pre-normed input; caller adds the
/// residual.
Var feed_forward(Tape& tp, const std::map<std::string, Var>& b, const std::string& prefix, Var x,
                 double drop, std::mt19937_64* rng, bool training) {
    Var h = gelu(tp, add_row(tp, matmul_fb(tp, x, bound_at(b, prefix + "w1")),
                             bound_at(b, prefix + "b1")));
    if (training && drop > 0) h = dropout(tp, h, drop, *rng, true);
    return add_row(tp, matmul_fb(tp, h, bound_at(b, prefix + "w2")), bound_at(b, prefix + "b2"));
}

/// Dense multi-head attention: queries from q_in, keys/values from kv_in.
Var mha(Tape& tp, const std::map<std::string, Var>& b, const std::string& prefix, Var q_in,
        Var kv_in, std::int64_t heads) {
    Var q = matmul_fb(tp, q_in, bound_at(b, prefix + "wq"));
    Var k = matmul_fb(tp, kv_in, bound_at(b, prefix + "wk"));
    Var v = matmul_fb(tp, kv_in, bound_at(b, prefix + "wv"));
    const std::int64_t d = tp.value(q).cols;
    const std::int64_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::int64_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(tp, q, h * dh, dh);
        Var kh = slice_cols(tp, k, h * dh, dh);
        Var vh = slice_cols(tp, v, h * dh, dh);
        Var logits = scale(tp, matmul_fb(tp, qh, transpose_fb(tp, kh)), inv_sqrt);
        outs.push_back(matmul_fb(tp, softmax_rows_fb(tp, logits), vh));
    }
    return matmul_fb(tp, concat_cols(tp, outs), bound_at(b, prefix + "wo"));
}

/// Time embedding: sinusoidal features through the shared two-layer MLP;
/// returns a 1 x time_dim row.
Var time_embed(Tape& tp, const std::map<std::string, Var>& b, const DenoiserConfig& cfg,
               double t) {
    Tensor2 base(1, cfg.time_dim);
    const std::vector<double> feats = time_features(t, cfg.time_dim);
    std::copy(feats.begin(), feats.end(), base.data.begin());
    Var x = tp.leaf(std::move(base), false);
    Var h = gelu(tp, add_row(tp, matmul_fb(tp, x, bound_at(b, "denoiser/time_w1")),
                             bound_at(b, "denoiser/time_b1")));
    return add_row(tp, matmul_fb(tp, h, bound_at(b, "denoiser/time_w2")),
                   bound_at(b, "denoiser/time_b2"));
}

/// Neighbor lists with the self edge first, plus matching flat distances.
void self_augmented(const NeighborGraph& graph, std::vector<std::vector<std::int64_t>>& nbrs,
                    std::vector<double>& flat_dists) {
    const std::size_t n = graph.neighbors.size();
    nbrs.assign(n, {});
    flat_dists.clear();
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i].reserve(graph.neighbors[i].size() + 1);
        nbrs[i].push_back(static_cast<std::int64_t>(i));
        flat_dists.push_back(0.0);
        for (std::size_t e = 0; e < graph.neighbors[i].size(); ++e) {
            nbrs[i].push_back(graph.neighbors[i][e]);
            flat_dists.push_back(graph.distances[i][e]);
        }
    }
}

/// Constant radial-basis expansion of flat edge distances.
Tensor2 rbf_expand(const std::vector<double>& dists, const DenoiserConfig& cfg) {
    const std::int64_t bins = cfg.rbf_bins;
    Tensor2 out(static_cast<std::int64_t>(dists.size()), bins);
    const double denom = 2.0 * cfg.rbf_width * cfg.rbf_width;
    for (std::int64_t e = 0; e < out.rows; ++e)
        for (std::int64_t c = 0; c < bins; ++c) {
            const double diff = dists[e] - cfg.rbf_centers[c];
            out.at(e, c) = std::exp(-diff * diff / denom);
        }
    return out;
}

Var control_tokens(Tape& tp, const std::map<std::string, Var>& b, const DenoiserConfig& cfg,
                   const ForwardInputs& in) {
    if (!in.adj_token || !in.proj)
        throw std::logic_error("denoiser: control injection configured but conditioning missing");
    const std::int64_t n = in.x_t->rows;
    check_shape(in.adj_token->rows == n && in.adj_token->cols == cfg.control.proj_rank,
                "denoiser: adjacent token shape mismatch");
    // Coarse gene map from the projected current state, one 3x3 conv, then
    // per-spot bilinear reads. The map itself is constant w.r.t. parameters.
    Tensor2 pxt = matmul(*in.x_t, transpose(in.proj->matrix));  // N x r
    GeneMap gm = build_gene_map(*in.section, in.frame, pxt, cfg.control);
    Var patches = tp.leaf(im2col3x3(gm.values, cfg.control.grid_h, cfg.control.grid_w), false);
    Var conv = gelu(tp, add_row(tp, matmul_fb(tp, patches, bound_at(b, "denoiser/ctl/conv_w")),
                                bound_at(b, "denoiser/ctl/conv_b")));
    Var sampled = grid_sample_fb(tp, conv, cfg.control.grid_h, cfg.control.grid_w, gm.coords);
    Var adj = tp.leaf(*in.adj_token, false);
    Var temb = tile_rows(tp, time_embed(tp, b, cfg, in.t), n);
    Var u_in = concat_cols(tp, {adj, sampled, temb});
    Var h = gelu(tp, add_row(tp, matmul_fb(tp, u_in, bound_at(b, "denoiser/ctl/h_w1")),
                             bound_at(b, "denoiser/ctl/h_b1")));
    return add_row(tp, matmul_fb(tp, h, bound_at(b, "denoiser/ctl/h_w2")),
                   bound_at(b, "denoiser/ctl/h_b2"));
}

bool injects_at(const ControlConfig& cfg, std::int64_t layer) {
    if (cfg.blocks.empty()) return true;
    return std::find(cfg.blocks.begin(), cfg.blocks.end(), layer) != cfg.blocks.end();
}
}  // namespace

void DenoiserConfig::validate() const {
    if (layers < 1 || hidden < 1 || heads < 1 || k < 1 || gene_count < 1 || embed_dim < 0)
        throw std::invalid_argument("DenoiserConfig: counts must be positive");
    if (hidden % heads != 0) throw std::invalid_argument("DenoiserConfig: hidden % heads != 0");
    if (m < 0) throw std::invalid_argument("DenoiserConfig: m must be >= 0");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("DenoiserConfig: dropout");
    if (time_dim % 2 != 0 || pos_dim % 4 != 0)
        throw std::invalid_argument("DenoiserConfig: time_dim even, pos_dim multiple of 4");
    if (static_cast<std::int64_t>(rbf_centers.size()) != rbf_bins || rbf_width <= 0)
        throw std::invalid_argument("DenoiserConfig: rbf basis not fitted");
}

std::vector<double> time_features(double t, std::int64_t dim) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time_features: dim must be even >= 2");
    std::vector<double> out(dim);
    for (std::int64_t j = 0; j < dim / 2; ++j) {
        const double omega = std::acos(-1.0) * std::pow(2.0, static_cast<double>(j));
        out[2 * j] = std::sin(omega * t);
        out[2 * j + 1] = std::cos(omega * t);
    }
    return out;
}

void fit_rbf(DenoiserConfig& cfg, const SlideStack& stack) {
    std::vector<double> dists;
    for (const Section& sec : stack.sections) {
        if (sec.spots.empty()) continue;
        const std::int64_t k = std::min<std::int64_t>(cfg.k,
                                                      static_cast<std::int64_t>(sec.spots.size()) - 1);
        if (k < 1) continue;
        NeighborGraph g = build_knn_graph(sec, k);
        for (const auto& row : g.distances) dists.insert(dists.end(), row.begin(), row.end());
    }
    if (dists.empty()) throw EmptyInputError("fit_rbf: no edges in stack");
    std::sort(dists.begin(), dists.end());
    cfg.rbf_centers.assign(cfg.rbf_bins, 0.0);
    for (std::int64_t i = 0; i < cfg.rbf_bins; ++i) {
        const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(cfg.rbf_bins);
        const std::size_t idx = std::min(dists.size() - 1,
                                         static_cast<std::size_t>(q * static_cast<double>(dists.size())));
        cfg.rbf_centers[i] = dists[idx];
    }
    double spacing = 0.0;
    for (std::int64_t i = 1; i < cfg.rbf_bins; ++i)
        spacing += cfg.rbf_centers[i] - cfg.rbf_centers[i - 1];
    spacing /= std::max<std::int64_t>(cfg.rbf_bins - 1, 1);
    cfg.rbf_width = std::max(spacing, 1e-6);
}

ParamStore init_denoiser(const DenoiserConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const std::int64_t d = cfg.hidden;
    ParamStore p;
    p.add("denoiser/token_w", xavier_init(cfg.token_input_dim(), d, rng));
    p.add("denoiser/token_b", Tensor2(1, d));
    p.add("denoiser/time_w1", xavier_init(cfg.time_dim, cfg.time_dim, rng));
    p.add("denoiser/time_b1", Tensor2(1, cfg.time_dim));
    p.add("denoiser/time_w2", xavier_init(cfg.time_dim, cfg.time_dim, rng));
    p.add("denoiser/time_b2", Tensor2(1, cfg.time_dim));
    if (cfg.m > 0) p.add("denoiser/inducing", randn(cfg.m, d, rng, 0.02));
    auto add_ln = [&](const std::string& prefix) {
        Tensor2 ones(1, d);
        std::fill(ones.data.begin(), ones.data.end(), 1.0);
        p.add(prefix + "g", ones);
        p.add(prefix + "b", Tensor2(1, d));
    };
    auto add_mha = [&](const std::string& prefix) {
        p.add(prefix + "wq", xavier_init(d, d, rng));
        p.add(prefix + "wk", xavier_init(d, d, rng));
        p.add(prefix + "wv", xavier_init(d, d, rng));
        p.add(prefix + "wo", xavier_init(d, d, rng));
    };
    auto add_ff = [&](const std::string& prefix) {
        p.add(prefix + "w1", xavier_init(d, cfg.ff_mult * d, rng));
        p.add(prefix + "b1", Tensor2(1, cfg.ff_mult * d));
        p.add(prefix + "w2", xavier_init(cfg.ff_mult * d, d, rng));
        p.add(prefix + "b2", Tensor2(1, d));
    };
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        const std::string pre = lp(l);
        add_ln(pre + "ln1_");
        add_mha(pre + "loc_");
        // No per-head bias offset: softmax shift invariance would make it a
        // dead parameter.
        p.add(pre + "edge_w", xavier_init(cfg.rbf_bins, cfg.heads, rng));
        if (cfg.use_control) {
            // Zero init: injection starts as the identity and grows with training.
            p.add(pre + "inj_w", Tensor2(cfg.control.token_dim, d));
            p.add(pre + "inj_b", Tensor2(1, d));
        }
        if (cfg.m > 0) {
            add_ln(pre + "gln_s_");
            add_ln(pre + "gln_x_");
            add_mha(pre + "g1_");
            add_ln(pre + "gff_ln_");
            add_ff(pre + "gff_");
            add_ln(pre + "gln_x2_");
            add_ln(pre + "gln_h_");
            add_mha(pre + "g2_");
        }
        add_ln(pre + "ff_ln_");
        add_ff(pre + "ff_");
    }
    if (cfg.use_control) {
        const std::int64_t r = cfg.control.proj_rank;
        const std::int64_t c = cfg.control.channels;
        const std::int64_t du = cfg.control.token_dim;
        p.add("denoiser/ctl/conv_w", xavier_init(9 * r, c, rng));
        p.add("denoiser/ctl/conv_b", Tensor2(1, c));
        p.add("denoiser/ctl/h_w1", xavier_init(r + c + cfg.time_dim, du, rng));
        p.add("denoiser/ctl/h_b1", Tensor2(1, du));
        p.add("denoiser/ctl/h_w2", xavier_init(du, du, rng));
        p.add("denoiser/ctl/h_b2", Tensor2(1, du));
    }
    add_ln("denoiser/head_ln_");
    p.add("denoiser/head_w", xavier_init(d, cfg.gene_count, rng));
    p.add("denoiser/head_b", Tensor2(1, cfg.gene_count));

    // Config echo for checkpoint-time shape validation.
    Tensor2 main(1, 20);
    double* f = main.data.data();
    f[0] = static_cast<double>(cfg.layers);
    f[1] = static_cast<double>(cfg.hidden);
    f[2] = static_cast<double>(cfg.heads);
    f[3] = static_cast<double>(cfg.k);
    f[4] = static_cast<double>(cfg.m);
    f[5] = cfg.dropout;
    f[6] = static_cast<double>(cfg.ff_mult);
    f[7] = static_cast<double>(cfg.gene_count);
    f[8] = static_cast<double>(cfg.embed_dim);
    f[9] = static_cast<double>(cfg.time_dim);
    f[10] = static_cast<double>(cfg.pos_dim);
    f[11] = static_cast<double>(cfg.rbf_bins);
    f[12] = cfg.use_control ? 1.0 : 0.0;
    f[13] = static_cast<double>(cfg.control.grid_h);
    f[14] = static_cast<double>(cfg.control.grid_w);
    f[15] = static_cast<double>(cfg.control.channels);
    f[16] = static_cast<double>(cfg.control.token_dim);
    f[17] = static_cast<double>(cfg.control.proj_rank);
    f[18] = cfg.control.scale;
    f[19] = cfg.control.t_warm;
    p.add("denoiser/cfg/main", main);
    Tensor2 centers(1, cfg.rbf_bins);
    std::copy(cfg.rbf_centers.begin(), cfg.rbf_centers.end(), centers.data.begin());
    p.add("denoiser/cfg/rbf_centers", centers);
    Tensor2 width(1, 1);
    width.data[0] = cfg.rbf_width;
    p.add("denoiser/cfg/rbf_width", width);
    Tensor2 blocks(1, static_cast<std::int64_t>(cfg.control.blocks.size()) + 1);
    blocks.data[0] = static_cast<double>(cfg.control.blocks.size());
    for (std::size_t i = 0; i < cfg.control.blocks.size(); ++i)
        blocks.data[i + 1] = static_cast<double>(cfg.control.blocks[i]);
    p.add("denoiser/cfg/blocks", blocks);
    return p;
}

DenoiserConfig denoiser_config_from(const ParamStore& params) {
    if (!params.has("denoiser/cfg/main"))
        throw std::runtime_error("checkpoint lacks denoiser config records");
    const Tensor2& main = params.get("denoiser/cfg/main");
    check_shape(main.rows == 1 && main.cols == 20, "denoiser config record malformed");
    const double* f = main.data.data();
    DenoiserConfig cfg;
    cfg.layers = static_cast<std::int64_t>(f[0]);
    cfg.hidden = static_cast<std::int64_t>(f[1]);
    cfg.heads = static_cast<std::int64_t>(f[2]);
    cfg.k = static_cast<std::int64_t>(f[3]);
    cfg.m = static_cast<std::int64_t>(f[4]);
    cfg.dropout = f[5];
    cfg.ff_mult = static_cast<std::int64_t>(f[6]);
    cfg.gene_count = static_cast<std::int64_t>(f[7]);
    cfg.embed_dim = static_cast<std::int64_t>(f[8]);
    cfg.time_dim = static_cast<std::int64_t>(f[9]);
    cfg.pos_dim = static_cast<std::int64_t>(f[10]);
    cfg.rbf_bins = static_cast<std::int64_t>(f[11]);
    cfg.use_control = f[12] != 0.0;
    cfg.control.grid_h = static_cast<std::int64_t>(f[13]);
    cfg.control.grid_w = static_cast<std::int64_t>(f[14]);
    cfg.control.channels = static_cast<std::int64_t>(f[15]);
    cfg.control.token_dim = static_cast<std::int64_t>(f[16]);
    cfg.control.proj_rank = static_cast<std::int64_t>(f[17]);
    cfg.control.scale = f[18];
    cfg.control.t_warm = f[19];
    const Tensor2& centers = params.get("denoiser/cfg/rbf_centers");
    cfg.rbf_centers.assign(centers.data.begin(), centers.data.end());
    cfg.rbf_width = params.get("denoiser/cfg/rbf_width").data[0];
    const Tensor2& blocks = params.get("denoiser/cfg/blocks");
    const std::int64_t nb = static_cast<std::int64_t>(blocks.data[0]);
    for (std::int64_t i = 0; i < nb; ++i)
        cfg.control.blocks.push_back(static_cast<std::int64_t>(blocks.data[i + 1]));
    cfg.validate();
    if (params.get("denoiser/token_w").rows != cfg.token_input_dim())
        throw std::runtime_error("denoiser checkpoint shape mismatch vs. config records");
    return cfg;
}

Var build_tokens(Tape& tp, const std::map<std::string, Var>& bound, const DenoiserConfig& cfg,
                 const Tensor2& x_t, double t, const Section& section, const BoundingBox& frame) {
    const std::int64_t n = static_cast<std::int64_t>(section.spots.size());
    check_shape(x_t.rows == n && x_t.cols == cfg.gene_count,
                "build_tokens: x_t shape vs. config");
    Tensor2 side(n, cfg.pos_dim + cfg.embed_dim);
    for (std::int64_t i = 0; i < n; ++i) {
        const Spot& s = section.spots[i];
        check_shape(static_cast<std::int64_t>(s.embedding.size()) == cfg.embed_dim,
                    "build_tokens: embedding dim vs. config");
        const std::vector<double> pos = positional_features(s, frame, cfg.pos_dim);
        for (std::int64_t j = 0; j < cfg.pos_dim; ++j) side.at(i, j) = pos[j];
        for (std::int64_t j = 0; j < cfg.embed_dim; ++j)
            side.at(i, cfg.pos_dim + j) = s.embedding[j];
    }
    Var xt = tp.leaf(x_t, false);
    Var temb = tile_rows(tp, time_embed(tp, bound, cfg, t), n);
    Var feats = concat_cols(tp, {xt, temb, tp.leaf(std::move(side), false)});
    return add_row(tp, matmul_fb(tp, feats, bound_at(bound, "denoiser/token_w")),
                   bound_at(bound, "denoiser/token_b"));
}

Var denoise_forward(Tape& tp, const std::map<std::string, Var>& bound,
                    const DenoiserConfig& cfg, const ForwardInputs& in) {
    cfg.validate();
    if (!in.x_t || !in.section || !in.graph)
        throw std::invalid_argument("denoise_forward: missing inputs");
    if (in.training && cfg.dropout > 0 && !in.rng)
        throw std::invalid_argument("denoise_forward: training mode needs an rng for dropout");

    std::vector<std::vector<std::int64_t>> nbrs;
    std::vector<double> flat_dists;
    self_augmented(*in.graph, nbrs, flat_dists);
    Var rbf = tp.leaf(rbf_expand(flat_dists, cfg), false);

    Var u{-1};
    double gate = 0.0;
    if (cfg.use_control) {
        u = control_tokens(tp, bound, cfg, in);
        gate = control_gate(in.t, cfg.control.t_warm, cfg.control.scale);
    }

    Var x = build_tokens(tp, bound, cfg, *in.x_t, in.t, *in.section, in.frame);
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        const std::string pre = lp(l);
        // Local kNN attention with per-edge radial-basis biases.
        {
            Var xn = pre_norm(tp, bound, pre + "ln1_", x);
            Var q = matmul_fb(tp, xn, bound_at(bound, pre + "loc_wq"));
            Var k = matmul_fb(tp, xn, bound_at(bound, pre + "loc_wk"));
            Var v = matmul_fb(tp, xn, bound_at(bound, pre + "loc_wv"));
            Var bias = matmul_fb(tp, rbf, bound_at(bound, pre + "edge_w"));
            Var att = local_attention(tp, q, k, v, bias, nbrs, cfg.heads);
            Var o = matmul_fb(tp, att, bound_at(bound, pre + "loc_wo"));
            if (in.training && cfg.dropout > 0) o = dropout(tp, o, cfg.dropout, *in.rng, true);
            x = add(tp, x, o);
        }
        if (cfg.use_control && injects_at(cfg.control, l)) {
            Var proj_u = add_row(tp, matmul_fb(tp, u, bound_at(bound, pre + "inj_w")),
                                 bound_at(bound, pre + "inj_b"));
            x = add(tp, x, scale(tp, proj_u, gate));
        }
        if (cfg.m > 0) {
            // Read: inducing tokens summarize all spots; write: spots attend
            // to the summary. Pre-norm residuals around both stages.
            Var s = bound_at(bound, "denoiser/inducing");
            Var sn = pre_norm(tp, bound, pre + "gln_s_", s);
            Var xn = pre_norm(tp, bound, pre + "gln_x_", x);
            Var sp = add(tp, s, mha(tp, bound, pre + "g1_", sn, xn, cfg.heads));
            Var h = add(tp, sp,
                        feed_forward(tp, bound, pre + "gff_",
                                     pre_norm(tp, bound, pre + "gff_ln_", sp), cfg.dropout,
                                     in.rng, in.training));
            Var xn2 = pre_norm(tp, bound, pre + "gln_x2_", x);
            Var hn = pre_norm(tp, bound, pre + "gln_h_", h);
            x = add(tp, x, mha(tp, bound, pre + "g2_", xn2, hn, cfg.heads));
        }
        x = add(tp, x,
                feed_forward(tp, bound, pre + "ff_", pre_norm(tp, bound, pre + "ff_ln_", x),
                             cfg.dropout, in.rng, in.training));
    }
    Var xn = pre_norm(tp, bound, "denoiser/head_ln_", x);
    return add_row(tp, matmul_fb(tp, xn, bound_at(bound, "denoiser/head_w")),
                   bound_at(bound, "denoiser/head_b"));
}

Tensor2 denoise_eval(const ParamStore& params, const DenoiserConfig& cfg,
                     const ForwardInputs& in) {
    if (in.training) throw std::invalid_argument("denoise_eval: eval mode only");
    Tape tp;
    auto bound = bind_params(tp, params, /*requires_grad=*/false);
    Var y = denoise_forward(tp, bound, cfg, in);
    return tp.value(y);
}

double gsa_flops(std::int64_t n, std::int64_t m, std::int64_t d) {
    const double nn = static_cast<double>(n), mm = static_cast<double>(m),
                 dd = static_cast<double>(d);
    // Read: kv projections over N, logits + weighted sum m*N*d each.
    // Write: q/out projections over N, logits + weighted sum N*m*d each.
    const double mults = 3.0 * nn * dd * dd + 3.0 * mm * dd * dd + 4.0 * nn * mm * dd +
                         2.0 * mm * dd * dd;
    return 2.0 * mults;
}

double dense_attention_flops(std::int64_t n, std::int64_t d) {
    const double nn = static_cast<double>(n), dd = static_cast<double>(d);
    return 2.0 * (4.0 * nn * dd * dd + 2.0 * nn * nn * dd);
}

double bench_gsa_forward(std::int64_t n, std::int64_t m, std::int64_t d, std::int64_t heads,
                         std::int64_t reps, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamStore p;
    p.add("b/inducing", randn(m, d, rng, 0.02));
    auto add_mha = [&](const std::string& prefix) {
        p.add(prefix + "wq", xavier_init(d, d, rng));
        p.add(prefix + "wk", xavier_init(d, d, rng));
        p.add(prefix + "wv", xavier_init(d, d, rng));
        p.add(prefix + "wo", xavier_init(d, d, rng));
    };
    add_mha("b/g1_");
    add_mha("b/g2_");
    const Tensor2 x = randn(n, d, rng, 1.0);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::int64_t r = 0; r < reps; ++r) {
        Tape tp;
        auto bound = bind_params(tp, p, false);
        Var xv = tp.leaf(x, false);
        Var h = add(tp, bound.at("b/inducing"),
                    mha(tp, bound, "b/g1_", bound.at("b/inducing"), xv, heads));
        Var y = add(tp, xv, mha(tp, bound, "b/g2_", xv, h, heads));
        (void)tp.value(y);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double bench_dense_forward(std::int64_t n, std::int64_t d, std::int64_t heads, std::int64_t reps,
                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Tensor2 wq = xavier_init(d, d, rng);
    const Tensor2 wk = xavier_init(d, d, rng);
    const Tensor2 wv = xavier_init(d, d, rng);
    const Tensor2 x = randn(n, d, rng, 1.0);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::int64_t r = 0; r < reps; ++r) {
        Tensor2 y = dense_attention_eval(x, wq, wk, wv, heads);
        (void)y;
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor2 dense_attention_eval(const Tensor2& x, const Tensor2& wq, const Tensor2& wk,
                             const Tensor2& wv, std::int64_t heads) {
    const Tensor2 q = matmul(x, wq);
    const Tensor2 k = matmul(x, wk);
    const Tensor2 v = matmul(x, wv);
    const std::int64_t n = x.rows, d = q.cols, dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor2 out(n, d);
    std::vector<double> logits(n);
    for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t i = 0; i < n; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::int64_t c = 0; c < dh; ++c)
                    s += q.at(i, h * dh + c) * k.at(j, h * dh + c);
                logits[j] = s * inv_sqrt;
                mx = std::max(mx, logits[j]);
            }
            double z = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                logits[j] = std::exp(logits[j] - mx);
                z += logits[j];
            }
            for (std::int64_t j = 0; j < n; ++j) {
                const double a = logits[j] / z;
                for (std::int64_t c = 0; c < dh; ++c)
                    out.at(i, h * dh + c) += a * v.at(j, h * dh + c);
            }
        }
    }
    return out;
}

}  // namespace holotea
