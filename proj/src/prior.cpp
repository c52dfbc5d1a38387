#include "holotea/prior.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace holotea {

PriorKind prior_kind_from_string(const std::string& s) {
    if (s == "fixed-zinb") return PriorKind::FixedZinb;
    if (s == "learned-zinb") return PriorKind::LearnedZinb;
    if (s == "spatial-empirical") return PriorKind::SpatialEmpirical;
    throw std::invalid_argument("unknown prior kind: " + s);
}

std::string to_string(PriorKind k) {
    switch (k) {
        case PriorKind::FixedZinb: return "fixed-zinb";
        case PriorKind::LearnedZinb: return "learned-zinb";
        case PriorKind::SpatialEmpirical: return "spatial-empirical";
    }
    return "?";
}

Tensor2 prior_features(const Section& section, const BoundingBox& frame, std::int64_t pos_dim) {
    const std::int64_t n = static_cast<std::int64_t>(section.spots.size());
    const std::int64_t d = static_cast<std::int64_t>(section.spots.empty()
                                                         ? 0
                                                         : section.spots[0].embedding.size());
    Tensor2 f(n, d + pos_dim);
    for (std::int64_t i = 0; i < n; ++i) {
        const Spot& s = section.spots[i];
        std::copy(s.embedding.begin(), s.embedding.end(), f.data.begin() + i * f.cols);
        const auto pos = positional_features(s, frame, pos_dim);
        std::copy(pos.begin(), pos.end(), f.data.begin() + i * f.cols + d);
    }
    return f;
}

ParamStore init_prior_net(const PriorNetConfig& cfg, std::int64_t feature_dim,
                          std::int64_t gene_count, std::mt19937_64& rng) {
    ParamStore p;
    p.add("prior/w1", xavier_init(feature_dim, cfg.hidden, rng));
    p.add("prior/b1", Tensor2(1, cfg.hidden));
    p.add("prior/w2", xavier_init(cfg.hidden, 3 * gene_count, rng));
    p.add("prior/b2", Tensor2(1, 3 * gene_count));
    p.add("prior/frozen", Tensor2(1, 1, 0.0));
    return p;
}

PriorHeads prior_forward(Tape& t, const std::map<std::string, Var>& bound,
                         const Tensor2& features, std::int64_t gene_count) {
    Var x = t.leaf(features);
    Var h = gelu(t, add_row(t, matmul_fb(t, x, bound.at("prior/w1")), bound.at("prior/b1")));
    Var raw = add_row(t, matmul_fb(t, h, bound.at("prior/w2")), bound.at("prior/b2"));
    PriorHeads out;
    // Small floors keep log(mu) and log(theta) finite in the NLL.
    out.mu = add_scalar(t, softplus_fb(t, slice_cols(t, raw, 0, gene_count)), 1e-6);
    out.theta = add_scalar(t, softplus_fb(t, slice_cols(t, raw, gene_count, gene_count)), 1e-4);
    out.pi = sigmoid_fb(t, slice_cols(t, raw, 2 * gene_count, gene_count));
    return out;
}

ZinbParams prior_predict(const ParamStore& params, const Tensor2& features,
                         std::int64_t gene_count) {
    Tape t;
    auto bound = bind_params(t, params, /*requires_grad=*/false);
    PriorHeads h = prior_forward(t, bound, features, gene_count);
    ZinbParams p;
    p.mu = t.value(h.mu);
    p.theta = t.value(h.theta);
    p.pi = t.value(h.pi);
    return p;
}

bool prior_frozen(const ParamStore& params) {
    return params.has("prior/frozen") && params.get("prior/frozen").data[0] != 0.0;
}

void freeze_prior(ParamStore& params) { params.get("prior/frozen").data[0] = 1.0; }

Tensor2 section_counts(const Section& section, std::int64_t gene_count) {
    const std::int64_t n = static_cast<std::int64_t>(section.spots.size());
    Tensor2 counts(n, gene_count);
    for (std::int64_t i = 0; i < n; ++i) {
        const Spot& s = section.spots[i];
        if (!s.labeled()) throw std::logic_error("section_counts: unlabeled spot");
        for (std::int64_t g = 0; g < gene_count; ++g) {
            counts.at(i, g) = s.counts.empty() ? std::round(std::expm1(s.expression[g]))
                                               : s.counts[g];
        }
    }
    return counts;
}

namespace {
double prior_nll_eval(const ParamStore& params, const Tensor2& features, const Tensor2& counts,
                      std::int64_t gene_count) {
    Tape t;
    auto bound = bind_params(t, params, /*requires_grad=*/false);
    PriorHeads h = prior_forward(t, bound, features, gene_count);
    return t.value(zinb_nll(t, counts, h.mu, h.theta, h.pi)).data[0];
}
}  // namespace

ParamStore pretrain_prior(const SlideStack& stack, const std::vector<std::int64_t>& train_z,
                          const std::vector<std::int64_t>& val_z, const PriorNetConfig& cfg,
                          std::uint64_t seed, std::vector<EpochRecord>* log) {
    if (train_z.empty() || val_z.empty())
        throw std::logic_error("pretrain_prior: need labeled training and validation sections");
    for (std::int64_t z : train_z)
        if (!stack.section(z).labeled())
            throw std::logic_error("pretrain_prior: training section unlabeled");

    const BoundingBox frame = stack.frame();
    std::mt19937_64 rng(seed);
    const std::int64_t feat_dim = stack.embedding_dim + cfg.pos_dim;
    ParamStore params = init_prior_net(cfg, feat_dim, stack.gene_count, rng);

    struct SectionData {
        Tensor2 features;
        Tensor2 counts;
        std::int64_t n;
    };
    std::vector<SectionData> train, val;
    for (std::int64_t z : train_z)
        train.push_back({prior_features(stack.section(z), frame, cfg.pos_dim),
                         section_counts(stack.section(z), stack.gene_count),
                         static_cast<std::int64_t>(stack.section(z).spots.size())});
    for (std::int64_t z : val_z)
        val.push_back({prior_features(stack.section(z), frame, cfg.pos_dim),
                       section_counts(stack.section(z), stack.gene_count),
                       static_cast<std::int64_t>(stack.section(z).spots.size())});

    AdamState opt;
    opt.cfg.lr = cfg.lr;
    opt.cfg.clip_norm = cfg.clip_norm;

    ParamStore best = params;
    double best_val = std::numeric_limits<double>::infinity();
    std::int64_t since_best = 0;
    const auto t0 = std::chrono::steady_clock::now();

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double train_loss = 0.0;
        std::int64_t train_obs = 0;
        for (const SectionData& sd : train) {
            Tape t;
            auto bound = bind_params(t, params);
            PriorHeads h = prior_forward(t, bound, sd.features, stack.gene_count);
            Var nll = zinb_nll(t, sd.counts, h.mu, h.theta, h.pi);
            train_loss += t.value(nll).data[0];
            train_obs += sd.counts.size();
            // Optimize the per-observation mean so the step size is
            // insensitive to section size.
            Var loss = scale(t, nll, 1.0 / static_cast<double>(sd.counts.size()));
            t.backward(loss);
            GradMap grads;
            collect_grads(t, bound, grads);
            grads.erase("prior/frozen");
            adam_step(params, grads, opt);
        }
        double val_loss = 0.0;
        for (const SectionData& sd : val)
            val_loss += prior_nll_eval(params, sd.features, sd.counts, stack.gene_count);
        if (log) {
            const double secs = std::chrono::duration<double>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
            log->push_back({epoch, train_loss, val_loss, secs});
        }
        if (val_loss < best_val) {
            best_val = val_loss;
            best = params;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    freeze_prior(best);
    return best;
}

std::vector<double> spatial_empirical_sample(const SlideStack& stack, const Spot& spot,
                                             std::int64_t k, std::mt19937_64& rng,
                                             double jitter_sigma) {
    AdjacentCandidates cand =
        adjacent_candidates(stack, spot, k, CandidateSource::LabeledExpression);
    if (!cand.available)
        throw std::logic_error("spatial_empirical_sample: no labeled adjacent spot");
    std::uniform_int_distribution<std::size_t> pick(0, cand.candidates.size() - 1);
    const auto [z, idx] = cand.candidates[pick(rng)];
    std::vector<double> out = stack.section(z).spots[idx].expression;
    if (jitter_sigma > 0) {
        std::normal_distribution<double> jitter(0.0, jitter_sigma);
        for (double& v : out) v = std::max(0.0, v + jitter(rng));
    }
    return out;
}

Tensor2 start_matrix(const SlideStack& stack, std::int64_t z, const StartConfig& cfg,
                     const ParamStore* prior_params, std::mt19937_64& rng) {
    const Section& sec = stack.section(z);
    const std::int64_t n = static_cast<std::int64_t>(sec.spots.size());
    const std::int64_t g = stack.gene_count;
    switch (cfg.kind) {
        case PriorKind::FixedZinb:
            return zinb_sample(fixed_zinb_params(cfg.fixed, n, g), rng);
        case PriorKind::LearnedZinb: {
            if (!prior_params) throw std::logic_error("start_matrix: learned prior requires params");
            if (!prior_frozen(*prior_params))
                throw std::logic_error("start_matrix: learned prior must be frozen");
            const Tensor2 feats = prior_features(sec, stack.frame(), cfg.pos_dim);
            return zinb_sample(prior_predict(*prior_params, feats, g), rng);
        }
        case PriorKind::SpatialEmpirical: {
            Tensor2 out(n, g);
            ZinbParams fallback = fixed_zinb_params(cfg.fixed, 1, g);
            for (std::int64_t i = 0; i < n; ++i) {
                std::vector<double> row;
                AdjacentCandidates cand = adjacent_candidates(
                    stack, sec.spots[i], cfg.empirical_k, CandidateSource::LabeledExpression);
                if (cand.available) {
                    row = spatial_empirical_sample(stack, sec.spots[i], cfg.empirical_k, rng,
                                                   cfg.empirical_sigma);
                } else {
                    Tensor2 draw = zinb_sample(fallback, rng);
                    row.assign(draw.data.begin(), draw.data.end());
                }
                std::copy(row.begin(), row.end(), out.data.begin() + i * g);
            }
            return out;
        }
    }
    throw std::logic_error("start_matrix: unreachable");
}

}  // namespace holotea
