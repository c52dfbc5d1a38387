#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "holotea/conditioning.hpp"
#include "holotea/optim.hpp"
#include "holotea/stack.hpp"
#include "holotea/tape.hpp"

namespace holotea {

struct DenoiserConfig {
    std::int64_t layers = 4;
    std::int64_t hidden = 128;       // d
    std::int64_t heads = 4;
    std::int64_t k = 8;              // local graph degree
    std::int64_t m = 16;             // inducing tokens; 0 disables GSA
    double dropout = 0.2;
    std::int64_t ff_mult = 4;
    std::int64_t gene_count = 0;     // G
    std::int64_t embed_dim = 0;      // D
    std::int64_t time_dim = 16;
    std::int64_t pos_dim = 16;
    std::int64_t rbf_bins = 16;
    // Edge-bias radial basis, frozen at data-driven quantiles by fit_rbf.
    std::vector<double> rbf_centers;
    double rbf_width = 0.25;
    bool use_control = true;
    ControlConfig control;

    std::int64_t head_dim() const { return hidden / heads; }
    std::int64_t token_input_dim() const {
        return gene_count + time_dim + pos_dim + embed_dim;
    }
    void validate() const;
};

/// Sinusoidal (sin, cos) pairs over geometric frequencies; feature[0..1] at
/// t = 0 is (0, 1).
std::vector<double> time_features(double t, std::int64_t dim);

/// Freezes rbf_centers at quantiles of the observed kNN edge distances and
/// rbf_width at the mean center spacing.
void fit_rbf(DenoiserConfig& cfg, const SlideStack& stack);

/// All trainable weights under "denoiser/", plus "denoiser/cfg/..." records
/// that echo the config into checkpoints for shape validation at load.
ParamStore init_denoiser(const DenoiserConfig& cfg, std::mt19937_64& rng);

/// Rebuilds the config persisted by init_denoiser; throws on missing or
/// inconsistent records.
DenoiserConfig denoiser_config_from(const ParamStore& params);

/// Differentiable token assembly: concat(x_t row, time MLP of sinusoidal t,
/// positional features, embedding) -> linear projection to d.
Var build_tokens(Tape& tp, const std::map<std::string, Var>& bound, const DenoiserConfig& cfg,
                 const Tensor2& x_t, double t, const Section& section, const BoundingBox& frame);

struct ForwardInputs {
    const Tensor2* x_t = nullptr;   // N x G, constant w.r.t. the tape
    double t = 0.0;
    const Section* section = nullptr;
    BoundingBox frame;
    const NeighborGraph* graph = nullptr;
    // Control path; both required when cfg.use_control, ignored otherwise.
    const Tensor2* adj_token = nullptr;      // N x r blended adjacent token
    const GeneProjection* proj = nullptr;    // gene-map projection
    bool training = false;
    std::mt19937_64* rng = nullptr;          // dropout source (training only)
};

/// Full backbone: L blocks of [local graph attention -> control injection ->
/// GSA -> feed-forward], pre-norm residuals throughout, head to N x G.
Var denoise_forward(Tape& tp, const std::map<std::string, Var>& bound,
                    const DenoiserConfig& cfg, const ForwardInputs& in);

/// Convenience eval-mode forward without retaining a gradient graph.
Tensor2 denoise_eval(const ParamStore& params, const DenoiserConfig& cfg,
                     const ForwardInputs& in);

// Analytic FLOP counts for the attention stages (multiply-adds x 2), used by
// the scaling checks: GSA is linear in N at fixed m, dense self-attention is
// quadratic.
double gsa_flops(std::int64_t n, std::int64_t m, std::int64_t d);
double dense_attention_flops(std::int64_t n, std::int64_t d);

/// Plain O(N^2) multi-head self-attention on raw tensors; the wall-clock
/// reference the GSA path is benchmarked against.
Tensor2 dense_attention_eval(const Tensor2& x, const Tensor2& wq, const Tensor2& wk,
                             const Tensor2& wv, std::int64_t heads);

/// Wall-clock micro-benchmarks (seconds for `reps` blocks on random inputs):
/// a GSA read+write pair built from the tape primitives vs. one dense
/// self-attention of the same width.
double bench_gsa_forward(std::int64_t n, std::int64_t m, std::int64_t d, std::int64_t heads,
                         std::int64_t reps, std::uint64_t seed);
double bench_dense_forward(std::int64_t n, std::int64_t d, std::int64_t heads, std::int64_t reps,
                           std::uint64_t seed);

}  // namespace holotea
