#pragma once

#include <cstdint>
#include <random>

#include "holotea/tape.hpp"
#include "holotea/tensor.hpp"

namespace holotea {

/// Per-spot, per-gene ZINB parameters: mean mu > 0, inverse-dispersion
/// theta > 0, zero-inflation probability pi in (0,1). Shapes agree.
struct ZinbParams {
    Tensor2 mu;
    Tensor2 theta;
    Tensor2 pi;

    void validate() const;
};

/// log of pi*1{y=0} + (1-pi)*NB(y|mu,theta), via log-gamma.
/// pi=1 with y>0 returns -inf (probability zero).
double zinb_log_pmf(std::int64_t y, double mu, double theta, double pi);

/// Differentiable total negative log-likelihood of integer counts under
/// per-entry ZINB parameters. `counts` entries must be nonnegative integers.
Var zinb_nll(Tape& t, const Tensor2& counts, Var mu, Var theta, Var pi);

/// Samples counts (Bernoulli zero-inflation, then Gamma-Poisson) and maps
/// them through log1p. If `raw_counts` is non-null the integer draws are
/// stored there too.
Tensor2 zinb_sample(const ZinbParams& params, std::mt19937_64& rng,
                    Tensor2* raw_counts = nullptr);

/// Table-driven fixed fallback prior: NB total-count and success logits plus
/// zero-inflation logits, constant across spots and genes.
struct FixedZinbConfig {
    double total_count = 1.0;
    double logits = 0.1;
    double zi_logits = 0.0;
};

ZinbParams fixed_zinb_params(const FixedZinbConfig& cfg, std::int64_t n, std::int64_t g);

}  // namespace holotea
