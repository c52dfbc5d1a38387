#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "holotea/conditioning.hpp"
#include "holotea/denoiser.hpp"
#include "holotea/prior.hpp"
#include "holotea/stack.hpp"

namespace holotea {

struct TimeGrid {
    std::vector<double> knots;  // t_0 = 0 < t_1 < ... < t_S = 1

    static TimeGrid uniform(std::int64_t steps);
    void validate() const;
    std::int64_t steps() const { return static_cast<std::int64_t>(knots.size()) - 1; }
    double eta(std::int64_t s) const { return knots[s + 1] - knots[s]; }
};

/// (1-t) x0 + t x1, elementwise; endpoints exact.
Tensor2 interpolate(const Tensor2& x0, const Tensor2& x1, double t);

/// Mean squared endpoint-regression loss over all spots and genes.
Var fm_loss(Tape& tp, Var y_hat, const Tensor2& target);

struct FlowTrainConfig {
    std::int64_t epochs = 100;
    std::int64_t batch_slides = 2;
    AdamConfig adam;              // lr 5e-4, clip 1.0 defaults
    std::int64_t patience = 10;   // early-stop patience on validation loss
    std::int64_t kprime = 8;      // adjacent candidates per spot
    BlendConfig blend;
    StartConfig start;
    std::uint64_t seed = 0;
};

/// Blended adjacent tokens for every spot of section z (rows in spot order).
/// Train mode prefers labeled z+-1 expressions; where none exist it falls
/// back to the supplied states (e.g. prior draws for unlabeled neighbors).
/// Infer mode always reads the states map. Spots with no candidates at all
/// get a zero row.
Tensor2 adjacent_token_matrix(const SlideStack& stack, std::int64_t z, const GeneProjection& proj,
                              const BlendConfig& blend, std::int64_t kprime, TokenMode mode,
                              const std::map<std::int64_t, const Tensor2*>* states);

/// Algorithm Phase B. Trains `params` (from init_denoiser) in place on the
/// labeled sections train_z, early-stopping on val_z (empty val_z: the last
/// training section is held out when more than one exists). `proj` is needed
/// when cfg.use_control; `prior` when the start distribution is learned-zinb
/// (must be frozen). Deterministic given seed.
void train_fm(const SlideStack& stack, std::vector<std::int64_t> train_z,
              std::vector<std::int64_t> val_z, const DenoiserConfig& cfg,
              const FlowTrainConfig& tcfg, const ParamStore* prior, const GeneProjection* proj,
              ParamStore& params, std::vector<EpochRecord>* log = nullptr);

struct FlowInferConfig {
    TimeGrid grid = TimeGrid::uniform(5);
    StartConfig start;
    BlendConfig blend;
    std::int64_t kprime = 8;
    std::uint64_t seed = 0;
    std::int64_t threads = 1;
};

/// Test hook: replaces the denoiser with a fixed function of
/// (section z, current state, t).
using DenoiseFn =
    std::function<Tensor2(std::int64_t, const Tensor2&, double)>;

/// S-round inference over the target sections: starts from the prior, runs
/// denoise/update rounds x <- (1-eta) x + eta y_hat where adjacent context is
/// read from the concurrently evolving z+-1 states (stored expressions when
/// z+-1 is labeled). Rounds synchronize; sections within a round may run on
/// `threads` workers. Returns final N x G states per target z.
std::map<std::int64_t, Tensor2> infer_stack(const SlideStack& stack, const ParamStore& params,
                                            const DenoiserConfig& cfg, const GeneProjection* proj,
                                            const std::vector<std::int64_t>& target_z,
                                            const ParamStore* prior, const FlowInferConfig& icfg,
                                            const DenoiseFn* stub = nullptr);

/// Central finite-difference check of the complete backbone (local attention,
/// control injection, GSA, head) against the tape gradients on a 12-spot toy
/// stack with a reduced-width config.
GradCheckResult denoiser_grad_check(std::uint64_t seed);

}  // namespace holotea
