#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "holotea/optim.hpp"
#include "holotea/stack.hpp"
#include "holotea/tape.hpp"
#include "holotea/zinb.hpp"

namespace holotea {

enum class PriorKind { FixedZinb, LearnedZinb, SpatialEmpirical };

PriorKind prior_kind_from_string(const std::string& s);
std::string to_string(PriorKind k);

struct PriorNetConfig {
    std::int64_t hidden = 64;
    std::int64_t pos_dim = 16;
    std::int64_t epochs = 150;
    std::int64_t patience = 10;
    double lr = 5e-3;
    double clip_norm = 1.0;
};

/// (embedding ++ positional features) rows for every spot of a section.
Tensor2 prior_features(const Section& section, const BoundingBox& frame, std::int64_t pos_dim);

/// Two-layer perceptron mapping features to 3G raw outputs, with softplus
/// links for mu/theta and a sigmoid link for pi. Parameters live under the
/// "prior/" prefix; "prior/frozen" is a 0/1 scalar record.
ParamStore init_prior_net(const PriorNetConfig& cfg, std::int64_t feature_dim,
                          std::int64_t gene_count, std::mt19937_64& rng);

struct PriorHeads {
    Var mu, theta, pi;
};
PriorHeads prior_forward(Tape& t, const std::map<std::string, Var>& bound,
                         const Tensor2& features, std::int64_t gene_count);

/// Convenience: forward pass without a gradient graph.
ZinbParams prior_predict(const ParamStore& params, const Tensor2& features,
                         std::int64_t gene_count);

bool prior_frozen(const ParamStore& params);
void freeze_prior(ParamStore& params);

struct EpochRecord {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_seconds = 0.0;
};

/// Algorithm Phase A: minimize the ZINB NLL on training sections' raw counts,
/// early-stop on validation NLL, restore the best weights, set the frozen
/// flag. Sections listed in train_z / val_z must be labeled.
ParamStore pretrain_prior(const SlideStack& stack, const std::vector<std::int64_t>& train_z,
                          const std::vector<std::int64_t>& val_z, const PriorNetConfig& cfg,
                          std::uint64_t seed, std::vector<EpochRecord>* log = nullptr);

/// One smoothed draw from the k planar-nearest labeled z+-1 spots.
/// Requires at least one labeled adjacent spot; callers fall back to the
/// fixed ZINB prior otherwise (see start_matrix).
std::vector<double> spatial_empirical_sample(const SlideStack& stack, const Spot& spot,
                                             std::int64_t k, std::mt19937_64& rng,
                                             double jitter_sigma = 0.05);

struct StartConfig {
    PriorKind kind = PriorKind::FixedZinb;
    FixedZinbConfig fixed;
    std::int64_t empirical_k = 128;
    double empirical_sigma = 0.05;
    std::int64_t pos_dim = 16;
};

/// NxG start matrix (log1p domain) for one section under the chosen prior.
/// `prior_params` is required for LearnedZinb and must be frozen.
Tensor2 start_matrix(const SlideStack& stack, std::int64_t z, const StartConfig& cfg,
                     const ParamStore* prior_params, std::mt19937_64& rng);

/// Integer counts for Phase A: stored raw counts when present, otherwise
/// expm1 of the log1p expression rounded to nearest.
Tensor2 section_counts(const Section& section, std::int64_t gene_count);

}  // namespace holotea
