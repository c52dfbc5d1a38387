#pragma once

#include <cstdint>
#include <vector>

#include "holotea/stack.hpp"
#include "holotea/tensor.hpp"

namespace holotea {

/// Region-specific expression program: every gene gets a mild per-region
/// log-normal modulation of base_mu, and each region additionally owns a
/// block of marker genes with marker_fold-elevated mean.
struct RegionProgram {
    double base_mu = 2.0;
    double marker_fold = 8.0;
    double marker_frac = 0.2;
    double modulation_sigma = 0.5;
    double theta = 16.0;
    double pi = 0.05;
};

struct SynthConfig {
    std::int64_t sections = 8;     // Z
    std::int64_t spots = 200;      // per section
    std::int64_t genes = 50;       // G
    std::int64_t embed_dim = 16;   // D
    std::int64_t regions = 4;      // R
    double smoothness = 0.9;       // 1 = identical anatomy on every section
    double snr = 4.0;              // embedding signal-to-noise
    double jitter = 0.1;           // grid-unit positional jitter sigma
    RegionProgram program;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthResult {
    SlideStack stack;                               // all sections labeled
    std::vector<std::vector<std::int64_t>> labels;  // region id per spot, per section
};

/// Deterministic synthetic stack: jittered grid spots, region labels from
/// drifting Voronoi centers (drift shrinks with smoothness), ZINB counts from
/// the region program, embeddings = snr * region direction + unit noise.
SynthResult generate_stack(const SynthConfig& cfg);

/// The R x G mean matrix the generator samples from (exposed for oracles).
Tensor2 program_means(const SynthConfig& cfg);

}  // namespace holotea
