#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "holotea/optim.hpp"
#include "holotea/stack.hpp"
#include "holotea/tensor.hpp"

namespace holotea {

struct BlendConfig {
    double tau = 1.0;    // softmax temperature, > 0
    double beta = 0.5;   // spatial blend in [0,1]
};

/// Low-rank gene projection: unit indicator rows over the r top-variance
/// genes, frozen at data preparation.
struct GeneProjection {
    Tensor2 matrix;  // r x G
    std::vector<std::int64_t> selected_genes;
};

GeneProjection top_variance_projection(const SlideStack& stack,
                                       const std::vector<std::int64_t>& labeled_z,
                                       std::int64_t rank);

/// Checkpoint plumbing: the projection rides along as a "proj/matrix" record.
void store_projection(ParamStore& params, const GeneProjection& proj);
GeneProjection load_projection(const ParamStore& params);

/// Cosine similarity of the query embedding against each candidate embedding.
/// Zero vectors score 0 by convention.
std::vector<double> cosine_scores(const std::vector<double>& query,
                                  const std::vector<const std::vector<double>*>& candidates);

/// Gaussian spatial affinity exp(-d^2 / (2 sigma^2)) with sigma = median
/// candidate distance for this query (scale-free).
std::vector<double> spatial_affinity(const std::vector<double>& distances);

/// softmax(((1-beta)*cos + beta*xy) / tau). Empty input -> empty output.
std::vector<double> blend_weights(const std::vector<double>& cos_scores,
                                  const std::vector<double>& xy_scores, const BlendConfig& cfg);

enum class TokenMode { Train, Infer };

/// Weighted sum of projected neighbor source vectors. Train mode reads stored
/// expressions and refuses unlabeled candidates; infer mode reads the current
/// flow states supplied per adjacent section (rows in spot order).
std::vector<double> adjacent_token(const SlideStack& stack, const AdjacentCandidates& cand,
                                   const std::vector<double>& weights, const GeneProjection& proj,
                                   TokenMode mode,
                                   const std::map<std::int64_t, const Tensor2*>* current_states);

struct ControlConfig {
    std::int64_t grid_h = 64;
    std::int64_t grid_w = 64;
    std::int64_t channels = 32;
    std::int64_t token_dim = 32;  // d_u
    std::int64_t proj_rank = 32;  // r, top-variance genes kept by P
    double scale = 1.0;
    double t_warm = 0.2;          // 0.05 selects the sharp schedule
    std::vector<std::int64_t> blocks;  // injection set; empty = all blocks
};

struct GeneMap {
    Tensor2 values;   // (H*W) x r, density-normalized
    Tensor2 density;  // (H*W) x 1 accumulated splat weights
    Tensor2 coords;   // N x 2 continuous (x, y) grid coordinates per spot
    std::int64_t clamped = 0;  // spots clamped to the frame border
};

/// Bilinear splat of per-spot vectors into an H x W grid; cells divided by
/// accumulated density (zero-density cells stay zero).
GeneMap build_gene_map(const Section& section, const BoundingBox& frame,
                       const Tensor2& spot_vectors, const ControlConfig& cfg);

/// Warm-up gate alpha(t) = scale * smoothstep(t / t_warm), clamped to
/// [0, scale].
double control_gate(double t, double t_warm, double scale);

/// Zero-padded 3x3 im2col of an (H*W) x C map: output row per cell holds the
/// 9 neighborhood cells' channels, so a conv is a plain matmul with a
/// (9C) x C_out weight.
Tensor2 im2col3x3(const Tensor2& map, std::int64_t height, std::int64_t width);

}  // namespace holotea
