#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "holotea/tensor.hpp"

namespace holotea {

struct Spot {
    std::int64_t id = 0;                 // stable, unique within the stack
    double a = 0.0, b = 0.0;             // planar coordinates in the registered frame
    std::int64_t section = 0;            // z index, 1..Z
    std::vector<double> expression;      // log1p counts, length G; empty if unlabeled
    std::vector<double> counts;          // raw counts, length G; empty if unlabeled
    std::vector<double> embedding;       // length D

    bool labeled() const { return !expression.empty(); }
};

struct Section {
    std::int64_t z = 0;
    std::vector<Spot> spots;

    bool labeled() const { return !spots.empty() && spots.front().labeled(); }
};

struct BoundingBox {
    double a_min = 0.0, a_max = 1.0;
    double b_min = 0.0, b_max = 1.0;
};

struct SlideStack {
    std::vector<Section> sections;  // ordered, z = 1..Z
    std::int64_t gene_count = 0;    // G
    std::int64_t embedding_dim = 0; // D
    std::vector<std::string> gene_names;
    std::string coordinate_units = "grid";

    std::int64_t depth() const { return static_cast<std::int64_t>(sections.size()); }
    const Section& section(std::int64_t z) const { return sections[z - 1]; }
    Section& section(std::int64_t z) { return sections[z - 1]; }

    BoundingBox frame() const;
    void validate() const;
};

struct NeighborGraph {
    // neighbors[i] / distances[i] are sorted by (distance, id); self excluded.
    std::vector<std::vector<std::int64_t>> neighbors;  // indices into the section's spot list
    std::vector<std::vector<double>> distances;
};

struct AdjacentCandidates {
    // Global (section z, index within section) references, nearest first.
    std::vector<std::pair<std::int64_t, std::int64_t>> candidates;
    std::vector<double> distances;
    bool available = false;
};

enum class CandidateSource { LabeledExpression, Any };

struct EmptyInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

NeighborGraph build_knn_graph(const Section& section, std::int64_t k);

AdjacentCandidates adjacent_candidates(const SlideStack& stack, const Spot& spot,
                                       std::int64_t k_prime, CandidateSource source);

/// Sinusoidal features of (a,b) normalized to [0,1] inside `frame`.
/// Length = dim (multiple of 4): sin/cos pairs over geometric frequencies,
/// interleaved between the two axes. Out-of-frame coordinates are clamped;
/// `clamped` (optional) is incremented when that happens.
std::vector<double> positional_features(const Spot& spot, const BoundingBox& frame,
                                        std::int64_t dim, std::int64_t* clamped = nullptr);

// ---- on-disk layout ----
// <dir>/stack.json            Z, G, D, gene names, per-section spot counts, units
// <dir>/spots_z<k>.csv        id,a,b
// <dir>/expr_z<k>.bin         u32 rows, u32 cols, row-major LE doubles (absent if unlabeled)
// <dir>/counts_z<k>.bin       same layout, raw counts (absent if unlabeled)
// <dir>/emb_z<k>.bin          same layout
// <dir>/labels_z<k>.csv       id,region (synthetic stacks only)
void save_stack(const std::string& dir, const SlideStack& stack,
                const std::vector<std::vector<std::int64_t>>* region_labels = nullptr);
SlideStack load_stack(const std::string& dir);
std::vector<std::vector<std::int64_t>> load_region_labels(const std::string& dir,
                                                          const SlideStack& stack);

/// N x G log1p expression matrix of a labeled section.
Tensor2 expression_matrix(const Section& section, std::int64_t gene_count);

/// Binary matrix files shared by expr_/emb_/counts_/pred_ artifacts.
void save_matrix(const std::string& path, const Tensor2& m);
Tensor2 load_matrix(const std::string& path);

}  // namespace holotea
