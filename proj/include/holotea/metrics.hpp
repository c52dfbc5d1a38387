#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "holotea/stack.hpp"
#include "holotea/tensor.hpp"

namespace holotea {

struct MetricsReport {
    double mse = 0.0;
    double mae = 0.0;
    double pcc_spot_mean = 0.0, pcc_spot_std = 0.0;
    double pcc_gene_mean = 0.0, pcc_gene_std = 0.0;
    std::int64_t excluded_rows = 0;  // degenerate (constant) spots
    std::int64_t excluded_cols = 0;  // degenerate (constant) genes

    std::string to_text() const;  // key/value document
};

/// MSE/MAE plus spot-wise and gene-wise Pearson correlations. A row/column is
/// excluded from the PCC means (and counted) when either pred or truth is
/// constant along it. Throws if every row is degenerate.
MetricsReport compute_metrics(const Tensor2& pred, const Tensor2& truth);

enum class SectionRole { Train, Validation, Test };
enum class SplitKind { EvenSlice, SingleLabel };

struct Split {
    SplitKind kind = SplitKind::EvenSlice;
    std::vector<SectionRole> roles;  // one per section, z order

    std::vector<std::int64_t> sections_with(SectionRole role) const;
};

/// even-slice: even z test, odd z train with the last odd section as
/// validation (needs Z >= 3). single-label: one seeded-choice section trains,
/// everything else is test (needs Z >= 2).
Split make_split(const SlideStack& stack, SplitKind kind, std::uint64_t seed);

/// Copy of the stack with test-section expressions and counts removed, i.e.
/// the model's actual input.
SlideStack apply_split(const SlideStack& stack, const Split& split);

/// Indices of the top_k genes by expression variance over the given sections'
/// spots, ties broken by lower gene index.
std::vector<std::int64_t> hvg_select(const SlideStack& stack,
                                     const std::vector<std::int64_t>& sections,
                                     std::int64_t top_k);

/// Fraction of undirected kNN-graph edges whose endpoints share a label.
double neighbor_consistency(const NeighborGraph& graph, const std::vector<std::int64_t>& labels);

}  // namespace holotea
