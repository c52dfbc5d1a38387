#include "holotea/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace holotea {

namespace {

/// Pearson correlation of two equal-length strided views; returns false when
/// either side is constant.
bool pearson(const double* a, const double* b, std::int64_t n, std::int64_t stride, double& out) {
    double ma = 0.0, mb = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        ma += a[i * stride];
        mb += b[i * stride];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double da = a[i * stride] - ma, db = b[i * stride] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return false;
    out = sab / std::sqrt(saa * sbb);
    return true;
}

void mean_std(const std::vector<double>& xs, double& mean, double& stddev) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    stddev = std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os.precision(10);
    os << "mse " << mse << "\n"
       << "mae " << mae << "\n"
       << "pcc_spot_mean " << pcc_spot_mean << "\n"
       << "pcc_spot_std " << pcc_spot_std << "\n"
       << "pcc_gene_mean " << pcc_gene_mean << "\n"
       << "pcc_gene_std " << pcc_gene_std << "\n"
       << "excluded_rows " << excluded_rows << "\n"
       << "excluded_cols " << excluded_cols << "\n";
    return os.str();
}

MetricsReport compute_metrics(const Tensor2& pred, const Tensor2& truth) {
    check_shape(pred.same_shape(truth), "compute_metrics: shape mismatch");
    check_shape(pred.rows >= 2 && pred.cols >= 2, "compute_metrics: need at least a 2x2 matrix");
    MetricsReport rep;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - truth.data[i];
        rep.mse += d * d;
        rep.mae += std::abs(d);
    }
    rep.mse /= static_cast<double>(pred.data.size());
    rep.mae /= static_cast<double>(pred.data.size());

    std::vector<double> row_pcc, col_pcc;
    for (std::int64_t i = 0; i < pred.rows; ++i) {
        double r;
        if (pearson(&pred.data[i * pred.cols], &truth.data[i * truth.cols], pred.cols, 1, r))
            row_pcc.push_back(r);
        else
            ++rep.excluded_rows;
    }
    for (std::int64_t j = 0; j < pred.cols; ++j) {
        double r;
        if (pearson(&pred.data[j], &truth.data[j], pred.rows, pred.cols, r))
            col_pcc.push_back(r);
        else
            ++rep.excluded_cols;
    }
    if (row_pcc.empty())
        throw std::runtime_error("compute_metrics: every spot is constant, PCC undefined");
    mean_std(row_pcc, rep.pcc_spot_mean, rep.pcc_spot_std);
    if (!col_pcc.empty()) mean_std(col_pcc, rep.pcc_gene_mean, rep.pcc_gene_std);
    return rep;
}

std::vector<std::int64_t> Split::sections_with(SectionRole role) const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
        if (roles[i] == role) out.push_back(static_cast<std::int64_t>(i) + 1);
    return out;
}

Split make_split(const SlideStack& stack, SplitKind kind, std::uint64_t seed) {
    const std::int64_t Z = stack.depth();
    Split split;
    split.kind = kind;
    split.roles.assign(Z, SectionRole::Test);
    if (kind == SplitKind::EvenSlice) {
        if (Z < 3) throw std::invalid_argument("make_split: even-slice needs Z >= 3");
        std::int64_t last_odd = -1;
        for (std::int64_t z = 1; z <= Z; ++z)
            if (z % 2 == 1) {
                split.roles[z - 1] = SectionRole::Train;
                last_odd = z;
            }
        if (Z >= 3) split.roles[last_odd - 1] = SectionRole::Validation;
    } else {
        if (Z < 2) throw std::invalid_argument("make_split: single-label needs Z >= 2");
        std::vector<std::int64_t> labeled;
        for (std::int64_t z = 1; z <= Z; ++z)
            if (stack.section(z).labeled()) labeled.push_back(z);
        if (labeled.empty())
            for (std::int64_t z = 1; z <= Z; ++z) labeled.push_back(z);
        std::mt19937_64 rng(seed);
        const std::int64_t pick =
            labeled[std::uniform_int_distribution<std::size_t>(0, labeled.size() - 1)(rng)];
        split.roles[pick - 1] = SectionRole::Train;
    }
    return split;
}

SlideStack apply_split(const SlideStack& stack, const Split& split) {
    check_shape(static_cast<std::int64_t>(split.roles.size()) == stack.depth(),
                "apply_split: role count != Z");
    SlideStack out = stack;
    for (std::int64_t z = 1; z <= out.depth(); ++z)
        if (split.roles[z - 1] == SectionRole::Test)
            for (Spot& s : out.section(z).spots) {
                s.expression.clear();
                s.counts.clear();
            }
    return out;
}

std::vector<std::int64_t> hvg_select(const SlideStack& stack,
                                     const std::vector<std::int64_t>& sections,
                                     std::int64_t top_k) {
    const std::int64_t G = stack.gene_count;
    if (top_k < 1 || top_k > G) throw std::invalid_argument("hvg_select: bad top_k");
    std::vector<double> sum(G, 0.0), sumsq(G, 0.0);
    std::int64_t n = 0;
    for (std::int64_t z : sections)
        for (const Spot& s : stack.section(z).spots) {
            if (!s.labeled()) continue;
            for (std::int64_t g = 0; g < G; ++g) {
                sum[g] += s.expression[g];
                sumsq[g] += s.expression[g] * s.expression[g];
            }
            ++n;
        }
    if (n < 2) throw EmptyInputError("hvg_select: fewer than 2 labeled spots");
    std::vector<std::pair<double, std::int64_t>> order(G);
    for (std::int64_t g = 0; g < G; ++g) {
        const double mean = sum[g] / static_cast<double>(n);
        order[g] = {-(sumsq[g] / static_cast<double>(n) - mean * mean), g};
    }
    std::sort(order.begin(), order.end());
    std::vector<std::int64_t> out(top_k);
    for (std::int64_t i = 0; i < top_k; ++i) out[i] = order[i].second;
    return out;
}

double neighbor_consistency(const NeighborGraph& graph, const std::vector<std::int64_t>& labels) {
    check_shape(graph.neighbors.size() == labels.size(),
                "neighbor_consistency: label count != vertex count");
    std::set<std::pair<std::int64_t, std::int64_t>> edges;
    for (std::size_t i = 0; i < graph.neighbors.size(); ++i)
        for (std::int64_t j : graph.neighbors[i]) {
            const std::int64_t a = static_cast<std::int64_t>(i);
            if (a == j) continue;
            edges.insert({std::min(a, j), std::max(a, j)});
        }
    if (edges.empty()) throw EmptyInputError("neighbor_consistency: no edges");
    std::int64_t same = 0;
    for (const auto& [a, b] : edges)
        if (labels[a] == labels[b]) ++same;
    return static_cast<double>(same) / static_cast<double>(edges.size());
}

}  // namespace holotea
