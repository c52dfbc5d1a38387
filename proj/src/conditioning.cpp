#include "holotea/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace holotea {

GeneProjection top_variance_projection(const SlideStack& stack,
                                       const std::vector<std::int64_t>& labeled_z,
                                       std::int64_t rank) {
    if (rank < 1 || rank > stack.gene_count)
        throw std::invalid_argument("top_variance_projection: bad rank");
    const std::int64_t G = stack.gene_count;
    std::vector<double> sum(G, 0.0), sumsq(G, 0.0);
    std::int64_t n = 0;
    for (std::int64_t z : labeled_z) {
        for (const Spot& s : stack.section(z).spots) {
            if (!s.labeled()) continue;
            for (std::int64_t g = 0; g < G; ++g) {
                sum[g] += s.expression[g];
                sumsq[g] += s.expression[g] * s.expression[g];
            }
            ++n;
        }
    }
    if (n < 2) throw std::logic_error("top_variance_projection: not enough labeled spots");
    std::vector<std::pair<double, std::int64_t>> by_var(G);
    for (std::int64_t g = 0; g < G; ++g) {
        const double mean = sum[g] / static_cast<double>(n);
        const double var = sumsq[g] / static_cast<double>(n) - mean * mean;
        by_var[g] = {-var, g};  // descending variance, ties by lower index
    }
    std::sort(by_var.begin(), by_var.end());
    GeneProjection proj;
    proj.matrix = Tensor2(rank, G);
    for (std::int64_t r = 0; r < rank; ++r) {
        proj.selected_genes.push_back(by_var[r].second);
        proj.matrix.at(r, by_var[r].second) = 1.0;
    }
    return proj;
}

void store_projection(ParamStore& params, const GeneProjection& proj) {
    params.add("proj/matrix", proj.matrix);
}

GeneProjection load_projection(const ParamStore& params) {
    GeneProjection proj;
    proj.matrix = params.get("proj/matrix");
    for (std::int64_t r = 0; r < proj.matrix.rows; ++r) {
        std::int64_t arg = 0;
        for (std::int64_t g = 1; g < proj.matrix.cols; ++g)
            if (proj.matrix.at(r, g) > proj.matrix.at(r, arg)) arg = g;
        proj.selected_genes.push_back(arg);
    }
    return proj;
}

std::vector<double> cosine_scores(const std::vector<double>& query,
                                  const std::vector<const std::vector<double>*>& candidates) {
    double qn = 0.0;
    for (double v : query) qn += v * v;
    qn = std::sqrt(qn);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const auto* c : candidates) {
        double dot = 0.0, cn = 0.0;
        for (std::size_t i = 0; i < query.size(); ++i) {
            dot += query[i] * (*c)[i];
            cn += (*c)[i] * (*c)[i];
        }
        cn = std::sqrt(cn);
        out.push_back((qn > 0 && cn > 0) ? dot / (qn * cn) : 0.0);
    }
    return out;
}

std::vector<double> spatial_affinity(const std::vector<double>& distances) {
    if (distances.empty()) return {};
    std::vector<double> sorted = distances;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median =
        (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    std::vector<double> out;
    out.reserve(n);
    if (median <= 0) {
        out.assign(n, 1.0);
        return out;
    }
    const double denom = 2.0 * median * median;
    for (double d : distances) out.push_back(std::exp(-d * d / denom));
    return out;
}

std::vector<double> blend_weights(const std::vector<double>& cos_scores,
                                  const std::vector<double>& xy_scores, const BlendConfig& cfg) {
    if (cos_scores.size() != xy_scores.size())
        throw std::invalid_argument("blend_weights: score lists differ in length");
    if (cfg.tau <= 0) throw std::invalid_argument("blend_weights: tau must be positive");
    if (cfg.beta < 0 || cfg.beta > 1) throw std::invalid_argument("blend_weights: beta in [0,1]");
    if (cos_scores.empty()) return {};
    std::vector<double> logits(cos_scores.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        logits[i] = ((1.0 - cfg.beta) * cos_scores[i] + cfg.beta * xy_scores[i]) / cfg.tau;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
}

std::vector<double> adjacent_token(const SlideStack& stack, const AdjacentCandidates& cand,
                                   const std::vector<double>& weights, const GeneProjection& proj,
                                   TokenMode mode,
                                   const std::map<std::int64_t, const Tensor2*>* current_states) {
    const std::int64_t r = proj.matrix.rows;
    std::vector<double> token(r, 0.0);
    if (!cand.available) return token;
    if (weights.size() != cand.candidates.size())
        throw std::invalid_argument("adjacent_token: weight/candidate count mismatch");
    for (std::size_t e = 0; e < cand.candidates.size(); ++e) {
        const auto [z, idx] = cand.candidates[e];
        const double w = weights[e];
        if (mode == TokenMode::Train) {
            const Spot& s = stack.section(z).spots[idx];
            if (!s.labeled())
                throw std::logic_error("adjacent_token: train mode hit an unlabeled candidate");
            for (std::int64_t row = 0; row < r; ++row)
                token[row] += w * s.expression[proj.selected_genes[row]];
        } else {
            if (!current_states || !current_states->count(z))
                throw std::logic_error("adjacent_token: missing current state for section " +
                                       std::to_string(z));
            const Tensor2& state = *current_states->at(z);
            for (std::int64_t row = 0; row < r; ++row)
                token[row] += w * state.at(idx, proj.selected_genes[row]);
        }
    }
    return token;
}

GeneMap build_gene_map(const Section& section, const BoundingBox& frame,
                       const Tensor2& spot_vectors, const ControlConfig& cfg) {
    const std::int64_t n = static_cast<std::int64_t>(section.spots.size());
    check_shape(spot_vectors.rows == n, "build_gene_map: vector count != spot count");
    const std::int64_t H = cfg.grid_h, W = cfg.grid_w;
    GeneMap out;
    out.values = Tensor2(H * W, spot_vectors.cols);
    out.density = Tensor2(H * W, 1);
    out.coords = Tensor2(n, 2);
    const double a_span = std::max(frame.a_max - frame.a_min, 1e-12);
    const double b_span = std::max(frame.b_max - frame.b_min, 1e-12);
    for (std::int64_t i = 0; i < n; ++i) {
        double u = (section.spots[i].a - frame.a_min) / a_span;
        double v = (section.spots[i].b - frame.b_min) / b_span;
        if (u < 0 || u > 1 || v < 0 || v > 1) {
            ++out.clamped;
            u = std::clamp(u, 0.0, 1.0);
            v = std::clamp(v, 0.0, 1.0);
        }
        const double x = u * static_cast<double>(W - 1);
        const double y = v * static_cast<double>(H - 1);
        out.coords.at(i, 0) = x;
        out.coords.at(i, 1) = y;
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
        const std::int64_t x1 = std::min(x0 + 1, W - 1);
        const std::int64_t y1 = std::min(y0 + 1, H - 1);
        const double fx = x - static_cast<double>(x0);
        const double fy = y - static_cast<double>(y0);
        const std::pair<std::int64_t, double> taps[4] = {
            {y0 * W + x0, (1 - fx) * (1 - fy)},
            {y0 * W + x1, fx * (1 - fy)},
            {y1 * W + x0, (1 - fx) * fy},
            {y1 * W + x1, fx * fy},
        };
        for (const auto& [cell, w] : taps) {
            out.density.data[cell] += w;
            for (std::int64_t c = 0; c < spot_vectors.cols; ++c)
                out.values.at(cell, c) += w * spot_vectors.at(i, c);
        }
    }
    for (std::int64_t cell = 0; cell < H * W; ++cell) {
        const double d = out.density.data[cell];
        if (d > 0)
            for (std::int64_t c = 0; c < out.values.cols; ++c) out.values.at(cell, c) /= d;
    }
    return out;
}

double control_gate(double t, double t_warm, double scale) {
    if (t_warm <= 0) return scale;
    double u = std::clamp(t / t_warm, 0.0, 1.0);
    const double s = u * u * (3.0 - 2.0 * u);
    return std::clamp(scale * s, 0.0, scale);
}

Tensor2 im2col3x3(const Tensor2& map, std::int64_t height, std::int64_t width) {
    check_shape(map.rows == height * width, "im2col3x3: map rows != H*W");
    const std::int64_t C = map.cols;
    Tensor2 out(height * width, 9 * C);
    for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
            const std::int64_t row = y * width + x;
            std::int64_t slot = 0;
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                for (std::int64_t dx = -1; dx <= 1; ++dx, ++slot) {
                    const std::int64_t yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    for (std::int64_t c = 0; c < C; ++c)
                        out.at(row, slot * C + c) = map.at(yy * width + xx, c);
                }
            }
        }
    }
    return out;
}

}  // namespace holotea
