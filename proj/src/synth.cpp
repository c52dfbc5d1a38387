#include "holotea/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "holotea/zinb.hpp"

namespace holotea {

void SynthConfig::validate() const {
    if (regions < 2) throw std::invalid_argument("SynthConfig: need at least 2 regions");
    if (spots < regions) throw std::invalid_argument("SynthConfig: fewer spots than regions");
    if (sections < 1 || genes < 1 || embed_dim < 1)
        throw std::invalid_argument("SynthConfig: counts must be positive");
    if (smoothness < 0.0 || smoothness > 1.0)
        throw std::invalid_argument("SynthConfig: smoothness outside [0,1]");
    if (snr < 0.0) throw std::invalid_argument("SynthConfig: snr must be nonnegative");
    if (program.base_mu <= 0 || program.theta <= 0 || program.pi < 0 || program.pi >= 1 ||
        program.marker_fold < 1 || program.marker_frac < 0 || program.marker_frac > 1)
        throw std::invalid_argument("SynthConfig: bad region program");
}

Tensor2 program_means(const SynthConfig& cfg) {
    cfg.validate();
    const std::int64_t R = cfg.regions, G = cfg.genes;
    std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor2 mu(R, G);
    const std::int64_t block = static_cast<std::int64_t>(
        std::llround(cfg.program.marker_frac * static_cast<double>(G)));
    for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t g = 0; g < G; ++g) {
            double m = cfg.program.base_mu *
                       std::exp(cfg.program.modulation_sigma * gauss(rng));
            const bool marker = block > 0 && g >= (r * block) % G &&
                                g < std::min(G, (r * block) % G + block);
            if (marker) m *= cfg.program.marker_fold;
            mu.at(r, g) = m;
        }
    return mu;
}

SynthResult generate_stack(const SynthConfig& cfg) {
    cfg.validate();
    const std::int64_t Z = cfg.sections, N = cfg.spots, G = cfg.genes, D = cfg.embed_dim,
                       R = cfg.regions;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const Tensor2 mu = program_means(cfg);

    // Per-region embedding directions, unit length.
    Tensor2 dirs(R, D);
    for (std::int64_t r = 0; r < R; ++r) {
        double norm2 = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            dirs.at(r, d) = gauss(rng);
            norm2 += dirs.at(r, d) * dirs.at(r, d);
        }
        const double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
        for (std::int64_t d = 0; d < D; ++d) dirs.at(r, d) *= inv;
    }

    // Region centers on section 1, drifting per z step; smoothness 1 = static.
    std::vector<std::pair<double, double>> centers(R);
    for (std::int64_t r = 0; r < R; ++r)
        centers[r] = {0.15 + 0.7 * unit(rng), 0.15 + 0.7 * unit(rng)};
    const double drift = 0.3 * (1.0 - cfg.smoothness);

    const std::int64_t side =
        static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(N))));
    const double spacing = 1.0 / static_cast<double>(side);

    SynthResult out;
    out.stack.gene_count = G;
    out.stack.embedding_dim = D;
    out.stack.gene_names.reserve(G);
    for (std::int64_t g = 0; g < G; ++g) out.stack.gene_names.push_back("g" + std::to_string(g));
    out.stack.sections.resize(Z);
    out.labels.resize(Z);

    std::int64_t next_id = 1;
    for (std::int64_t zi = 0; zi < Z; ++zi) {
        Section& sec = out.stack.sections[zi];
        sec.z = zi + 1;
        sec.spots.reserve(N);
        out.labels[zi].reserve(N);
        for (std::int64_t i = 0; i < N; ++i) {
            Spot s;
            s.id = next_id++;
            s.section = sec.z;
            const std::int64_t row = i / side, col = i % side;
            s.a = (static_cast<double>(col) + 0.5) * spacing + cfg.jitter * spacing * gauss(rng);
            s.b = (static_cast<double>(row) + 0.5) * spacing + cfg.jitter * spacing * gauss(rng);

            std::int64_t region = 0;
            double best = std::numeric_limits<double>::infinity();
            for (std::int64_t r = 0; r < R; ++r) {
                const double da = s.a - centers[r].first, db = s.b - centers[r].second;
                const double d2 = da * da + db * db;
                if (d2 < best) {
                    best = d2;
                    region = r;
                }
            }
            out.labels[zi].push_back(region);

            ZinbParams zp;
            zp.mu = Tensor2(1, G);
            zp.theta = Tensor2(1, G);
            zp.pi = Tensor2(1, G);
            for (std::int64_t g = 0; g < G; ++g) {
                zp.mu.at(0, g) = mu.at(region, g);
                zp.theta.at(0, g) = cfg.program.theta;
                zp.pi.at(0, g) = cfg.program.pi;
            }
            Tensor2 raw;
            Tensor2 logged = zinb_sample(zp, rng, &raw);
            s.expression.assign(logged.data.begin(), logged.data.end());
            s.counts.assign(raw.data.begin(), raw.data.end());

            s.embedding.resize(D);
            for (std::int64_t d = 0; d < D; ++d)
                s.embedding[d] = cfg.snr * dirs.at(region, d) + gauss(rng);
            sec.spots.push_back(std::move(s));
        }
        for (std::int64_t r = 0; r < R; ++r) {
            centers[r].first = std::clamp(centers[r].first + drift * gauss(rng), 0.05, 0.95);
            centers[r].second = std::clamp(centers[r].second + drift * gauss(rng), 0.05, 0.95);
        }
    }
    out.stack.validate();
    return out;
}

}  // namespace holotea
