#include "holotea/zinb.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace holotea {

void ZinbParams::validate() const {
    check_shape(mu.same_shape(theta) && mu.same_shape(pi), "ZinbParams: shape mismatch");
    for (double v : mu.data)
        if (!(v > 0)) throw std::invalid_argument("ZinbParams: mu must be positive");
    for (double v : theta.data)
        if (!(v > 0)) throw std::invalid_argument("ZinbParams: theta must be positive");
    for (double v : pi.data)
        if (!(v > 0 && v < 1)) throw std::invalid_argument("ZinbParams: pi must be in (0,1)");
}

double zinb_log_pmf(std::int64_t y, double mu, double theta, double pi) {
    if (y < 0) throw std::invalid_argument("zinb_log_pmf: negative count");
    if (!(mu > 0) || !(theta > 0)) throw std::invalid_argument("zinb_log_pmf: mu,theta must be > 0");
    if (pi < 0 || pi > 1) throw std::invalid_argument("zinb_log_pmf: pi outside [0,1]");
    const double log_ratio = std::log(theta) - std::log(theta + mu);
    if (y == 0) {
        // log(pi + (1-pi) * (theta/(theta+mu))^theta), all terms in (0,1].
        return std::log(pi + (1.0 - pi) * std::exp(theta * log_ratio));
    }
    if (pi >= 1.0) return -std::numeric_limits<double>::infinity();
    const double yd = static_cast<double>(y);
    const double log_nb = std::lgamma(yd + theta) - std::lgamma(theta) - std::lgamma(yd + 1.0) +
                          theta * log_ratio + yd * (std::log(mu) - std::log(theta + mu));
    return std::log1p(-pi) + log_nb;
}

Var zinb_nll(Tape& t, const Tensor2& counts, Var mu, Var theta, Var pi) {
    const Tensor2& m = t.value(mu);
    check_shape(counts.same_shape(m) && counts.same_shape(t.value(theta)) &&
                    counts.same_shape(t.value(pi)),
                "zinb_nll: shape mismatch");
    Tensor2 zero_mask(counts.rows, counts.cols);
    Tensor2 pos_mask(counts.rows, counts.cols);
    Tensor2 lgamma_y1(counts.rows, counts.cols);
    for (std::int64_t i = 0; i < counts.size(); ++i) {
        const double y = counts.data[i];
        if (y < 0 || y != std::floor(y))
            throw std::invalid_argument("zinb_nll: counts must be nonnegative integers");
        zero_mask.data[i] = (y == 0.0) ? 1.0 : 0.0;
        pos_mask.data[i] = 1.0 - zero_mask.data[i];
        lgamma_y1.data[i] = std::lgamma(y + 1.0);
    }
    Var y = t.leaf(counts);
    Var mask0 = t.leaf(zero_mask);
    Var maskp = t.leaf(pos_mask);

    Var log_theta = log_fb(t, theta);
    Var log_theta_mu = log_fb(t, add(t, theta, mu));
    Var log_ratio = sub(t, log_theta, log_theta_mu);          // log(theta/(theta+mu))
    Var log_nb0 = mul(t, theta, log_ratio);                   // log NB(0)
    Var one_minus_pi = add_scalar(t, scale(t, pi, -1.0), 1.0);

    // y = 0: log(pi + (1-pi) exp(log NB(0)))
    Var ll_zero = log_fb(t, add(t, pi, mul(t, one_minus_pi, exp_fb(t, log_nb0))));

    // y > 0: log(1-pi) + lgamma(y+theta) - lgamma(theta) - lgamma(y+1)
    //        + theta*log_ratio + y*(log mu - log(theta+mu))
    // Evaluated everywhere (finite for y=0 too) and masked afterwards.
    Var ll_pos = log_fb(t, one_minus_pi);
    ll_pos = add(t, ll_pos, lgamma_fb(t, add(t, y, theta)));
    ll_pos = sub(t, ll_pos, lgamma_fb(t, theta));
    ll_pos = sub(t, ll_pos, t.leaf(lgamma_y1));
    ll_pos = add(t, ll_pos, log_nb0);
    ll_pos = add(t, ll_pos, mul(t, y, sub(t, log_fb(t, mu), log_theta_mu)));

    Var ll = add(t, mul(t, mask0, ll_zero), mul(t, maskp, ll_pos));
    return scale(t, sum_all(t, ll), -1.0);
}

Tensor2 zinb_sample(const ZinbParams& params, std::mt19937_64& rng, Tensor2* raw_counts) {
    params.validate();
    const Tensor2& mu = params.mu;
    Tensor2 out(mu.rows, mu.cols);
    if (raw_counts) *raw_counts = Tensor2(mu.rows, mu.cols);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::int64_t i = 0; i < mu.size(); ++i) {
        double count = 0.0;
        if (u(rng) >= params.pi.data[i]) {
            const double theta = params.theta.data[i];
            std::gamma_distribution<double> gamma(theta, mu.data[i] / theta);
            std::poisson_distribution<std::int64_t> poisson(gamma(rng));
            count = static_cast<double>(poisson(rng));
        }
        if (raw_counts) raw_counts->data[i] = count;
        out.data[i] = std::log1p(count);
    }
    return out;
}

ZinbParams fixed_zinb_params(const FixedZinbConfig& cfg, std::int64_t n, std::int64_t g) {
    // NB with total-count r and success logits l has mean r * exp(l);
    // zero-inflation probability is sigmoid of zi_logits.
    ZinbParams p;
    p.theta = Tensor2(n, g, cfg.total_count);
    p.mu = Tensor2(n, g, cfg.total_count * std::exp(cfg.logits));
    p.pi = Tensor2(n, g, 1.0 / (1.0 + std::exp(-cfg.zi_logits)));
    return p;
}

}  // namespace holotea
