#include "holotea/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace holotea {

Tensor2& ParamStore::add(const std::string& name, Tensor2 init) {
    auto [it, inserted] = values_.emplace(name, std::move(init));
    if (!inserted) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    order_.push_back(name);
    return it->second;
}

Tensor2& ParamStore::get(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
}

const Tensor2& ParamStore::get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
}

void adam_step(ParamStore& params, GradMap& grads, AdamState& state) {
    if (grads.empty()) throw std::logic_error("adam_step: no gradients (run backward first)");
    const AdamConfig& c = state.cfg;

    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g.data) sq += v * v;
    const double norm = std::sqrt(sq);
    double gscale = 1.0;
    if (c.clip_norm > 0.0 && norm > c.clip_norm) gscale = c.clip_norm / norm;

    state.step += 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

    for (const std::string& name : params.names()) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        Tensor2& p = params.get(name);
        Tensor2& g = git->second;
        check_shape(g.same_shape(p), "adam_step: gradient shape mismatch for " + name);
        Tensor2& m = state.first_moment.try_emplace(name, Tensor2(p.rows, p.cols)).first->second;
        Tensor2& v = state.second_moment.try_emplace(name, Tensor2(p.rows, p.cols)).first->second;
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const double gi = g.data[i] * gscale;
            m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
            v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
    grads.clear();
}

std::map<std::string, Var> bind_params(Tape& t, const ParamStore& params, bool requires_grad) {
    std::map<std::string, Var> bound;
    for (const std::string& name : params.names())
        bound.emplace(name, t.leaf(params.get(name), requires_grad));
    return bound;
}

void collect_grads(Tape& t, const std::map<std::string, Var>& bound, GradMap& grads) {
    for (const auto& [name, var] : bound) {
        const Tensor2& g = t.grad(var);
        auto it = grads.find(name);
        if (it == grads.end()) {
            grads.emplace(name, g);
        } else {
            for (std::int64_t i = 0; i < g.size(); ++i) it->second.data[i] += g.data[i];
        }
    }
}

GradCheckResult grad_check(const ParamStore& params,
                           const std::function<Var(Tape&, const std::map<std::string, Var>&)>& loss_fn,
                           double h) {
    // Analytic pass.
    Tape tape;
    auto bound = bind_params(tape, params);
    Var loss = loss_fn(tape, bound);
    tape.backward(loss);
    GradMap analytic;
    collect_grads(tape, bound, analytic);
    tape.reset();

    // Mutable copy for perturbation.
    ParamStore work;
    for (const std::string& name : params.names()) work.add(name, params.get(name));

    auto eval = [&]() {
        Tape t2;
        auto b2 = bind_params(t2, work, /*requires_grad=*/false);
        return t2.value(loss_fn(t2, b2)).data[0];
    };

    GradCheckResult res;
    for (const std::string& name : params.names()) {
        Tensor2& p = work.get(name);
        const Tensor2& ga = analytic.at(name);
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const double orig = p.data[i];
            p.data[i] = orig + h;
            const double plus = eval();
            p.data[i] = orig - h;
            const double minus = eval();
            p.data[i] = orig;
            const double numeric = (plus - minus) / (2.0 * h);
            const double a = ga.data[i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = name;
            }
        }
    }
    return res;
}

Tensor2 randn(std::int64_t rows, std::int64_t cols, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    Tensor2 t(rows, cols);
    for (double& v : t.data) v = n(rng);
    return t;
}

Tensor2 xavier_init(std::int64_t fan_in, std::int64_t fan_out, std::mt19937_64& rng) {
    return randn(fan_in, fan_out, rng, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

}  // namespace holotea
