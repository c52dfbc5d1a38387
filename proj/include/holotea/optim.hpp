#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "holotea/tape.hpp"
#include "holotea/tensor.hpp"

namespace holotea {

/// Named parameters with stable (insertion) order. The order fixes optimizer
/// traversal and checkpoint record layout, which keeps runs byte-reproducible.
class ParamStore {
  public:
    Tensor2& add(const std::string& name, Tensor2 init);
    Tensor2& get(const std::string& name);
    const Tensor2& get(const std::string& name) const;
    bool has(const std::string& name) const { return values_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }
    std::size_t count() const { return order_.size(); }

  private:
    std::vector<std::string> order_;
    std::map<std::string, Tensor2> values_;
};

using GradMap = std::map<std::string, Tensor2>;

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // global L2 clip; <=0 disables
};

struct AdamState {
    AdamConfig cfg;
    std::int64_t step = 0;
    GradMap first_moment;
    GradMap second_moment;
};

/// Clips the global L2 norm of all gradients to cfg.clip_norm, applies a
/// bias-corrected Adam update in parameter-name order, and clears grads.
void adam_step(ParamStore& params, GradMap& grads, AdamState& state);

/// Binds every parameter as a grad-requiring leaf on the tape.
std::map<std::string, Var> bind_params(Tape& t, const ParamStore& params,
                                       bool requires_grad = true);

/// Pulls accumulated gradients off the tape into a GradMap (summing into any
/// existing entries, for multi-slide batches).
void collect_grads(Tape& t, const std::map<std::string, Var>& bound, GradMap& grads);

/// Central-difference check of d(loss)/d(params). `loss_fn` must rebuild the
/// forward pass from the supplied leaves and be deterministic.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
};
GradCheckResult grad_check(const ParamStore& params,
                           const std::function<Var(Tape&, const std::map<std::string, Var>&)>& loss_fn,
                           double h = 1e-5);

// Deterministic initializers.
Tensor2 randn(std::int64_t rows, std::int64_t cols, std::mt19937_64& rng, double stddev);
Tensor2 xavier_init(std::int64_t fan_in, std::int64_t fan_out, std::mt19937_64& rng);

}  // namespace holotea
