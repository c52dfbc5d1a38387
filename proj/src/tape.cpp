#include "holotea/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace holotea {

Var Tape::leaf(Tensor2 value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::make(Tensor2 value, std::vector<Var> parents,
               std::function<void(Tape&, std::int32_t)> backward) {
    if (check_finite && !value.all_finite())
        throw std::runtime_error("Tape: non-finite value produced by forward op");
    Node n;
    n.value = std::move(value);
    for (Var p : parents) {
        n.parents.push_back(p.idx);
        if (nodes_[p.idx].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor2& Tape::grad(Var v) {
    Node& n = nodes_[v.idx];
    if (!n.grad_alloc) {
        n.grad = Tensor2(n.value.rows, n.value.cols, 0.0);
        n.grad_alloc = true;
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    const Node& ln = nodes_[loss.idx];
    if (ln.value.size() != 1) throw std::runtime_error("Tape::backward: loss must be scalar");
    grad(loss).data[0] = 1.0;
    for (std::int32_t i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || !n.grad_alloc || !n.backward) continue;
        n.backward(*this, i);
    }
}

void Tape::reset() { nodes_.clear(); }

double digamma(double x) {
    // Shift into the asymptotic regime, then the standard series.
    double result = 0.0;
    while (x < 6.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)));
    return result;
}

}  // namespace holotea
