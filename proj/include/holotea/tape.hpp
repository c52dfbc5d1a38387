#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "holotea/tensor.hpp"

namespace holotea {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until Tape::reset().
struct Var {
    std::int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape. Nodes are created in topological order, so the backward
/// sweep is a single reverse pass. One tape per forward/backward; reset
/// between optimizer steps.
class Tape {
  public:
    Var leaf(Tensor2 value, bool requires_grad = false);

    /// Register a computed node. `backward` receives the tape and the node's
    /// own index; it must accumulate (+=) into parent gradients.
    Var make(Tensor2 value, std::vector<Var> parents,
             std::function<void(Tape&, std::int32_t)> backward);

    const Tensor2& value(Var v) const { return nodes_[v.idx].value; }
    Tensor2& grad(Var v);
    bool requires_grad(Var v) const { return nodes_[v.idx].needs_grad; }

    /// Seeds d(loss)/d(loss)=1 and sweeps the tape once in reverse.
    void backward(Var loss);

    void reset();
    std::size_t size() const { return nodes_.size(); }

    const std::vector<std::int32_t>& parents(Var v) const { return nodes_[v.idx].parents; }

    /// When set, every forward op asserts all-finite output.
    bool check_finite = true;

  private:
    struct Node {
        Tensor2 value;
        Tensor2 grad;
        bool grad_alloc = false;
        bool needs_grad = false;
        std::vector<std::int32_t> parents;
        std::function<void(Tape&, std::int32_t)> backward;
    };
    std::vector<Node> nodes_;
};

// ---- differentiable primitives ----

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise
Var scale(Tape& t, Var a, double s);
Var add_scalar(Tape& t, Var a, double s);
Var matmul_fb(Tape& t, Var a, Var b);
Var transpose_fb(Tape& t, Var a);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_cols(Tape& t, Var a, std::int64_t start, std::int64_t len);
Var slice_rows(Tape& t, Var a, std::int64_t start, std::int64_t len);
Var softmax_rows_fb(Tape& t, Var logits);
Var layer_norm_fb(Tape& t, Var x, Var gain, Var bias, double eps);
Var gelu(Tape& t, Var a);
Var sigmoid_fb(Tape& t, Var a);
Var softplus_fb(Tape& t, Var a);
Var exp_fb(Tape& t, Var a);
Var log_fb(Tape& t, Var a);
Var lgamma_fb(Tape& t, Var a);
Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
Var tile_rows(Tape& t, Var row, std::int64_t n);  // row is 1xC
Var add_row(Tape& t, Var a, Var row);             // broadcast bias add
Var gather_rows(Tape& t, Var a, const std::vector<std::int64_t>& indices);
Var dropout(Tape& t, Var a, double rate, std::mt19937_64& rng, bool training);

/// Sparse multi-head neighbor attention. q,k,v are Nx(h*dh) packed by head;
/// bias holds one logit offset per (edge, head) where edges enumerate, for
/// each spot i, the attended set neighbors[i] (which must include every index
/// the caller wants visible, self included if desired). Offsets into bias rows
/// follow the flattened order of `neighbors`.
Var local_attention(Tape& t, Var q, Var k, Var v, Var bias,
                    const std::vector<std::vector<std::int64_t>>& neighbors,
                    std::int64_t heads);

/// Bilinear sampling of an (H*W)xC map at continuous (x,y) in cell units,
/// clamped to the border. Differentiable in the map only; coords are data.
Var grid_sample_fb(Tape& t, Var map, std::int64_t height, std::int64_t width,
                   const Tensor2& coords);

/// Non-differentiable bilinear sample used by plain (tensor-level) callers.
Tensor2 grid_sample_bilinear(const Tensor2& map, std::int64_t height, std::int64_t width,
                             const Tensor2& coords);

double digamma(double x);

}  // namespace holotea
