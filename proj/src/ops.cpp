#include <algorithm>
#include <cmath>
#include <limits>

#include "holotea/tape.hpp"

namespace holotea {

namespace {

bool needs(Tape& t, Var v) { return t.requires_grad(v); }

Var unary(Tape& t, Var a, Tensor2 out,
          std::function<void(const Tensor2& /*self grad*/, const Tensor2& /*a val*/,
                             Tensor2& /*a grad*/)> back) {
    auto fn = [a, back](Tape& tp, std::int32_t self) {
        if (!tp.requires_grad(a)) return;
        back(tp.grad(Var{self}), tp.value(a), tp.grad(a));
    };
    return t.make(std::move(out), {a}, fn);
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
    const Tensor2& va = t.value(a);
    const Tensor2& vb = t.value(b);
    check_shape(va.same_shape(vb), "add: shape mismatch");
    Tensor2 out = va;
    for (std::int64_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
    return t.make(std::move(out), {a, b}, [a, b](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        if (tp.requires_grad(a)) {
            Tensor2& ga = tp.grad(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        }
        if (tp.requires_grad(b)) {
            Tensor2& gb = tp.grad(b);
            for (std::int64_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
        }
    });
}

Var sub(Tape& t, Var a, Var b) {
    const Tensor2& va = t.value(a);
    const Tensor2& vb = t.value(b);
    check_shape(va.same_shape(vb), "sub: shape mismatch");
    Tensor2 out = va;
    for (std::int64_t i = 0; i < out.size(); ++i) out.data[i] -= vb.data[i];
    return t.make(std::move(out), {a, b}, [a, b](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        if (tp.requires_grad(a)) {
            Tensor2& ga = tp.grad(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        }
        if (tp.requires_grad(b)) {
            Tensor2& gb = tp.grad(b);
            for (std::int64_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Tensor2& va = t.value(a);
    const Tensor2& vb = t.value(b);
    check_shape(va.same_shape(vb), "mul: shape mismatch");
    Tensor2 out = va;
    for (std::int64_t i = 0; i < out.size(); ++i) out.data[i] *= vb.data[i];
    return t.make(std::move(out), {a, b}, [a, b](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        if (tp.requires_grad(a)) {
            Tensor2& ga = tp.grad(a);
            const Tensor2& vb2 = tp.value(b);
            for (std::int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vb2.data[i];
        }
        if (tp.requires_grad(b)) {
            Tensor2& gb = tp.grad(b);
            const Tensor2& va2 = tp.value(a);
            for (std::int64_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * va2.data[i];
        }
    });
}

Var scale(Tape& t, Var a, double s) {
    Tensor2 out = t.value(a);
    for (double& v : out.data) v *= s;
    return unary(t, a, std::move(out), [s](const Tensor2& g, const Tensor2&, Tensor2& ga) {
        for (std::int64_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
    });
}

Var add_scalar(Tape& t, Var a, double s) {
    Tensor2 out = t.value(a);
    for (double& v : out.data) v += s;
    return unary(t, a, std::move(out), [](const Tensor2& g, const Tensor2&, Tensor2& ga) {
        for (std::int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    });
}

Var matmul_fb(Tape& t, Var a, Var b) {
    Tensor2 out = matmul(t.value(a), t.value(b));
    return t.make(std::move(out), {a, b}, [a, b](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        if (tp.requires_grad(a)) {
            Tensor2 da = matmul(g, transpose(tp.value(b)));
            Tensor2& ga = tp.grad(a);
            for (std::int64_t i = 0; i < da.size(); ++i) ga.data[i] += da.data[i];
        }
        if (tp.requires_grad(b)) {
            Tensor2 db = matmul(transpose(tp.value(a)), g);
            Tensor2& gb = tp.grad(b);
            for (std::int64_t i = 0; i < db.size(); ++i) gb.data[i] += db.data[i];
        }
    });
}

Var transpose_fb(Tape& t, Var a) {
    Tensor2 out = transpose(t.value(a));
    return unary(t, a, std::move(out), [](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
        for (std::int64_t r = 0; r < va.rows; ++r)
            for (std::int64_t c = 0; c < va.cols; ++c) ga.at(r, c) += g.at(c, r);
    });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    std::int64_t rows = t.value(parts[0]).rows;
    std::int64_t cols = 0;
    for (Var p : parts) {
        check_shape(t.value(p).rows == rows, "concat_cols: row mismatch");
        cols += t.value(p).cols;
    }
    Tensor2 out(rows, cols);
    std::int64_t off = 0;
    for (Var p : parts) {
        const Tensor2& v = t.value(p);
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < v.cols; ++c) out.at(r, off + c) = v.at(r, c);
        off += v.cols;
    }
    std::vector<Var> ps = parts;
    return t.make(std::move(out), ps, [ps](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        std::int64_t off2 = 0;
        for (Var p : ps) {
            const Tensor2& v = tp.value(p);
            if (tp.requires_grad(p)) {
                Tensor2& gp = tp.grad(p);
                for (std::int64_t r = 0; r < v.rows; ++r)
                    for (std::int64_t c = 0; c < v.cols; ++c) gp.at(r, c) += g.at(r, off2 + c);
            }
            off2 += v.cols;
        }
    });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    std::int64_t cols = t.value(parts[0]).cols;
    std::int64_t rows = 0;
    for (Var p : parts) {
        check_shape(t.value(p).cols == cols, "concat_rows: col mismatch");
        rows += t.value(p).rows;
    }
    Tensor2 out(rows, cols);
    std::int64_t off = 0;
    for (Var p : parts) {
        const Tensor2& v = t.value(p);
        std::copy(v.data.begin(), v.data.end(), out.data.begin() + off * cols);
        off += v.rows;
    }
    std::vector<Var> ps = parts;
    return t.make(std::move(out), ps, [ps, cols](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        std::int64_t off2 = 0;
        for (Var p : ps) {
            const Tensor2& v = tp.value(p);
            if (tp.requires_grad(p)) {
                Tensor2& gp = tp.grad(p);
                for (std::int64_t i = 0; i < v.size(); ++i)
                    gp.data[i] += g.data[off2 * cols + i];
            }
            off2 += v.rows;
        }
    });
}

Var slice_cols(Tape& t, Var a, std::int64_t start, std::int64_t len) {
    const Tensor2& v = t.value(a);
    check_shape(start >= 0 && start + len <= v.cols, "slice_cols: out of range");
    Tensor2 out(v.rows, len);
    for (std::int64_t r = 0; r < v.rows; ++r)
        for (std::int64_t c = 0; c < len; ++c) out.at(r, c) = v.at(r, start + c);
    return unary(t, a, std::move(out),
                 [start, len](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
                     for (std::int64_t r = 0; r < va.rows; ++r)
                         for (std::int64_t c = 0; c < len; ++c) ga.at(r, start + c) += g.at(r, c);
                 });
}

Var slice_rows(Tape& t, Var a, std::int64_t start, std::int64_t len) {
    const Tensor2& v = t.value(a);
    check_shape(start >= 0 && start + len <= v.rows, "slice_rows: out of range");
    Tensor2 out(len, v.cols);
    std::copy(v.data.begin() + start * v.cols, v.data.begin() + (start + len) * v.cols,
              out.data.begin());
    return unary(t, a, std::move(out),
                 [start, len](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
                     for (std::int64_t i = 0; i < len * va.cols; ++i)
                         ga.data[start * va.cols + i] += g.data[i];
                 });
}

Var softmax_rows_fb(Tape& t, Var logits) {
    const Tensor2& v = t.value(logits);
    Tensor2 out(v.rows, v.cols);
    for (std::int64_t r = 0; r < v.rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < v.cols; ++c) mx = std::max(mx, v.at(r, c));
        if (!std::isfinite(mx)) throw std::runtime_error("softmax_rows: degenerate row (all -inf)");
        double z = 0.0;
        for (std::int64_t c = 0; c < v.cols; ++c) {
            double e = std::exp(v.at(r, c) - mx);
            out.at(r, c) = e;
            z += e;
        }
        for (std::int64_t c = 0; c < v.cols; ++c) out.at(r, c) /= z;
    }
    return t.make(std::move(out), {logits}, [logits](Tape& tp, std::int32_t me) {
        const Tensor2& g = tp.grad(Var{me});
        const Tensor2& y = tp.value(Var{me});
        if (tp.requires_grad(logits)) {
            Tensor2& gl = tp.grad(logits);
            for (std::int64_t r = 0; r < y.rows; ++r) {
                double dot = 0.0;
                for (std::int64_t c = 0; c < y.cols; ++c) dot += g.at(r, c) * y.at(r, c);
                for (std::int64_t c = 0; c < y.cols; ++c)
                    gl.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
            }
        }
    });
}

Var layer_norm_fb(Tape& t, Var x, Var gain, Var bias, double eps) {
    const Tensor2& v = t.value(x);
    const Tensor2& g0 = t.value(gain);
    const Tensor2& b0 = t.value(bias);
    check_shape(g0.size() == v.cols && b0.size() == v.cols, "layer_norm: affine length != cols");
    if (eps <= 0) throw std::invalid_argument("layer_norm: eps must be positive");
    Tensor2 out(v.rows, v.cols);
    for (std::int64_t r = 0; r < v.rows; ++r) {
        double mean = 0.0;
        for (std::int64_t c = 0; c < v.cols; ++c) mean += v.at(r, c);
        mean /= static_cast<double>(v.cols);
        double var = 0.0;
        for (std::int64_t c = 0; c < v.cols; ++c) {
            double d = v.at(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(v.cols);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t c = 0; c < v.cols; ++c)
            out.at(r, c) = (v.at(r, c) - mean) * inv * g0.data[c] + b0.data[c];
    }
    return t.make(std::move(out), {x, gain, bias},
                  [x, gain, bias, eps](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        const Tensor2& v2 = tp.value(x);
        const Tensor2& gv = tp.value(gain);
        const std::int64_t C = v2.cols;
        for (std::int64_t r = 0; r < v2.rows; ++r) {
            double mean = 0.0;
            for (std::int64_t c = 0; c < C; ++c) mean += v2.at(r, c);
            mean /= static_cast<double>(C);
            double var = 0.0;
            for (std::int64_t c = 0; c < C; ++c) {
                double d = v2.at(r, c) - mean;
                var += d * d;
            }
            var /= static_cast<double>(C);
            double inv = 1.0 / std::sqrt(var + eps);
            // xhat_c = (x_c - mean) * inv
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::int64_t c = 0; c < C; ++c) {
                double xhat = (v2.at(r, c) - mean) * inv;
                double dxhat = g.at(r, c) * gv.data[c];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
            if (tp.requires_grad(x)) {
                Tensor2& gx = tp.grad(x);
                for (std::int64_t c = 0; c < C; ++c) {
                    double xhat = (v2.at(r, c) - mean) * inv;
                    double dxhat = g.at(r, c) * gv.data[c];
                    gx.at(r, c) += inv * (dxhat - sum_dxhat / static_cast<double>(C) -
                                          xhat * sum_dxhat_xhat / static_cast<double>(C));
                }
            }
            if (tp.requires_grad(gain)) {
                Tensor2& gg = tp.grad(gain);
                for (std::int64_t c = 0; c < C; ++c)
                    gg.data[c] += g.at(r, c) * (v2.at(r, c) - mean) * inv;
            }
            if (tp.requires_grad(bias)) {
                Tensor2& gb = tp.grad(bias);
                for (std::int64_t c = 0; c < C; ++c) gb.data[c] += g.at(r, c);
            }
        }
    });
}

Var gelu(Tape& t, Var a) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    constexpr double kCubic = 0.044715;
    const Tensor2& v = t.value(a);
    Tensor2 out = v;
    for (double& x : out.data) {
        double inner = kSqrt2OverPi * (x + kCubic * x * x * x);
        x = 0.5 * x * (1.0 + std::tanh(inner));
    }
    return unary(t, a, std::move(out), [](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
        constexpr double s = 0.7978845608028654;
        constexpr double c = 0.044715;
        for (std::int64_t i = 0; i < va.size(); ++i) {
            double x = va.data[i];
            double inner = s * (x + c * x * x * x);
            double th = std::tanh(inner);
            double sech2 = 1.0 - th * th;
            double d = 0.5 * (1.0 + th) + 0.5 * x * sech2 * s * (1.0 + 3.0 * c * x * x);
            ga.data[i] += g.data[i] * d;
        }
    });
}

Var sigmoid_fb(Tape& t, Var a) {
    Tensor2 out = t.value(a);
    for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
    return t.make(std::move(out), {a}, [a](Tape& tp, std::int32_t me) {
        if (!tp.requires_grad(a)) return;
        const Tensor2& g = tp.grad(Var{me});
        const Tensor2& y = tp.value(Var{me});
        Tensor2& ga = tp.grad(a);
        for (std::int64_t i = 0; i < y.size(); ++i)
            ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    });
}

Var softplus_fb(Tape& t, Var a) {
    Tensor2 out = t.value(a);
    for (double& x : out.data) x = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    return unary(t, a, std::move(out), [](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
        for (std::int64_t i = 0; i < va.size(); ++i)
            ga.data[i] += g.data[i] / (1.0 + std::exp(-va.data[i]));
    });
}

Var exp_fb(Tape& t, Var a) {
    Tensor2 out = t.value(a);
    for (double& x : out.data) x = std::exp(x);
    return unary(t, a, std::move(out), [](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
        for (std::int64_t i = 0; i < va.size(); ++i)
            ga.data[i] += g.data[i] * std::exp(va.data[i]);
    });
}

Var log_fb(Tape& t, Var a) {
    Tensor2 out = t.value(a);
    for (double& x : out.data) x = std::log(x);
    return unary(t, a, std::move(out), [](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
        for (std::int64_t i = 0; i < va.size(); ++i) ga.data[i] += g.data[i] / va.data[i];
    });
}

Var lgamma_fb(Tape& t, Var a) {
    Tensor2 out = t.value(a);
    for (double& x : out.data) x = std::lgamma(x);
    return unary(t, a, std::move(out), [](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
        for (std::int64_t i = 0; i < va.size(); ++i)
            ga.data[i] += g.data[i] * digamma(va.data[i]);
    });
}

Var sum_all(Tape& t, Var a) {
    const Tensor2& v = t.value(a);
    double s = 0.0;
    for (double x : v.data) s += x;
    return unary(t, a, Tensor2::from(1, 1, {s}),
                 [](const Tensor2& g, const Tensor2&, Tensor2& ga) {
                     for (double& x : ga.data) x += g.data[0];
                 });
}

Var mean_all(Tape& t, Var a) {
    const Tensor2& v = t.value(a);
    double n = static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v.data) s += x;
    return unary(t, a, Tensor2::from(1, 1, {s / n}),
                 [n](const Tensor2& g, const Tensor2&, Tensor2& ga) {
                     for (double& x : ga.data) x += g.data[0] / n;
                 });
}

Var tile_rows(Tape& t, Var row, std::int64_t n) {
    const Tensor2& v = t.value(row);
    check_shape(v.rows == 1, "tile_rows: expects a 1xC row");
    Tensor2 out(n, v.cols);
    for (std::int64_t r = 0; r < n; ++r)
        std::copy(v.data.begin(), v.data.end(), out.data.begin() + r * v.cols);
    return unary(t, row, std::move(out), [n](const Tensor2& g, const Tensor2& vr, Tensor2& gr) {
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < vr.cols; ++c) gr.data[c] += g.at(r, c);
    });
}

Var add_row(Tape& t, Var a, Var row) {
    const Tensor2& v = t.value(a);
    const Tensor2& r0 = t.value(row);
    check_shape(r0.rows == 1 && r0.cols == v.cols, "add_row: bias shape mismatch");
    Tensor2 out = v;
    for (std::int64_t r = 0; r < v.rows; ++r)
        for (std::int64_t c = 0; c < v.cols; ++c) out.at(r, c) += r0.data[c];
    return t.make(std::move(out), {a, row}, [a, row](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        if (tp.requires_grad(a)) {
            Tensor2& ga = tp.grad(a);
            for (std::int64_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        }
        if (tp.requires_grad(row)) {
            Tensor2& gr = tp.grad(row);
            for (std::int64_t r = 0; r < g.rows; ++r)
                for (std::int64_t c = 0; c < g.cols; ++c) gr.data[c] += g.at(r, c);
        }
    });
}

Var gather_rows(Tape& t, Var a, const std::vector<std::int64_t>& indices) {
    const Tensor2& v = t.value(a);
    Tensor2 out(static_cast<std::int64_t>(indices.size()), v.cols);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        check_shape(indices[r] >= 0 && indices[r] < v.rows, "gather_rows: index out of range");
        std::copy(v.data.begin() + indices[r] * v.cols, v.data.begin() + (indices[r] + 1) * v.cols,
                  out.data.begin() + static_cast<std::int64_t>(r) * v.cols);
    }
    std::vector<std::int64_t> idx = indices;
    return unary(t, a, std::move(out), [idx](const Tensor2& g, const Tensor2& va, Tensor2& ga) {
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::int64_t c = 0; c < va.cols; ++c)
                ga.at(idx[r], c) += g.at(static_cast<std::int64_t>(r), c);
    });
}

Var dropout(Tape& t, Var a, double rate, std::mt19937_64& rng, bool training) {
    if (!training || rate <= 0.0) return a;
    const Tensor2& v = t.value(a);
    Tensor2 mask(v.rows, v.cols);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep = 1.0 - rate;
    for (double& m : mask.data) m = (u(rng) < keep) ? 1.0 / keep : 0.0;
    Tensor2 out = v;
    for (std::int64_t i = 0; i < out.size(); ++i) out.data[i] *= mask.data[i];
    return unary(t, a, std::move(out),
                 [mask](const Tensor2& g, const Tensor2&, Tensor2& ga) {
                     for (std::int64_t i = 0; i < g.size(); ++i)
                         ga.data[i] += g.data[i] * mask.data[i];
                 });
}

Var local_attention(Tape& t, Var q, Var k, Var v, Var bias,
                    const std::vector<std::vector<std::int64_t>>& neighbors,
                    std::int64_t heads) {
    const Tensor2& Q = t.value(q);
    const Tensor2& K = t.value(k);
    const Tensor2& V = t.value(v);
    const Tensor2& B = t.value(bias);
    const std::int64_t N = Q.rows;
    check_shape(Q.cols % heads == 0, "local_attention: dim not divisible by heads");
    const std::int64_t dh = Q.cols / heads;
    check_shape(K.same_shape(Q) && V.same_shape(Q), "local_attention: q/k/v shape mismatch");
    std::int64_t edges = 0;
    for (const auto& nb : neighbors) edges += static_cast<std::int64_t>(nb.size());
    check_shape(B.rows == edges && B.cols == heads, "local_attention: bias shape mismatch");
    check_shape(static_cast<std::int64_t>(neighbors.size()) == N,
                "local_attention: neighbor list count != N");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    // Attention weights, stored flat per (edge, head) for the backward pass.
    Tensor2 alpha(edges, heads);
    Tensor2 out(N, Q.cols);
    std::int64_t e0 = 0;
    for (std::int64_t i = 0; i < N; ++i) {
        const auto& nb = neighbors[i];
        const std::int64_t deg = static_cast<std::int64_t>(nb.size());
        check_shape(deg >= 1, "local_attention: spot attends to nothing");
        for (std::int64_t h = 0; h < heads; ++h) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t e = 0; e < deg; ++e) {
                double logit = B.at(e0 + e, h);
                for (std::int64_t c = 0; c < dh; ++c)
                    logit += Q.at(i, h * dh + c) * K.at(nb[e], h * dh + c) * inv_sqrt;
                alpha.at(e0 + e, h) = logit;
                mx = std::max(mx, logit);
            }
            double z = 0.0;
            for (std::int64_t e = 0; e < deg; ++e) {
                double ex = std::exp(alpha.at(e0 + e, h) - mx);
                alpha.at(e0 + e, h) = ex;
                z += ex;
            }
            for (std::int64_t e = 0; e < deg; ++e) {
                alpha.at(e0 + e, h) /= z;
                double a = alpha.at(e0 + e, h);
                for (std::int64_t c = 0; c < dh; ++c)
                    out.at(i, h * dh + c) += a * V.at(nb[e], h * dh + c);
            }
        }
        e0 += deg;
    }

    auto nbrs = neighbors;  // keep alive for backward
    return t.make(std::move(out), {q, k, v, bias},
                  [q, k, v, bias, nbrs, heads, dh, inv_sqrt, alpha](Tape& tp, std::int32_t self) {
        const Tensor2& g = tp.grad(Var{self});
        const Tensor2& Q2 = tp.value(q);
        const Tensor2& K2 = tp.value(k);
        const Tensor2& V2 = tp.value(v);
        const bool nq = tp.requires_grad(q), nk = tp.requires_grad(k), nv = tp.requires_grad(v),
                   nbias = tp.requires_grad(bias);
        Tensor2* gq = nq ? &tp.grad(q) : nullptr;
        Tensor2* gk = nk ? &tp.grad(k) : nullptr;
        Tensor2* gv = nv ? &tp.grad(v) : nullptr;
        Tensor2* gb = nbias ? &tp.grad(bias) : nullptr;
        const std::int64_t N = Q2.rows;
        std::int64_t e0 = 0;
        for (std::int64_t i = 0; i < N; ++i) {
            const auto& nb = nbrs[i];
            const std::int64_t deg = static_cast<std::int64_t>(nb.size());
            for (std::int64_t h = 0; h < heads; ++h) {
                // dalpha_e = <dout_i, v_e>; dlogit_e = alpha_e (dalpha_e - sum alpha dalpha)
                double dot = 0.0;
                std::vector<double> dalpha(deg);
                for (std::int64_t e = 0; e < deg; ++e) {
                    double s = 0.0;
                    for (std::int64_t c = 0; c < dh; ++c)
                        s += g.at(i, h * dh + c) * V2.at(nb[e], h * dh + c);
                    dalpha[e] = s;
                    dot += alpha.at(e0 + e, h) * s;
                }
                for (std::int64_t e = 0; e < deg; ++e) {
                    const double a = alpha.at(e0 + e, h);
                    const double dlogit = a * (dalpha[e] - dot);
                    if (gb) gb->at(e0 + e, h) += dlogit;
                    for (std::int64_t c = 0; c < dh; ++c) {
                        if (gq)
                            gq->at(i, h * dh + c) += dlogit * K2.at(nb[e], h * dh + c) * inv_sqrt;
                        if (gk)
                            gk->at(nb[e], h * dh + c) += dlogit * Q2.at(i, h * dh + c) * inv_sqrt;
                        if (gv) gv->at(nb[e], h * dh + c) += a * g.at(i, h * dh + c);
                    }
                }
            }
            e0 += deg;
        }
    });
}

namespace {
struct BilinearTap {
    std::int64_t cell;
    double w;
};

// Four (cell, weight) taps for a clamped bilinear lookup.
void bilinear_taps(double x, double y, std::int64_t H, std::int64_t W, BilinearTap taps[4]) {
    x = std::clamp(x, 0.0, static_cast<double>(W - 1));
    y = std::clamp(y, 0.0, static_cast<double>(H - 1));
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
    const std::int64_t x1 = std::min(x0 + 1, W - 1);
    const std::int64_t y1 = std::min(y0 + 1, H - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    taps[0] = {y0 * W + x0, (1 - fx) * (1 - fy)};
    taps[1] = {y0 * W + x1, fx * (1 - fy)};
    taps[2] = {y1 * W + x0, (1 - fx) * fy};
    taps[3] = {y1 * W + x1, fx * fy};
}
}  // namespace

Tensor2 grid_sample_bilinear(const Tensor2& map, std::int64_t height, std::int64_t width,
                             const Tensor2& coords) {
    check_shape(map.rows == height * width, "grid_sample: map rows != H*W");
    check_shape(coords.cols == 2, "grid_sample: coords must be Nx2");
    Tensor2 out(coords.rows, map.cols);
    BilinearTap taps[4];
    for (std::int64_t i = 0; i < coords.rows; ++i) {
        bilinear_taps(coords.at(i, 0), coords.at(i, 1), height, width, taps);
        for (const auto& tp : taps)
            for (std::int64_t c = 0; c < map.cols; ++c)
                out.at(i, c) += tp.w * map.at(tp.cell, c);
    }
    return out;
}

Var grid_sample_fb(Tape& t, Var map, std::int64_t height, std::int64_t width,
                   const Tensor2& coords) {
    Tensor2 out = grid_sample_bilinear(t.value(map), height, width, coords);
    Tensor2 crd = coords;
    return unary(t, map, std::move(out),
                 [height, width, crd](const Tensor2& g, const Tensor2&, Tensor2& gm) {
                     BilinearTap taps[4];
                     for (std::int64_t i = 0; i < crd.rows; ++i) {
                         bilinear_taps(crd.at(i, 0), crd.at(i, 1), height, width, taps);
                         for (const auto& tp : taps)
                             for (std::int64_t c = 0; c < gm.cols; ++c)
                                 gm.at(tp.cell, c) += tp.w * g.at(i, c);
                     }
                 });
}

}  // namespace holotea
