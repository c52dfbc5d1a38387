#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace holotea {

/// Dense row-major matrix of 64-bit reals. Vectors are 1xN or Nx1 as needed.
struct Tensor2 {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(std::int64_t r, std::int64_t c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r * c), fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Tensor2: negative shape");
    }

    static Tensor2 from(std::int64_t r, std::int64_t c, std::vector<double> values) {
        if (static_cast<std::int64_t>(values.size()) != r * c)
            throw std::invalid_argument("Tensor2::from: size mismatch");
        Tensor2 t;
        t.rows = r;
        t.cols = c;
        t.data = std::move(values);
        return t;
    }

    double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols + c)]; }

    std::int64_t size() const { return rows * cols; }
    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const;

    /// Frobenius norm.
    double norm() const;
};

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void check_shape(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

// Basic non-differentiable helpers used throughout.
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 transpose(const Tensor2& a);

}  // namespace holotea
