#include "holotea/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace holotea {

namespace {
using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EigenRowMajor>;
using Map = Eigen::Map<EigenRowMajor>;
}  // namespace

bool Tensor2::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor2::norm() const {
    double s = 0.0;
    for (double v : data) s += v * v;
    return std::sqrt(s);
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    check_shape(a.cols == b.rows, "matmul: inner dimensions differ");
    Tensor2 out(a.rows, b.cols);
    if (a.rows == 0 || b.cols == 0 || a.cols == 0) return out;
    MapC ma(a.data.data(), a.rows, a.cols);
    MapC mb(b.data.data(), b.rows, b.cols);
    Map mo(out.data.data(), out.rows, out.cols);
    mo.noalias() = ma * mb;
    return out;
}

Tensor2 transpose(const Tensor2& a) {
    Tensor2 out(a.cols, a.rows);
    for (std::int64_t r = 0; r < a.rows; ++r)
        for (std::int64_t c = 0; c < a.cols; ++c) out.at(c, r) = a.at(r, c);
    return out;
}

}  // namespace holotea
