#include "vmus/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "vmus/error.hpp"

namespace vmus::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.data(), t.rows(), t.cols()); }
Map view(Tensor& t) { return Map(t.data(), t.rows(), t.cols()); }

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

void gemm_acc(Tensor& out, const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b,
              double alpha) {
    const std::size_t m = transpose_a ? a.cols() : a.rows();
    const std::size_t ka = transpose_a ? a.rows() : a.cols();
    const std::size_t kb = transpose_b ? b.cols() : b.rows();
    const std::size_t n = transpose_b ? b.rows() : b.cols();
    if (ka != kb || out.rows() != m || out.cols() != n) {
        throw InvalidArgument("gemm shape mismatch: " + shape_str(a.shape()) + (transpose_a ? "^T" : "") + " x " +
                              shape_str(b.shape()) + (transpose_b ? "^T" : "") + " -> " + shape_str(out.shape()));
    }
    if (m == 0 || n == 0 || ka == 0) return;
    auto o = view(out);
    const auto av = view(a);
    const auto bv = view(b);
    if (!transpose_a && !transpose_b) {
        o.noalias() += alpha * av * bv;
    } else if (!transpose_a && transpose_b) {
        o.noalias() += alpha * av * bv.transpose();
    } else if (transpose_a && !transpose_b) {
        o.noalias() += alpha * av.transpose() * bv;
    } else {
        o.noalias() += alpha * av.transpose() * bv.transpose();
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::matrix(a.rows(), b.cols());
    gemm_acc(out, a, false, b, false);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::matrix(a.rows(), b.rows());
    gemm_acc(out, a, false, b, true);
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.size() != x.cols()) {
        throw InvalidArgument("bias width " + std::to_string(bias.size()) + " does not match " + shape_str(x.shape()));
    }
    Tensor out = x;
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double* row = out.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) row[c] += bias[c];
    }
    return out;
}

void add_inplace(Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) {
        throw InvalidArgument("add shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

void softmax_inplace(std::span<double> row) {
    if (row.empty()) return;
    Eigen::Map<Eigen::ArrayXd> a(row.data(), static_cast<Eigen::Index>(row.size()));
    a = (a - a.maxCoeff()).exp();
    a /= a.sum();
}

Tensor softmax_rows(const Tensor& x) {
    Tensor out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps, LayerNormCache* cache) {
    const std::size_t rows = x.rows();
    const std::size_t n = x.cols();
    if (gain.size() != n || bias.size() != n) throw InvalidArgument("layer_norm: gain/bias width mismatch");
    Tensor out = Tensor::matrix(rows, n);
    if (cache) {
        cache->normalized = Tensor::matrix(rows, n);
        cache->inv_std.assign(rows, 0.0);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const auto xr = x.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        auto orow = out.row(r);
        for (std::size_t c = 0; c < n; ++c) {
            const double xh = (xr[c] - mean) * inv_std;
            if (cache) cache->normalized(r, c) = xh;
            orow[c] = xh * gain[c] + bias[c];
        }
        if (cache) cache->inv_std[r] = inv_std;
    }
    return out;
}

double gelu(double x) noexcept {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) noexcept {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

namespace {

// tanh(u) = 1 - 2 / (exp(2u) + 1), on Eigen's vectorized exp; std::tanh
// is several times slower and dominates the feed-forward cost.
Eigen::ArrayXd tanh_of(const Eigen::ArrayXd& u) { return 1.0 - 2.0 / ((2.0 * u).exp() + 1.0); }

Eigen::Map<const Eigen::ArrayXd> flat(const Tensor& t) {
    return Eigen::Map<const Eigen::ArrayXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}

}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    const auto xv = flat(x);
    const Eigen::ArrayXd t = tanh_of(kGeluC * (xv + kGeluA * xv.cube()));
    Eigen::Map<Eigen::ArrayXd>(out.data(), static_cast<Eigen::Index>(out.size())) = 0.5 * xv * (1.0 + t);
    return out;
}

void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    const auto xv = flat(x);
    const Eigen::ArrayXd t = tanh_of(kGeluC * (xv + kGeluA * xv.cube()));
    const Eigen::ArrayXd du = kGeluC * (1.0 + 3.0 * kGeluA * xv.square());
    Eigen::Map<Eigen::ArrayXd>(dx.data(), static_cast<Eigen::Index>(dx.size())) +=
        flat(dy) * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t.square()) * du);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine of a zero-norm vector");
    return dot / std::sqrt(na * nb);
}

}  // namespace vmus::kernels
