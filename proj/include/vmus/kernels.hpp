#pragma once

#include <span>
#include <vector>

#include "vmus/tensor.hpp"

// Forward kernels on plain tensors. The graph ops in ops.hpp wrap these and
// add the analytic backward passes; the incremental decoder calls them
// directly.
namespace vmus::kernels {

// out += alpha * op(a) * op(b), op = transpose when the flag is set.
void gemm_acc(Tensor& out, const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b,
              double alpha = 1.0);

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// x + bias broadcast over rows; bias is 1 x cols.
Tensor add_bias(const Tensor& x, const Tensor& bias);
void add_inplace(Tensor& x, const Tensor& y);

Tensor softmax_rows(const Tensor& x);
void softmax_inplace(std::span<double> row);

struct LayerNormCache {
    Tensor normalized;
    std::vector<double> inv_std;
};
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  LayerNormCache* cache = nullptr);

double gelu(double x) noexcept;
double gelu_grad(double x) noexcept;
Tensor gelu(const Tensor& x);
// dx += dy * gelu'(x)
void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace vmus::kernels
