#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>

#include "vmus/error.hpp"
#include "vmus/kernels.hpp"
#include "vmus/ops.hpp"

namespace vmus::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using StridedC = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

StridedC head_view(const Tensor& t, std::size_t h, std::size_t hd) {
    return StridedC(t.data() + h * hd, static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(hd),
                    Eigen::OuterStride<>(static_cast<Eigen::Index>(t.cols())));
}
Strided head_view(Tensor& t, std::size_t h, std::size_t hd) {
    return Strided(t.data() + h * hd, static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(hd),
                   Eigen::OuterStride<>(static_cast<Eigen::Index>(t.cols())));
}

}  // namespace

Var attention(Var q, Var k, Var v, std::size_t heads, bool causal) {
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const Tensor& V = v.value();
    if (q.graph != k.graph || q.graph != v.graph) throw InvalidArgument("attention: variables belong to different graphs");
    if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2 || Q.cols() != K.cols() || K.shape() != V.shape()) {
        throw InvalidArgument("attention: incompatible shapes " + shape_str(Q.shape()) + ", " + shape_str(K.shape()) +
                              ", " + shape_str(V.shape()));
    }
    if (heads == 0 || Q.cols() % heads != 0) throw InvalidArgument("attention: width not divisible by heads");
    if (causal && Q.rows() != K.rows()) throw InvalidArgument("attention: causal mode needs equal lengths");
    const std::size_t n = Q.rows(), m = K.rows(), hd = Q.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    // probs holds every head's n x m attention matrix, head-major.
    auto probs = std::make_shared<std::vector<RowMat>>(heads);
    Tensor out = Tensor::matrix(n, Q.cols());
    for (std::size_t h = 0; h < heads; ++h) {
        RowMat& P = (*probs)[h];
        P.noalias() = scale * head_view(Q, h, hd) * head_view(K, h, hd).transpose();
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t len = causal ? r + 1 : m;
            double* row = P.data() + r * m;
            kernels::softmax_inplace({row, len});
            std::fill(row + len, row + m, 0.0);
        }
        head_view(out, h, hd).noalias() = P * head_view(V, h, hd);
    }
    return q.graph->record(std::move(out), {q, k, v},
                           [iq = q.id, ik = k.id, iv = v.id, heads, hd, scale, probs](Graph& g, std::size_t self) {
                               const Tensor& dy = g.grad(self);
                               const Tensor& Qv = g.value(iq);
                               const Tensor& Kv = g.value(ik);
                               const Tensor& Vv = g.value(iv);
                               Tensor* dq = g.grad_buffer(iq);
                               Tensor* dk = g.grad_buffer(ik);
                               Tensor* dv = g.grad_buffer(iv);
                               RowMat dP, dS;
                               for (std::size_t h = 0; h < heads; ++h) {
                                   const RowMat& P = (*probs)[h];
                                   const auto dO = head_view(dy, h, hd);
                                   if (dv) head_view(*dv, h, hd).noalias() += P.transpose() * dO;
                                   if (!dq && !dk) continue;
                                   dP.noalias() = dO * head_view(Vv, h, hd).transpose();
                                   const Eigen::VectorXd dot = (dP.array() * P.array()).rowwise().sum();
                                   dS = (P.array() * (dP.colwise() - dot).array()) * scale;
                                   if (dq) head_view(*dq, h, hd).noalias() += dS * head_view(Kv, h, hd);
                                   if (dk) head_view(*dk, h, hd).noalias() += dS.transpose() * head_view(Qv, h, hd);
                               }
                           });
}

}  // namespace vmus::ops
