#pragma once

#include <span>
#include <vector>

#include "vmus/graph.hpp"

// Differentiable kernels. Each records its forward value on the graph of its
// first argument together with the exact analytic gradient.
namespace vmus::ops {

Var matmul(Var a, Var b);     // (n x k)(k x m)
Var matmul_nt(Var a, Var b);  // (n x k)(m x k)^T
Var add(Var a, Var b);
Var add_bias(Var x, Var bias);  // bias (1 x m) broadcast over rows
Var mul(Var a, Var b);
Var scale(Var x, double s);

Var softmax_rows(Var x);
// Entries above the diagonal (future positions) become -inf.
Var causal_mask(Var scores);
// softmax(q_h k_h^T / sqrt(d_h)) v_h for each of `heads` column groups,
// concatenated. One tape node; equal to the composition of slice, matmul_nt,
// scale, causal_mask, softmax_rows, matmul and concat_cols.
Var attention(Var q, Var k, Var v, std::size_t heads, bool causal);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var x);

Var embedding(Var table, std::span<const int> ids);
// Mean over rows of -log softmax(logits)[target].
Var cross_entropy(Var logits, std::span<const int> targets);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t width);

Var sum(Var x);
Var mean(Var x);
Var variance(Var x);  // population variance of all entries
// Row-wise cosine similarity, result (n x 1).
Var cosine_rows(Var a, Var b);

}  // namespace vmus::ops
