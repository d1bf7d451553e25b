#pragma once

#include "dhog/tensor.hpp"

namespace dhog {

// Matrix product, a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise, equal shapes (scalar variants below).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // callers clamp first; see clamp_min
Tensor clamp_min(const Tensor& a, double floor);

// Row-wise softmax over a [n x c] matrix, max-subtracted for stability.
Tensor softmax_rows(const Tensor& a);

// Identity forward; the backward edge is cut (zero adjoint into a and all
// of its ancestors through this edge).
Tensor stop_gradient(const Tensor& a);

// Cross-correlation, x[n,ci,h,w] * k[co,ci,kh,kw] -> [n,co,oh,ow].
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad);

// x[n,d] + b[d] broadcast over rows.
Tensor bias_rows(const Tensor& x, const Tensor& b);
// x[n,c,h,w] + b[c] broadcast over n,h,w.
Tensor bias_channels(const Tensor& x, const Tensor& b);

Tensor sum(const Tensor& a);       // -> [1]
Tensor row_sums(const Tensor& a);  // [m x n] -> [m]
Tensor col_sums(const Tensor& a);  // [m x n] -> [n]
Tensor global_avg_pool(const Tensor& x);  // [n,c,h,w] -> [n,c]
Tensor reshape(const Tensor& a, Shape s);

// out[:, j] = a[:, perm[j]]; perm must be a bijection on columns.
Tensor permute_cols(const Tensor& a, const std::vector<int>& perm);

}  // namespace dhog
