#pragma once

// Dense numeric kernels behind the tensor ops. Production kernels are
// OpenMP-parallel over independent output blocks only; each block is computed
// by the same compiled body the serial reference drives, so results are
// bitwise identical to `kernels::ref` and invariant to the thread count.

namespace dhog::kernels {

// Worker cap for all parallel kernels. 1 forces serial execution.
int max_threads();
void set_max_threads(int n);

// C[m x n] = A[m x k] * B[k x n]
void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c);
// C[m x n] = A[m x k] * B[n x k]^T
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c);
// C[m x n] = A[k x m]^T * B[k x n]
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c);

// Cross-correlation, x[n,ci,h,w], k[co,ci,kh,kw], y[n,co,oh,ow].
// oh = (h + 2*pad - kh)/stride + 1 and likewise ow.
void conv2d_fwd(int n, int ci, int h, int w, int co, int kh, int kw,
                int stride, int pad, const double* x, const double* k, double* y);
// dx from dy: accumulates into dx (caller zeroes).
void conv2d_dx(int n, int ci, int h, int w, int co, int kh, int kw,
               int stride, int pad, const double* dy, const double* k, double* dx);
// dk from dy: accumulates into dk (caller zeroes).
void conv2d_dk(int n, int ci, int h, int w, int co, int kh, int kw,
               int stride, int pad, const double* x, const double* dy, double* dk);

// out[i*c + j] = squared euclidean distance between point i and centroid j.
void pairwise_sqdist(int n, int d, int c, const double* points,
                     const double* centroids, double* out);

// Serial drivers over the same per-block bodies, kept as the baseline the
// parallel kernels are benchmarked and bitwise-tested against.
namespace ref {
void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c);
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c);
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c);
void conv2d_fwd(int n, int ci, int h, int w, int co, int kh, int kw,
                int stride, int pad, const double* x, const double* k, double* y);
void conv2d_dx(int n, int ci, int h, int w, int co, int kh, int kw,
               int stride, int pad, const double* dy, const double* k, double* dx);
void conv2d_dk(int n, int ci, int h, int w, int co, int kh, int kw,
               int stride, int pad, const double* x, const double* dy, double* dk);
void pairwise_sqdist(int n, int d, int c, const double* points,
                     const double* centroids, double* out);
}  // namespace ref

}  // namespace dhog::kernels
