#include "dhog/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <vector>

namespace dhog::kernels {

namespace {

std::atomic<int> g_max_threads{0};  // 0 = not set yet, use omp default

inline int out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// ---------------------------------------------------------------------------
// Per-output-block bodies, shared between the OpenMP kernels and the serial
// reference. noipa keeps exactly one compiled copy per body, so both entry
// points run the identical floating-point instruction sequence and bitwise
// equality holds no matter how the optimizer contracts or vectorizes the
// loops. Blocks never overlap, which also makes the parallel results
// independent of the thread count.
// ---------------------------------------------------------------------------

// C row i of A[m x k] * B[k x n]; accumulates over p ascending.
[[gnu::noipa]] void gemm_nn_row(int i, int k, int n, const double* a, const double* b,
                                double* c) {
    double* ci = c + static_cast<size_t>(i) * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
        const double aip = ai[p];
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
}

// C row i of A[k x m]^T * B[k x n].
[[gnu::noipa]] void gemm_tn_row(int i, int m, int k, int n, const double* a, const double* b,
                                double* c) {
    double* ci = c + static_cast<size_t>(i) * n;
    std::fill(ci, ci + n, 0.0);
    for (int p = 0; p < k; ++p) {
        const double api = a[static_cast<size_t>(p) * m + i];
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
}

// col rows for one image: col[(img*P + pos) * Q + q], q runs over the
// (ci, kh, kw) taps; out-of-bounds taps are zero-padded.
[[gnu::noipa]] void im2col_img(int img, int ci, int h, int w, int kh, int kw, int stride,
                               int pad, const double* x, double* col) {
    const int oh = out_extent(h, kh, stride, pad);
    const int ow = out_extent(w, kw, stride, pad);
    const int Q = ci * kh * kw;
    const double* xi = x + static_cast<size_t>(img) * ci * h * w;
    double* base = col + static_cast<size_t>(img) * (oh * ow) * Q;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* row = base + static_cast<size_t>(oy * ow + ox) * Q;
            int q = 0;
            for (int c = 0; c < ci; ++c) {
                for (int dy = 0; dy < kh; ++dy) {
                    const int iy = oy * stride - pad + dy;
                    for (int dx = 0; dx < kw; ++dx, ++q) {
                        const int ix = ox * stride - pad + dx;
                        row[q] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                     ? xi[(static_cast<size_t>(c) * h + iy) * w + ix]
                                     : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add of one image's dcol rows back to dx, taps in (pos, q) order.
[[gnu::noipa]] void col2im_img(int img, int ci, int h, int w, int kh, int kw, int stride,
                               int pad, const double* dcol, double* dx) {
    const int oh = out_extent(h, kh, stride, pad);
    const int ow = out_extent(w, kw, stride, pad);
    const int Q = ci * kh * kw;
    double* dxi = dx + static_cast<size_t>(img) * ci * h * w;
    const double* base = dcol + static_cast<size_t>(img) * (oh * ow) * Q;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const double* row = base + static_cast<size_t>(oy * ow + ox) * Q;
            int q = 0;
            for (int c = 0; c < ci; ++c) {
                for (int dy = 0; dy < kh; ++dy) {
                    const int iy = oy * stride - pad + dy;
                    for (int dx2 = 0; dx2 < kw; ++dx2, ++q) {
                        const int ix = ox * stride - pad + dx2;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            dxi[(static_cast<size_t>(c) * h + iy) * w + ix] += row[q];
                    }
                }
            }
        }
    }
}

// rows[(img*P + pos), o] -> y[img, o, pos] for one image.
[[gnu::noipa]] void rows_to_y_img(int img, int co, int P, const double* rows, double* y) {
    for (int o = 0; o < co; ++o)
        for (int pos = 0; pos < P; ++pos)
            y[(static_cast<size_t>(img) * co + o) * P + pos] =
                rows[(static_cast<size_t>(img) * P + pos) * co + o];
}

// dy[img, o, pos] -> drows[(img*P + pos), o] for one image.
[[gnu::noipa]] void y_to_rows_img(int img, int co, int P, const double* dy, double* drows) {
    for (int pos = 0; pos < P; ++pos)
        for (int o = 0; o < co; ++o)
            drows[(static_cast<size_t>(img) * P + pos) * co + o] =
                dy[(static_cast<size_t>(img) * co + o) * P + pos];
}

// Squared distances from point i to every centroid; ct is centroids
// transposed to [d x c] so the inner loop is contiguous.
[[gnu::noipa]] void sqdist_row(int i, int d, int c, const double* points, const double* ct,
                               double* out) {
    double* oi = out + static_cast<size_t>(i) * c;
    std::fill(oi, oi + c, 0.0);
    const double* pi = points + static_cast<size_t>(i) * d;
    for (int dd = 0; dd < d; ++dd) {
        const double pv = pi[dd];
        const double* cj = ct + static_cast<size_t>(dd) * c;
        for (int j = 0; j < c; ++j) {
            const double diff = pv - cj[j];
            oi[j] += diff * diff;
        }
    }
}

void transpose_into(int rows, int cols, const double* a, double* at) {
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            at[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
}

}  // namespace

int max_threads() {
    int t = g_max_threads.load(std::memory_order_relaxed);
    return t > 0 ? t : omp_get_max_threads();
}

void set_max_threads(int n) { g_max_threads.store(std::max(1, n), std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// OpenMP kernels: static partition of independent output blocks.
// ---------------------------------------------------------------------------

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c) {
    const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && m > 1)
    for (int i = 0; i < m; ++i) gemm_nn_row(i, k, n, a, b, c);
}

void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c) {
    // Materialize B^T once so the hot loop is the contiguous ikj form.
    std::vector<double> bt(static_cast<size_t>(k) * n);
    transpose_into(n, k, b, bt.data());
    gemm_nn(m, k, n, a, bt.data(), c);
}

void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c) {
    const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && m > 1)
    for (int i = 0; i < m; ++i) gemm_tn_row(i, m, k, n, a, b, c);
}

void conv2d_fwd(int n, int ci, int h, int w, int co, int kh, int kw,
                int stride, int pad, const double* x, const double* k, double* y) {
    const int P = out_extent(h, kh, stride, pad) * out_extent(w, kw, stride, pad);
    const int Q = ci * kh * kw;
    const int nt = max_threads();

    std::vector<double> col(static_cast<size_t>(n) * P * Q);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 1)
    for (int img = 0; img < n; ++img) im2col_img(img, ci, h, w, kh, kw, stride, pad, x, col.data());

    std::vector<double> kt(static_cast<size_t>(Q) * co);
    transpose_into(co, Q, k, kt.data());
    std::vector<double> rows(static_cast<size_t>(n) * P * co);
    gemm_nn(n * P, Q, co, col.data(), kt.data(), rows.data());

#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 1)
    for (int img = 0; img < n; ++img) rows_to_y_img(img, co, P, rows.data(), y);
}

void conv2d_dx(int n, int ci, int h, int w, int co, int kh, int kw,
               int stride, int pad, const double* dy, const double* k, double* dx) {
    const int P = out_extent(h, kh, stride, pad) * out_extent(w, kw, stride, pad);
    const int Q = ci * kh * kw;
    const int nt = max_threads();

    std::vector<double> drows(static_cast<size_t>(n) * P * co);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 1)
    for (int img = 0; img < n; ++img) y_to_rows_img(img, co, P, dy, drows.data());

    std::vector<double> dcol(static_cast<size_t>(n) * P * Q);
    gemm_nn(n * P, co, Q, drows.data(), k, dcol.data());

#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 1)
    for (int img = 0; img < n; ++img) col2im_img(img, ci, h, w, kh, kw, stride, pad, dcol.data(), dx);
}

void conv2d_dk(int n, int ci, int h, int w, int co, int kh, int kw,
               int stride, int pad, const double* x, const double* dy, double* dk) {
    const int P = out_extent(h, kh, stride, pad) * out_extent(w, kw, stride, pad);
    const int Q = ci * kh * kw;
    const int nt = max_threads();

    std::vector<double> col(static_cast<size_t>(n) * P * Q);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 1)
    for (int img = 0; img < n; ++img) im2col_img(img, ci, h, w, kh, kw, stride, pad, x, col.data());

    std::vector<double> drows(static_cast<size_t>(n) * P * co);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 1)
    for (int img = 0; img < n; ++img) y_to_rows_img(img, co, P, dy, drows.data());

    std::vector<double> dkt(static_cast<size_t>(co) * Q);
    gemm_tn(co, n * P, Q, drows.data(), col.data(), dkt.data());
    for (size_t i = 0; i < dkt.size(); ++i) dk[i] += dkt[i];
}

void pairwise_sqdist(int n, int d, int c, const double* points,
                     const double* centroids, double* out) {
    std::vector<double> ct(static_cast<size_t>(d) * c);
    transpose_into(c, d, centroids, ct.data());
    const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 1)
    for (int i = 0; i < n; ++i) sqdist_row(i, d, c, points, ct.data(), out);
}

// ---------------------------------------------------------------------------
// Serial reference: plain loops over the same output blocks.
// ---------------------------------------------------------------------------

namespace ref {

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c) {
    for (int i = 0; i < m; ++i) gemm_nn_row(i, k, n, a, b, c);
}

void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c) {
    std::vector<double> bt(static_cast<size_t>(k) * n);
    transpose_into(n, k, b, bt.data());
    ref::gemm_nn(m, k, n, a, bt.data(), c);
}

void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c) {
    for (int i = 0; i < m; ++i) gemm_tn_row(i, m, k, n, a, b, c);
}

void conv2d_fwd(int n, int ci, int h, int w, int co, int kh, int kw,
                int stride, int pad, const double* x, const double* k, double* y) {
    const int P = out_extent(h, kh, stride, pad) * out_extent(w, kw, stride, pad);
    const int Q = ci * kh * kw;
    std::vector<double> col(static_cast<size_t>(n) * P * Q);
    for (int img = 0; img < n; ++img) im2col_img(img, ci, h, w, kh, kw, stride, pad, x, col.data());
    std::vector<double> kt(static_cast<size_t>(Q) * co);
    transpose_into(co, Q, k, kt.data());
    std::vector<double> rows(static_cast<size_t>(n) * P * co);
    ref::gemm_nn(n * P, Q, co, col.data(), kt.data(), rows.data());
    for (int img = 0; img < n; ++img) rows_to_y_img(img, co, P, rows.data(), y);
}

void conv2d_dx(int n, int ci, int h, int w, int co, int kh, int kw,
               int stride, int pad, const double* dy, const double* k, double* dx) {
    const int P = out_extent(h, kh, stride, pad) * out_extent(w, kw, stride, pad);
    const int Q = ci * kh * kw;
    std::vector<double> drows(static_cast<size_t>(n) * P * co);
    for (int img = 0; img < n; ++img) y_to_rows_img(img, co, P, dy, drows.data());
    std::vector<double> dcol(static_cast<size_t>(n) * P * Q);
    ref::gemm_nn(n * P, co, Q, drows.data(), k, dcol.data());
    for (int img = 0; img < n; ++img) col2im_img(img, ci, h, w, kh, kw, stride, pad, dcol.data(), dx);
}

void conv2d_dk(int n, int ci, int h, int w, int co, int kh, int kw,
               int stride, int pad, const double* x, const double* dy, double* dk) {
    const int P = out_extent(h, kh, stride, pad) * out_extent(w, kw, stride, pad);
    const int Q = ci * kh * kw;
    std::vector<double> col(static_cast<size_t>(n) * P * Q);
    for (int img = 0; img < n; ++img) im2col_img(img, ci, h, w, kh, kw, stride, pad, x, col.data());
    std::vector<double> drows(static_cast<size_t>(n) * P * co);
    for (int img = 0; img < n; ++img) y_to_rows_img(img, co, P, dy, drows.data());
    std::vector<double> dkt(static_cast<size_t>(co) * Q);
    ref::gemm_tn(co, n * P, Q, drows.data(), col.data(), dkt.data());
    for (size_t i = 0; i < dkt.size(); ++i) dk[i] += dkt[i];
}

void pairwise_sqdist(int n, int d, int c, const double* points,
                     const double* centroids, double* out) {
    std::vector<double> ct(static_cast<size_t>(d) * c);
    transpose_into(c, d, centroids, ct.data());
    for (int i = 0; i < n; ++i) sqdist_row(i, d, c, points, ct.data(), out);
}

}  // namespace ref

}  // namespace dhog::kernels
