#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "dhog/kernels.hpp"
#include "dhog/rng.hpp"

using namespace dhog;

namespace {

std::vector<double> rand_vec(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Naive long-double matmul, used as an order-independent approximate oracle.
std::vector<double> gemm_ld(int m, int k, int n, const std::vector<double>& a,
                            const std::vector<double>& b) {
  std::vector<double> c(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (int p = 0; p < k; ++p)
        acc += static_cast<long double>(a[static_cast<size_t>(i) * k + p]) *
               b[static_cast<size_t>(p) * n + j];
      c[static_cast<size_t>(i) * n + j] = static_cast<double>(acc);
    }
  return c;
}

// Direct six-loop cross-correlation in long double.
std::vector<double> conv_ld(int n, int ci, int h, int w, int co, int kh, int kw,
                            int stride, int pad, const std::vector<double>& x,
                            const std::vector<double>& k) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> y(static_cast<size_t>(n) * co * oh * ow, 0.0);
  for (int img = 0; img < n; ++img)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          long double acc = 0.0L;
          for (int ic = 0; ic < ci; ++ic)
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx) {
                const int iy = oy * stride + dy - pad;
                const int ix = ox * stride + dx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<long double>(
                           x[((static_cast<size_t>(img) * ci + ic) * h + iy) * w + ix]) *
                       k[((static_cast<size_t>(oc) * ci + ic) * kh + dy) * kw + dx];
              }
          y[((static_cast<size_t>(img) * co + oc) * oh + oy) * ow + ox] =
              static_cast<double>(acc);
        }
  return y;
}

struct ThreadGuard {
  int saved = kernels::max_threads();
  ~ThreadGuard() { kernels::set_max_threads(saved); }
};

const std::vector<std::array<int, 3>> kGemmSizes = {
    {1, 1, 1}, {2, 3, 4}, {7, 5, 3}, {17, 31, 13}, {64, 64, 64}, {33, 1, 9}, {1, 40, 1}};

// n, ci, h, w, co, kh, kw, stride, pad
const std::vector<std::array<int, 9>> kConvShapes = {
    {1, 1, 3, 3, 1, 2, 2, 1, 0}, {2, 3, 8, 8, 4, 3, 3, 1, 1}, {1, 2, 7, 5, 3, 3, 3, 2, 1},
    {2, 4, 4, 4, 8, 1, 1, 1, 0}, {1, 1, 5, 5, 2, 5, 5, 1, 2}, {2, 3, 9, 9, 5, 3, 3, 2, 0}};

}  // namespace

TEST_CASE("gemm_nn matches a hand-worked 2x2 product") {
  std::vector<double> a = {1, 2, 3, 4}, b = {5, 6, 7, 8}, c(4);
  kernels::gemm_nn(2, 2, 2, a.data(), b.data(), c.data());
  CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("gemm variants are bitwise equal to the serial reference at any thread count") {
  ThreadGuard tg;
  Rng rng(42);
  for (const auto& [m, k, n] : kGemmSizes) {
    const auto a = rand_vec(rng, static_cast<size_t>(m) * k);
    const auto b_nn = rand_vec(rng, static_cast<size_t>(k) * n);
    const auto b_nt = rand_vec(rng, static_cast<size_t>(n) * k);
    const auto a_tn = rand_vec(rng, static_cast<size_t>(k) * m);

    std::vector<double> r_nn(static_cast<size_t>(m) * n), r_nt = r_nn, r_tn = r_nn;
    kernels::ref::gemm_nn(m, k, n, a.data(), b_nn.data(), r_nn.data());
    kernels::ref::gemm_nt(m, k, n, a.data(), b_nt.data(), r_nt.data());
    kernels::ref::gemm_tn(m, k, n, a_tn.data(), b_nn.data(), r_tn.data());

    for (int nt : {1, 2, 4}) {
      kernels::set_max_threads(nt);
      std::vector<double> c_nn(r_nn.size()), c_nt(r_nn.size()), c_tn(r_nn.size());
      kernels::gemm_nn(m, k, n, a.data(), b_nn.data(), c_nn.data());
      kernels::gemm_nt(m, k, n, a.data(), b_nt.data(), c_nt.data());
      kernels::gemm_tn(m, k, n, a_tn.data(), b_nn.data(), c_tn.data());
      CAPTURE(m); CAPTURE(k); CAPTURE(n); CAPTURE(nt);
      CHECK(bitwise_equal(c_nn, r_nn));
      CHECK(bitwise_equal(c_nt, r_nt));
      CHECK(bitwise_equal(c_tn, r_tn));
    }
  }
}

TEST_CASE("gemm variants agree with a long-double oracle") {
  Rng rng(7);
  for (const auto& [m, k, n] : kGemmSizes) {
    const auto a = rand_vec(rng, static_cast<size_t>(m) * k);
    const auto b = rand_vec(rng, static_cast<size_t>(k) * n);
    const auto want = gemm_ld(m, k, n, a, b);

    std::vector<double> c(static_cast<size_t>(m) * n);
    kernels::gemm_nn(m, k, n, a.data(), b.data(), c.data());
    for (size_t i = 0; i < c.size(); ++i)
      CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));

    // Exercise the transposed layouts against the same oracle.
    std::vector<double> bt(static_cast<size_t>(n) * k), at(static_cast<size_t>(k) * m);
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j) bt[static_cast<size_t>(j) * k + p] = b[static_cast<size_t>(p) * n + j];
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) at[static_cast<size_t>(p) * m + i] = a[static_cast<size_t>(i) * k + p];
    std::vector<double> c_nt(c.size()), c_tn(c.size());
    kernels::gemm_nt(m, k, n, a.data(), bt.data(), c_nt.data());
    kernels::gemm_tn(m, k, n, at.data(), b.data(), c_tn.data());
    for (size_t i = 0; i < c.size(); ++i) {
      CHECK(c_nt[i] == doctest::Approx(want[i]).epsilon(1e-12));
      CHECK(c_tn[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d forward matches the direct long-double sum") {
  Rng rng(11);
  for (const auto& s : kConvShapes) {
    const auto [n, ci, h, w, co, kh, kw, stride, pad] = s;
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    const auto x = rand_vec(rng, static_cast<size_t>(n) * ci * h * w);
    const auto k = rand_vec(rng, static_cast<size_t>(co) * ci * kh * kw);
    const auto want = conv_ld(n, ci, h, w, co, kh, kw, stride, pad, x, k);
    std::vector<double> y(static_cast<size_t>(n) * co * oh * ow);
    kernels::conv2d_fwd(n, ci, h, w, co, kh, kw, stride, pad, x.data(), k.data(), y.data());
    CAPTURE(h); CAPTURE(w); CAPTURE(stride); CAPTURE(pad);
    for (size_t i = 0; i < y.size(); ++i)
      CHECK(y[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d forward/backward are bitwise equal to the serial reference at any thread count") {
  ThreadGuard tg;
  Rng rng(13);
  for (const auto& s : kConvShapes) {
    const auto [n, ci, h, w, co, kh, kw, stride, pad] = s;
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    const size_t xs = static_cast<size_t>(n) * ci * h * w;
    const size_t ks = static_cast<size_t>(co) * ci * kh * kw;
    const size_t ys = static_cast<size_t>(n) * co * oh * ow;
    const auto x = rand_vec(rng, xs);
    const auto k = rand_vec(rng, ks);
    const auto dy = rand_vec(rng, ys);

    std::vector<double> ry(ys), rdx(xs, 0.0), rdk(ks, 0.0);
    kernels::ref::conv2d_fwd(n, ci, h, w, co, kh, kw, stride, pad, x.data(), k.data(), ry.data());
    kernels::ref::conv2d_dx(n, ci, h, w, co, kh, kw, stride, pad, dy.data(), k.data(), rdx.data());
    kernels::ref::conv2d_dk(n, ci, h, w, co, kh, kw, stride, pad, x.data(), dy.data(), rdk.data());

    for (int nt : {1, 2, 4}) {
      kernels::set_max_threads(nt);
      std::vector<double> y(ys), dx(xs, 0.0), dk(ks, 0.0);
      kernels::conv2d_fwd(n, ci, h, w, co, kh, kw, stride, pad, x.data(), k.data(), y.data());
      kernels::conv2d_dx(n, ci, h, w, co, kh, kw, stride, pad, dy.data(), k.data(), dx.data());
      kernels::conv2d_dk(n, ci, h, w, co, kh, kw, stride, pad, x.data(), dy.data(), dk.data());
      CAPTURE(h); CAPTURE(stride); CAPTURE(pad); CAPTURE(nt);
      CHECK(bitwise_equal(y, ry));
      CHECK(bitwise_equal(dx, rdx));
      CHECK(bitwise_equal(dk, rdk));
    }
  }
}

TEST_CASE("conv2d backward kernels accumulate instead of overwriting") {
  Rng rng(17);
  const int n = 1, ci = 2, h = 4, w = 4, co = 3, kh = 3, kw = 3, stride = 1, pad = 1;
  const size_t xs = static_cast<size_t>(n) * ci * h * w;
  const size_t ks = static_cast<size_t>(co) * ci * kh * kw;
  const size_t ys = static_cast<size_t>(n) * co * h * w;
  const auto x = rand_vec(rng, xs);
  const auto k = rand_vec(rng, ks);
  const auto dy = rand_vec(rng, ys);

  std::vector<double> fresh_dx(xs, 0.0), fresh_dk(ks, 0.0);
  kernels::conv2d_dx(n, ci, h, w, co, kh, kw, stride, pad, dy.data(), k.data(), fresh_dx.data());
  kernels::conv2d_dk(n, ci, h, w, co, kh, kw, stride, pad, x.data(), dy.data(), fresh_dk.data());

  std::vector<double> dx(xs, 0.5), dk(ks, -0.25);
  kernels::conv2d_dx(n, ci, h, w, co, kh, kw, stride, pad, dy.data(), k.data(), dx.data());
  kernels::conv2d_dk(n, ci, h, w, co, kh, kw, stride, pad, x.data(), dy.data(), dk.data());
  for (size_t i = 0; i < xs; ++i) CHECK(dx[i] == doctest::Approx(0.5 + fresh_dx[i]).epsilon(1e-15));
  for (size_t i = 0; i < ks; ++i) CHECK(dk[i] == doctest::Approx(-0.25 + fresh_dk[i]).epsilon(1e-15));
}

TEST_CASE("pairwise_sqdist matches direct computation and the serial reference") {
  ThreadGuard tg;
  Rng rng(19);
  const int n = 23, d = 7, c = 5;
  const auto pts = rand_vec(rng, static_cast<size_t>(n) * d);
  const auto cen = rand_vec(rng, static_cast<size_t>(c) * d);

  std::vector<double> want(static_cast<size_t>(n) * c, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      long double acc = 0.0L;
      for (int dd = 0; dd < d; ++dd) {
        const long double diff = pts[static_cast<size_t>(i) * d + dd] - cen[static_cast<size_t>(j) * d + dd];
        acc += diff * diff;
      }
      want[static_cast<size_t>(i) * c + j] = static_cast<double>(acc);
    }

  std::vector<double> r(static_cast<size_t>(n) * c);
  kernels::ref::pairwise_sqdist(n, d, c, pts.data(), cen.data(), r.data());
  for (size_t i = 0; i < r.size(); ++i) CHECK(r[i] == doctest::Approx(want[i]).epsilon(1e-12));

  for (int nt : {1, 2, 4}) {
    kernels::set_max_threads(nt);
    std::vector<double> out(r.size());
    kernels::pairwise_sqdist(n, d, c, pts.data(), cen.data(), out.data());
    CHECK(bitwise_equal(out, r));
  }
}

TEST_CASE("set_max_threads clamps to at least one worker") {
  ThreadGuard tg;
  kernels::set_max_threads(0);
  CHECK(kernels::max_threads() >= 1);
  kernels::set_max_threads(-3);
  CHECK(kernels::max_threads() >= 1);
}
