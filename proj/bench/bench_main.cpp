// Micro-benchmarks for the hot kernels, comparing the OpenMP production
// path against the serial reference implementation. Reports the median of
// `--reps` runs per case as CSV: kernel,n,c,k,median_us.

#include <algorithm>
#include <chrono>
#include <functional>
#include <iomanip>
#include <iostream>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dhog/assignment.hpp"
#include "dhog/kernels.hpp"
#include "dhog/mi.hpp"
#include "dhog/rng.hpp"
#include "dhog/tensor.hpp"

using namespace dhog;

namespace {

struct BenchRow {
    std::string kernel;
    int n, c, k;
    double median_us;
};

double median_us_of(int reps, const std::function<void()>& fn) {
    fn();  // warm-up, excluded
    std::vector<double> times;
    times.reserve(static_cast<size_t>(reps));
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

std::vector<double> random_vec(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

LabelDistribution random_dist(int n, int c, int head, Rng& rng) {
    std::vector<double> vals(static_cast<size_t>(n * c));
    for (int i = 0; i < n; ++i) {
        double total = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(rng.uniform(-2.0, 2.0));
            vals[static_cast<size_t>(i * c + j)] = e;
            total += e;
        }
        for (int j = 0; j < c; ++j) vals[static_cast<size_t>(i * c + j)] /= total;
    }
    LabelDistribution d;
    d.probs = Tensor::from_values({n, c}, std::move(vals));
    d.head_index = head;
    return d;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel micro-benchmarks (OpenMP vs serial reference)"};
    std::string out_path = "bench.csv";
    int reps = 5;
    bool check = false;
    app.add_option("--out", out_path, "CSV output path");
    app.add_option("--reps", reps, "repetitions per case (median reported)")
        ->check(CLI::Range(3, 1000));
    app.add_flag("--check", check,
                 "fail (exit 1) if a budgeted kernel exceeds its regression budget");
    CLI11_PARSE(app, argc, argv);

    Rng rng(42);
    std::vector<BenchRow> rows;
    const auto record = [&](const std::string& kernel, int n, int c, int k,
                            const std::function<void()>& fn) {
        rows.push_back({kernel, n, c, k, median_us_of(reps, fn)});
        std::cout << std::left << std::setw(24) << kernel << " n=" << std::setw(6) << n
                  << " c=" << std::setw(4) << c << " k=" << std::setw(4) << k << std::fixed
                  << std::setprecision(1) << rows.back().median_us << " us\n";
    };

    // Joint-label estimation (the per-pair core of the MI objectives).
    for (int n : {220, 2048}) {
        const int c = 10;
        LabelDistribution a = random_dist(n, c, 1, rng);
        LabelDistribution b = random_dist(n, c, 2, rng);
        NoGradGuard guard;
        record("joint_estimation", n, c, 0, [&] { (void)joint(a, b, true); });
    }

    // Raw gemm_tn behind it, production vs reference. A and B are [n x c]
    // label tables; the product A^T B is the c x c joint (before scaling).
    for (int n : {220, 2048}) {
        const int c = 10;
        std::vector<double> a = random_vec(static_cast<size_t>(n * c), rng);
        std::vector<double> b = random_vec(static_cast<size_t>(n * c), rng);
        std::vector<double> out(static_cast<size_t>(c * c));
        record("gemm_tn_omp", n, c, 0,
               [&] { kernels::gemm_tn(c, n, c, a.data(), b.data(), out.data()); });
        record("gemm_tn_ref", n, c, 0,
               [&] { kernels::ref::gemm_tn(c, n, c, a.data(), b.data(), out.data()); });
    }

    // Dense matmul at MLP-trunk size.
    {
        const int m = 256, kk = 256, n = 256;
        std::vector<double> a = random_vec(static_cast<size_t>(m * kk), rng);
        std::vector<double> b = random_vec(static_cast<size_t>(kk * n), rng);
        std::vector<double> out(static_cast<size_t>(m * n));
        record("gemm_nn_omp", m, n, kk,
               [&] { kernels::gemm_nn(m, kk, n, a.data(), b.data(), out.data()); });
        record("gemm_nn_ref", m, n, kk,
               [&] { kernels::ref::gemm_nn(m, kk, n, a.data(), b.data(), out.data()); });
    }

    // Convolution at small-CNN trunk size.
    {
        const int n = 32, ci = 3, h = 20, w = 20, co = 32;
        std::vector<double> x = random_vec(static_cast<size_t>(n * ci * h * w), rng);
        std::vector<double> k = random_vec(static_cast<size_t>(co * ci * 9), rng);
        const int ho = (h + 2 - 3) / 2 + 1, wo = (w + 2 - 3) / 2 + 1;
        std::vector<double> y(static_cast<size_t>(n * co * ho * wo));
        record("conv2d_fwd_omp", n, ci, co, [&] {
            kernels::conv2d_fwd(n, ci, h, w, co, 3, 3, 2, 1, x.data(), k.data(), y.data());
        });
        record("conv2d_fwd_ref", n, ci, co, [&] {
            kernels::ref::conv2d_fwd(n, ci, h, w, co, 3, 3, 2, 1, x.data(), k.data(), y.data());
        });
    }

    // Hungarian assignment at regular and overclustered label counts.
    for (int c : {10, 70}) {
        CostMatrix costs;
        costs.m = c;
        costs.c = random_vec(static_cast<size_t>(c * c), rng);
        costs.sense = CostSense::maximize;
        record("hungarian", 0, c, 0, [&] { (void)solve(costs); });
    }

    // Squared distances behind the k-means baseline.
    {
        const int n = 2000, d = 128, c = 10;
        std::vector<double> pts = random_vec(static_cast<size_t>(n * d), rng);
        std::vector<double> cent = random_vec(static_cast<size_t>(c * d), rng);
        std::vector<double> out(static_cast<size_t>(n * c));
        record("pairwise_sqdist_omp", n, c, d,
               [&] { kernels::pairwise_sqdist(n, d, c, pts.data(), cent.data(), out.data()); });
        record("pairwise_sqdist_ref", n, c, d, [&] {
            kernels::ref::pairwise_sqdist(n, d, c, pts.data(), cent.data(), out.data());
        });
    }

    std::ofstream csv(out_path);
    if (!csv) {
        std::cerr << "cannot write " << out_path << '\n';
        return 2;
    }
    csv << "kernel,n,c,k,median_us\n" << std::setprecision(10);
    for (const BenchRow& r : rows)
        csv << r.kernel << ',' << r.n << ',' << r.c << ',' << r.k << ',' << r.median_us << '\n';
    std::cout << "wrote " << rows.size() << " rows to " << out_path << '\n';

    if (check) {
        // Regression budgets with large headroom over the first-commit
        // baseline; they guard against algorithmic blow-ups, not machines.
        struct Budget {
            std::string kernel;
            int n, c;
            double limit_us;
        };
        const std::vector<Budget> budgets = {
            {"joint_estimation", 220, 10, 10'000.0},
            {"hungarian", 0, 70, 50'000.0},
        };
        bool ok = true;
        for (const Budget& b : budgets) {
            const auto it = std::find_if(rows.begin(), rows.end(), [&](const BenchRow& r) {
                return r.kernel == b.kernel && r.n == b.n && r.c == b.c;
            });
            if (it == rows.end() || it->median_us > b.limit_us) {
                std::cerr << "budget exceeded: " << b.kernel << " n=" << b.n << " c=" << b.c
                          << " took " << (it == rows.end() ? -1.0 : it->median_us)
                          << " us (limit " << b.limit_us << ")\n";
                ok = false;
            }
        }
        if (!ok) return 1;
        std::cout << "all kernel budgets met\n";
    }
    return 0;
}
