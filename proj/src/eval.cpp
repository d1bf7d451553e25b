#include "dhog/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dhog/assignment.hpp"
#include "dhog/errors.hpp"
#include "dhog/kernels.hpp"

namespace dhog {

namespace {

void check_pair(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw ShapeError("labellings must have equal length");
    if (a.empty()) throw ShapeError("labellings must be non-empty");
    for (int v : a)
        if (v < 0) throw NumericError("labels must be non-negative");
    for (int v : b)
        if (v < 0) throw NumericError("labels must be non-negative");
}

int label_count(const std::vector<int>& a) { return *std::max_element(a.begin(), a.end()) + 1; }

double entropy(const std::vector<double>& counts, double n) {
    double h = 0.0;
    for (double c : counts)
        if (c > 0.0) h -= (c / n) * std::log(c / n);
    return h;
}

// First-occurrence renumbering; two labellings describe the same partition
// iff their canonical forms are equal.
std::vector<int> canonical(const std::vector<int>& a) {
    std::vector<int> map(static_cast<size_t>(label_count(a)), -1);
    std::vector<int> out(a.size());
    int next = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        int& m = map[static_cast<size_t>(a[i])];
        if (m < 0) m = next++;
        out[i] = m;
    }
    return out;
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

bool is_constant(const std::vector<int>& a) {
    return std::all_of(a.begin(), a.end(), [&](int v) { return v == a.front(); });
}

Tensor rows_slice(const Tensor& t, int start, int m) {
    const int64_t row = t.size() / t.dim(0);
    Shape s = t.shape();
    s[0] = m;
    std::vector<double> vals(t.values().begin() + start * row,
                             t.values().begin() + (start + m) * row);
    return Tensor::from_values(std::move(s), std::move(vals));
}

// Argmax-NMI over the regular heads; a head collapsed to one cluster on
// either view scores zero.
int pick_best_head(const std::vector<std::vector<int>>& la,
                   const std::vector<std::vector<int>>& lb) {
    int best = 0;
    double best_score = -1.0;
    for (size_t h = 0; h < la.size(); ++h) {
        const double score =
            (is_constant(la[h]) || is_constant(lb[h])) ? 0.0 : nmi(la[h], lb[h]);
        if (score > best_score) {
            best_score = score;
            best = static_cast<int>(h);
        }
    }
    return best + 1;
}

constexpr int kSelectChunk = 512;

}  // namespace

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth, int c) {
    const AlignmentMap remap = remap_to_classes(pred, truth, c);
    return remap.objective_value / static_cast<double>(pred.size());
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    check_pair(a, b);
    const int ca = label_count(a);
    const int cb = label_count(b);
    const double n = static_cast<double>(a.size());

    std::vector<double> joint(static_cast<size_t>(ca) * cb, 0.0);
    std::vector<double> ra(static_cast<size_t>(ca), 0.0);
    std::vector<double> rb(static_cast<size_t>(cb), 0.0);
    for (size_t i = 0; i < a.size(); ++i) {
        joint[static_cast<size_t>(a[i]) * cb + static_cast<size_t>(b[i])] += 1.0;
        ra[static_cast<size_t>(a[i])] += 1.0;
        rb[static_cast<size_t>(b[i])] += 1.0;
    }
    const double ha = entropy(ra, n);
    const double hb = entropy(rb, n);
    if (ha == 0.0 && hb == 0.0) return 1.0;  // two single-cluster partitions
    if (ha == 0.0 || hb == 0.0) return 0.0;

    double info = 0.0;
    for (int i = 0; i < ca; ++i)
        for (int j = 0; j < cb; ++j) {
            const double nij = joint[static_cast<size_t>(i) * cb + j];
            if (nij > 0.0)
                info += (nij / n) * std::log(nij * n / (ra[static_cast<size_t>(i)] *
                                                        rb[static_cast<size_t>(j)]));
        }
    return std::clamp(info / std::sqrt(ha * hb), 0.0, 1.0);
}

double ari(const std::vector<int>& a, const std::vector<int>& b) {
    check_pair(a, b);
    if (a.size() < 2) throw ShapeError("ari needs at least two samples");
    const int ca = label_count(a);
    const int cb = label_count(b);

    std::vector<double> joint(static_cast<size_t>(ca) * cb, 0.0);
    std::vector<double> ra(static_cast<size_t>(ca), 0.0);
    std::vector<double> rb(static_cast<size_t>(cb), 0.0);
    for (size_t i = 0; i < a.size(); ++i) {
        joint[static_cast<size_t>(a[i]) * cb + static_cast<size_t>(b[i])] += 1.0;
        ra[static_cast<size_t>(a[i])] += 1.0;
        rb[static_cast<size_t>(b[i])] += 1.0;
    }
    double index = 0.0;
    for (double nij : joint) index += comb2(nij);
    double sum_a = 0.0, sum_b = 0.0;
    for (double x : ra) sum_a += comb2(x);
    for (double x : rb) sum_b += comb2(x);
    const double total = comb2(static_cast<double>(a.size()));
    const double expected = sum_a * sum_b / total;
    const double maximum = 0.5 * (sum_a + sum_b);
    if (maximum == expected) return canonical(a) == canonical(b) ? 1.0 : 0.0;
    return (index - expected) / (maximum - expected);
}

ClusterMetrics evaluate(const std::vector<int>& pred, const std::vector<int>& truth, int c,
                        int head_index) {
    if (pred.size() != truth.size()) throw ShapeError("labellings must have equal length");
    std::vector<int> p, t;
    p.reserve(pred.size());
    t.reserve(truth.size());
    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0) continue;  // unlabelled row
        p.push_back(pred[i]);
        t.push_back(truth[i]);
    }
    if (p.empty()) throw ShapeError("no labelled pairs to evaluate");

    ClusterMetrics m;
    m.accuracy = accuracy(p, t, c);
    m.nmi = nmi(p, t);
    m.ari = ari(p, t);
    m.head_index = head_index;
    m.n = static_cast<int>(p.size());
    return m;
}

std::vector<std::vector<int>> hard_labels_by_head(DhogModel& model, const Tensor& inputs,
                                                  int chunk) {
    if (!inputs.defined() || inputs.ndim() < 2 || inputs.dim(0) < 1)
        throw ShapeError("hard_labels_by_head expects a non-empty batch");
    if (chunk < 1) throw ConfigError("chunk size must be positive");
    const int n = inputs.dim(0);
    std::vector<std::vector<int>> out;
    for (int start = 0; start < n; start += chunk) {
        const int m = std::min(chunk, n - start);
        ForwardResult r = model.forward(rows_slice(inputs, start, m), Mode::eval);
        if (out.empty()) out.resize(r.pull.size());
        for (size_t h = 0; h < r.pull.size(); ++h) {
            std::vector<int> labels = hard_labels(r.pull[h]);
            out[h].insert(out[h].end(), labels.begin(), labels.end());
        }
    }
    return out;
}

int select_head(DhogModel& model, const ToyDataset& ds, const AugmentationPolicy& policy,
                uint64_t seed) {
    const int n = ds.points.dim(0);
    const int k = model.head_count();
    Rng rng(seed);
    std::vector<std::vector<int>> la(static_cast<size_t>(k)), lb(static_cast<size_t>(k));
    for (int start = 0; start < n; start += kSelectChunk) {
        const int m = std::min(kSelectChunk, n - start);
        std::vector<Tensor> views = augment_points(rows_slice(ds.points, start, m), policy, rng);
        ForwardResult a = model.forward(views[0], Mode::eval);
        ForwardResult b = model.forward(views[1], Mode::eval);
        for (int h = 0; h < k; ++h) {
            std::vector<int> xa = hard_labels(a.pull[static_cast<size_t>(h)]);
            std::vector<int> xb = hard_labels(b.pull[static_cast<size_t>(h)]);
            la[static_cast<size_t>(h)].insert(la[static_cast<size_t>(h)].end(), xa.begin(), xa.end());
            lb[static_cast<size_t>(h)].insert(lb[static_cast<size_t>(h)].end(), xb.begin(), xb.end());
        }
    }
    return pick_best_head(la, lb);
}

int select_head(DhogModel& model, const ImageDataset& ds, const AugmentationPolicy& policy,
                uint64_t seed) {
    const int k = model.head_count();
    Rng rng(seed);
    std::vector<std::vector<int>> la(static_cast<size_t>(k)), lb(static_cast<size_t>(k));
    for (int start = 0; start < ds.n; start += kSelectChunk) {
        const int m = std::min(kSelectChunk, ds.n - start);
        std::vector<int> idx(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = start + i;
        std::vector<Tensor> views = augment_images(images_to_tensor(ds, idx), policy, rng);
        ForwardResult a = model.forward(views[0], Mode::eval);
        ForwardResult b = model.forward(views[1], Mode::eval);
        for (int h = 0; h < k; ++h) {
            std::vector<int> xa = hard_labels(a.pull[static_cast<size_t>(h)]);
            std::vector<int> xb = hard_labels(b.pull[static_cast<size_t>(h)]);
            la[static_cast<size_t>(h)].insert(la[static_cast<size_t>(h)].end(), xa.begin(), xa.end());
            lb[static_cast<size_t>(h)].insert(lb[static_cast<size_t>(h)].end(), xb.begin(), xb.end());
        }
    }
    return pick_best_head(la, lb);
}

ClusterMetrics kmeans_pixels(const ImageDataset& ds, int c, int restarts, uint64_t seed) {
    if (c < 2) throw ConfigError("kmeans needs c >= 2");
    if (ds.n < 1) throw ConfigError("kmeans needs a non-empty dataset");
    if (c > ds.n) throw ConfigError("kmeans needs c <= n");
    if (restarts < 1) throw ConfigError("kmeans needs at least one restart");
    if (static_cast<int>(ds.labels.size()) != ds.n)
        throw ConfigError("kmeans baseline needs ground-truth labels");

    const int n = ds.n;
    const int d = ds.ch * ds.h * ds.w;
    std::vector<double> x(static_cast<size_t>(n) * d);
    for (size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(ds.images[i]) / 255.0;

    std::vector<int> best_labels;
    double best_inertia = std::numeric_limits<double>::infinity();

    for (int r = 0; r < restarts; ++r) {
        Rng rng(Rng::mix(seed, static_cast<uint64_t>(r)));

        // k-means++ seeding.
        std::vector<double> centroids(static_cast<size_t>(c) * d);
        std::vector<double> d2(static_cast<size_t>(n), 0.0);
        auto seed_centroid = [&](int slot, int point) {
            std::copy_n(x.begin() + static_cast<int64_t>(point) * d, d,
                        centroids.begin() + static_cast<int64_t>(slot) * d);
        };
        auto refresh_d2 = [&](int slot) {
            const double* cp = centroids.data() + static_cast<int64_t>(slot) * d;
            for (int i = 0; i < n; ++i) {
                const double* xp = x.data() + static_cast<int64_t>(i) * d;
                double s = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double diff = xp[j] - cp[j];
                    s += diff * diff;
                }
                if (slot == 0 || s < d2[static_cast<size_t>(i)]) d2[static_cast<size_t>(i)] = s;
            }
        };
        seed_centroid(0, rng.uniform_int(n));
        refresh_d2(0);
        for (int j = 1; j < c; ++j) {
            double total = 0.0;
            for (double v : d2) total += v;
            int pick;
            if (total > 0.0) {
                const double u = rng.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (int i = 0; i < n; ++i) {
                    acc += d2[static_cast<size_t>(i)];
                    if (u < acc) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.uniform_int(n);  // all points identical to a centroid
            }
            seed_centroid(j, pick);
            refresh_d2(j);
        }

        // Lloyd iterations.
        std::vector<int> labels(static_cast<size_t>(n), -1);
        std::vector<double> dist(static_cast<size_t>(n) * c);
        std::vector<double> mind(static_cast<size_t>(n));
        double inertia = 0.0;
        double prev = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 100; ++iter) {
            kernels::pairwise_sqdist(n, d, c, x.data(), centroids.data(), dist.data());
            bool changed = false;
            inertia = 0.0;
            for (int i = 0; i < n; ++i) {
                const double* row = dist.data() + static_cast<int64_t>(i) * c;
                int arg = 0;
                for (int j = 1; j < c; ++j)
                    if (row[j] < row[arg]) arg = j;
                if (labels[static_cast<size_t>(i)] != arg) changed = true;
                labels[static_cast<size_t>(i)] = arg;
                mind[static_cast<size_t>(i)] = row[arg];
                inertia += row[arg];
            }
            if (!changed) break;
            if (std::isfinite(prev) && std::abs(prev - inertia) <= 1e-6 * prev) break;
            prev = inertia;

            std::vector<double> sums(static_cast<size_t>(c) * d, 0.0);
            std::vector<int> counts(static_cast<size_t>(c), 0);
            for (int i = 0; i < n; ++i) {
                const int l = labels[static_cast<size_t>(i)];
                ++counts[static_cast<size_t>(l)];
                const double* xp = x.data() + static_cast<int64_t>(i) * d;
                double* sp = sums.data() + static_cast<int64_t>(l) * d;
                for (int j = 0; j < d; ++j) sp[j] += xp[j];
            }
            for (int j = 0; j < c; ++j) {
                if (counts[static_cast<size_t>(j)] > 0) {
                    const double inv = 1.0 / counts[static_cast<size_t>(j)];
                    double* cp = centroids.data() + static_cast<int64_t>(j) * d;
                    const double* sp = sums.data() + static_cast<int64_t>(j) * d;
                    for (int jj = 0; jj < d; ++jj) cp[jj] = sp[jj] * inv;
                } else {
                    // Re-seed an empty cluster at the point farthest from its
                    // current centroid (ties -> smallest index).
                    int far = 0;
                    for (int i = 1; i < n; ++i)
                        if (mind[static_cast<size_t>(i)] > mind[static_cast<size_t>(far)]) far = i;
                    seed_centroid(j, far);
                    mind[static_cast<size_t>(far)] = -1.0;
                }
            }
        }

        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_labels = labels;
        }
    }

    int c_eval = c;
    for (int t : ds.labels) c_eval = std::max(c_eval, t + 1);
    return evaluate(best_labels, ds.labels, c_eval, /*head_index=*/0);
}

}  // namespace dhog
