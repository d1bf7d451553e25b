#pragma once

#include <cstdint>
#include <vector>

#include "dhog/data.hpp"
#include "dhog/model.hpp"
#include "dhog/tensor.hpp"

namespace dhog {

struct ClusterMetrics {
    double accuracy = 0.0;  // in [0,1], matched fraction under the optimal remap
    double nmi = 0.0;       // in [0,1]
    double ari = 0.0;       // in [-1,1]
    int head_index = 0;     // 0 marks a baseline (no head)
    int n = 0;              // pairs the metrics were computed on
};

// Match fraction after the optimal one-to-one label remap (assignment on the
// confusion matrix). Labels must lie in [0, c).
double accuracy(const std::vector<int>& pred, const std::vector<int>& truth, int c);

// I(a;b) / sqrt(H(a) * H(b)) from empirical counts, natural log. Degenerate
// entropies: both zero (two single-cluster partitions) -> 1, exactly one
// zero -> 0. Invariant to relabeling either argument.
double nmi(const std::vector<int>& a, const std::vector<int>& b);

// Adjusted Rand index via pair counting. When the adjustment denominator is
// zero (both partitions all-singletons or both single-cluster), returns 1 if
// the partitions are identical and 0 otherwise.
double ari(const std::vector<int>& a, const std::vector<int>& b);

// All three metrics at once. Pairs whose truth label is negative (unlabelled
// rows) are dropped first; c must cover both remaining label ranges.
ClusterMetrics evaluate(const std::vector<int>& pred, const std::vector<int>& truth, int c,
                        int head_index);

// Eval-mode hard labellings for every head (overclustering twins included,
// after the regular heads), computed in fixed-size chunks.
std::vector<std::vector<int>> hard_labels_by_head(DhogModel& model, const Tensor& inputs,
                                                  int chunk = 256);

// Fully unsupervised head choice: draws two fresh augmented views of the
// training set and returns the 1-based regular head whose two hard
// labellings agree most by NMI (ties -> smallest index). A head whose
// labelling collapses to a single cluster on either view scores 0, so a
// collapsed head is never preferred over an informative one. Ground-truth
// labels are never read.
int select_head(DhogModel& model, const ToyDataset& ds, const AugmentationPolicy& policy,
                uint64_t seed);
int select_head(DhogModel& model, const ImageDataset& ds, const AugmentationPolicy& policy,
                uint64_t seed);

// Lloyd's algorithm on flattened [0,1] pixels with k-means++ seeding; best of
// `restarts` by (inertia, restart index); metrics against ds.labels.
ClusterMetrics kmeans_pixels(const ImageDataset& ds, int c, int restarts, uint64_t seed);

}  // namespace dhog
