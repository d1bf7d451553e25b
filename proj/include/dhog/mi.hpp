#pragma once

#include <vector>

#include "dhog/tensor.hpp"

namespace dhog {

struct AlignmentMap;  // assignment.hpp

// Floor applied inside every log of the MI estimators.
inline constexpr double kLogFloor = 1e-9;

// Soft labelling of a minibatch by one head: one probability row per sample.
struct LabelDistribution {
  Tensor probs;              // [n x c], rows sum to 1
  int head_index = 1;        // 1-based position in the head hierarchy
  bool overcluster = false;  // auxiliary head, excluded from the push term
};

// Empirical joint over two labellings with its marginals.
struct JointMatrix {
  Tensor p;             // [c x c]
  Tensor row_marginal;  // [c]
  Tensor col_marginal;  // [c]
};

// p = (1/n) sum_s a_s b_s^T, optionally symmetrized to (p + p^T)/2.
// Differentiable through both arguments.
JointMatrix joint(const LabelDistribution& a, const LabelDistribution& b, bool symmetrize);

// Wraps an existing joint table (marginals computed, invariants checked).
JointMatrix joint_from_probs(Tensor p);

// sum_ij p_ij log p_ij - sum_i r_i log r_i - sum_j c_j log c_j, natural log,
// entries clamped at kLogFloor before each log.
Tensor mi_from_joint(const JointMatrix& j);

// Mean MI between the labellings of all unordered view pairs of one head
// (symmetrized joints): the agreement-under-augmentation objective.
Tensor mi_aug(const std::vector<LabelDistribution>& views);

// Cross-head MI of a later head i against an earlier head j on the same
// view. z_j is treated as a constant (its backward edge is cut here), and
// its columns are permuted by `align` when given. Differentiable w.r.t.
// z_i only.
Tensor mi_head_pair(const LabelDistribution& z_i, const LabelDistribution& z_j,
                    const AlignmentMap* align = nullptr);

// heads[i] holds one LabelDistribution per augmented view, views in the same
// order for every head. Mean of mi_aug over all heads (overclustering heads
// included).
Tensor mi_pull(const std::vector<std::vector<LabelDistribution>>& heads);

// Ragged lower triangle of cross-head alignments: aligns[i][j] (j < i) maps
// the labels of the rank-(j+1) head onto the rank-(i+1) head, ranks counted
// over non-overcluster heads.
using PushAlignments = std::vector<std::vector<AlignmentMap>>;

// sum over head ranks i >= 2 of (sum_{j<i} mi_head_pair(z_i, z_j)) / i,
// with every pair term averaged over the augmented views. Overclustering
// heads are skipped; a single head yields exactly zero.
Tensor mi_push(const std::vector<std::vector<LabelDistribution>>& heads,
               const PushAlignments* aligns = nullptr);

struct Objective {
  Tensor loss;  // -(pull - alpha * push), for minimization
  Tensor pull;
  Tensor push;  // constant zero when alpha == 0 (push graph not built)
};

// alpha = 0 reduces exactly to the agreement-only ablation: the push graph
// is skipped entirely so gradients match a pull-only run bit for bit.
Objective dhog_objective(const std::vector<std::vector<LabelDistribution>>& pull_heads,
                         const std::vector<std::vector<LabelDistribution>>& push_heads,
                         double alpha, const PushAlignments* aligns = nullptr);

}  // namespace dhog
