#pragma once

#include <vector>

#include "dhog/mi.hpp"

namespace dhog {

enum class CostSense { minimize, maximize };

struct CostMatrix {
  int m = 0;
  std::vector<double> c;  // m x m, row-major
  CostSense sense = CostSense::minimize;
};

// perm[i] = column assigned to row i (0-based); objective_value is the
// optimal total in the requested sense.
struct AlignmentMap {
  std::vector<int> perm;
  double objective_value = 0.0;
};

// O(m^3) Hungarian method (potentials + augmenting paths). Ties are broken
// deterministically: among all optimal assignments, the lexicographically
// smallest permutation is returned.
AlignmentMap solve(const CostMatrix& costs);

// Permutation of head j's labels that best agrees with head i on the current
// minibatch: maximizes sum_a A[a, perm[a]] for the agreement matrix
// A = sum_s z_i,s z_j,s^T. Values only; no gradients flow through this.
AlignmentMap align_heads(const LabelDistribution& z_i, const LabelDistribution& z_j);

// Cluster-to-class mapping maximizing the matched count between integer
// labellings (labels in {0..c-1}).
AlignmentMap remap_to_classes(const std::vector<int>& pred, const std::vector<int>& truth,
                              int c);

}  // namespace dhog
