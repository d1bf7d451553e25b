#include "dhog/mi.hpp"

#include <cmath>
#include <string>

#include "dhog/assignment.hpp"
#include "dhog/errors.hpp"
#include "dhog/ops.hpp"

namespace dhog {
namespace {

constexpr double kRowSumTol = 1e-9;
constexpr double kEntrySlack = 1e-12;

void validate_distribution(const LabelDistribution& z, const char* who) {
  if (!z.probs.defined() || z.probs.ndim() != 2)
    throw ShapeError(std::string(who) + ": labelling must be a [n x c] matrix");
  const int n = z.probs.dim(0), c = z.probs.dim(1);
  if (n < 1 || c < 1)
    throw ShapeError(std::string(who) + ": empty labelling " + shape_str(z.probs.shape()));
  const double* v = z.probs.values().data();
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      const double p = v[static_cast<size_t>(i) * c + j];
      if (p < -kEntrySlack || p > 1.0 + kEntrySlack)
        throw NumericError(std::string(who) + ": probability " + std::to_string(p) +
                           " outside [0,1]");
      s += p;
    }
    if (std::abs(s - 1.0) > kRowSumTol)
      throw NumericError(std::string(who) + ": row " + std::to_string(i) + " sums to " +
                         std::to_string(s));
  }
}

Tensor plogp(const Tensor& t) { return sum(mul(t, log(clamp_min(t, kLogFloor)))); }

}  // namespace

JointMatrix joint(const LabelDistribution& a, const LabelDistribution& b, bool symmetrize) {
  validate_distribution(a, "joint");
  validate_distribution(b, "joint");
  if (a.probs.dim(0) != b.probs.dim(0) || a.probs.dim(1) != b.probs.dim(1))
    throw ShapeError("joint: labellings differ, " + shape_str(a.probs.shape()) + " vs " +
                     shape_str(b.probs.shape()));
  const int n = a.probs.dim(0);
  Tensor p = mul_scalar(matmul(transpose(a.probs), b.probs), 1.0 / n);
  if (symmetrize) p = mul_scalar(add(p, transpose(p)), 0.5);
  return JointMatrix{p, row_sums(p), col_sums(p)};
}

JointMatrix joint_from_probs(Tensor p) {
  if (!p.defined() || p.ndim() != 2 || p.dim(0) != p.dim(1))
    throw ShapeError("joint_from_probs: expected a square matrix, got " +
                     (p.defined() ? shape_str(p.shape()) : std::string("undefined")));
  double total = 0.0;
  for (double v : p.values()) {
    if (v < -kEntrySlack) throw NumericError("joint_from_probs: negative entry");
    total += v;
  }
  if (std::abs(total - 1.0) > kRowSumTol)
    throw NumericError("joint_from_probs: entries sum to " + std::to_string(total));
  return JointMatrix{p, row_sums(p), col_sums(p)};
}

Tensor mi_from_joint(const JointMatrix& j) {
  if (j.p.ndim() != 2 || j.p.dim(0) != j.p.dim(1))
    throw ShapeError("mi_from_joint: joint must be square, got " + shape_str(j.p.shape()));
  const int c = j.p.dim(0);
  if (j.row_marginal.size() != c || j.col_marginal.size() != c)
    throw ShapeError("mi_from_joint: marginal size mismatch");
  return sub(plogp(j.p), add(plogp(j.row_marginal), plogp(j.col_marginal)));
}

Tensor mi_aug(const std::vector<LabelDistribution>& views) {
  if (views.size() < 2)
    throw ConfigError("mi_aug: need at least 2 augmented views, got " +
                      std::to_string(views.size()));
  Tensor acc;
  int pairs = 0;
  for (size_t p = 0; p < views.size(); ++p)
    for (size_t q = p + 1; q < views.size(); ++q) {
      Tensor term = mi_from_joint(joint(views[p], views[q], /*symmetrize=*/true));
      acc = acc.defined() ? add(acc, term) : term;
      ++pairs;
    }
  return mul_scalar(acc, 1.0 / pairs);
}

Tensor mi_head_pair(const LabelDistribution& z_i, const LabelDistribution& z_j,
                    const AlignmentMap* align) {
  if (z_i.probs.dim(1) != z_j.probs.dim(1))
    throw ShapeError("mi_head_pair: label counts differ, " + shape_str(z_i.probs.shape()) +
                     " vs " + shape_str(z_j.probs.shape()));
  if (z_i.head_index <= z_j.head_index)
    throw ConfigError("mi_head_pair: head " + std::to_string(z_i.head_index) +
                      " must come after head " + std::to_string(z_j.head_index));
  Tensor zj = stop_gradient(z_j.probs);
  if (align != nullptr) zj = permute_cols(zj, align->perm);
  LabelDistribution stopped{zj, z_j.head_index, z_j.overcluster};
  return mi_from_joint(joint(z_i, stopped, /*symmetrize=*/false));
}

Tensor mi_pull(const std::vector<std::vector<LabelDistribution>>& heads) {
  if (heads.empty()) throw ConfigError("mi_pull: no heads");
  Tensor acc;
  for (const auto& views : heads) {
    Tensor term = mi_aug(views);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return mul_scalar(acc, 1.0 / static_cast<double>(heads.size()));
}

Tensor mi_push(const std::vector<std::vector<LabelDistribution>>& heads,
               const PushAlignments* aligns) {
  // Rank the non-overcluster heads in order; the Eq-style divisor is the
  // 1-based rank of the later head.
  std::vector<const std::vector<LabelDistribution>*> ranked;
  for (const auto& views : heads) {
    if (views.empty()) throw ConfigError("mi_push: head with no views");
    if (views.front().overcluster) continue;
    ranked.push_back(&views);
  }
  if (ranked.size() < 2) return Tensor::scalar(0.0);

  const size_t n_views = ranked.front()->size();
  for (const auto* views : ranked)
    if (views->size() != n_views) throw ConfigError("mi_push: heads disagree on view count");
  if (aligns != nullptr && aligns->size() < ranked.size())
    throw ConfigError("mi_push: alignment table smaller than head count");

  Tensor total;
  for (size_t i = 1; i < ranked.size(); ++i) {
    if (aligns != nullptr && (*aligns)[i].size() < i)
      throw ConfigError("mi_push: alignment row " + std::to_string(i) + " too short");
    Tensor inner;
    for (size_t j = 0; j < i; ++j) {
      const AlignmentMap* a = aligns != nullptr ? &(*aligns)[i][j] : nullptr;
      Tensor pair_acc;
      for (size_t v = 0; v < n_views; ++v) {
        Tensor term = mi_head_pair((*ranked[i])[v], (*ranked[j])[v], a);
        pair_acc = pair_acc.defined() ? add(pair_acc, term) : term;
      }
      Tensor pair_mean = mul_scalar(pair_acc, 1.0 / static_cast<double>(n_views));
      inner = inner.defined() ? add(inner, pair_mean) : pair_mean;
    }
    Tensor scaled = mul_scalar(inner, 1.0 / static_cast<double>(i + 1));
    total = total.defined() ? add(total, scaled) : scaled;
  }
  return total;
}

Objective dhog_objective(const std::vector<std::vector<LabelDistribution>>& pull_heads,
                         const std::vector<std::vector<LabelDistribution>>& push_heads,
                         double alpha, const PushAlignments* aligns) {
  if (alpha < 0.0) throw ConfigError("dhog_objective: alpha must be >= 0");
  Objective out;
  out.pull = mi_pull(pull_heads);
  if (alpha == 0.0) {
    // Agreement-only ablation: no push graph, so the backward pass is
    // bit-identical to a run that never constructed the push term.
    out.push = Tensor::scalar(0.0);
    out.loss = mul_scalar(out.pull, -1.0);
  } else {
    out.push = mi_push(push_heads, aligns);
    out.loss = mul_scalar(sub(out.pull, mul_scalar(out.push, alpha)), -1.0);
  }
  return out;
}

}  // namespace dhog
