#include "dhog/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "dhog/errors.hpp"
#include "dhog/kernels.hpp"

namespace dhog {
namespace {

using detail::Node;

bool any_requires_grad(const std::vector<Tensor>& parents) {
  for (const auto& p : parents) {
    if (p.requires_grad()) return true;
  }
  return false;
}

// Builds an op output node. Parent edges and the backward closure are only
// attached when gradients are both enabled and needed, so inference graphs
// stay flat and get freed eagerly.
Tensor make_op(const char* op, Shape shape, std::vector<double> val,
               std::vector<Tensor> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  n->op = op;
  n->is_leaf = false;
  n->seq = detail::next_seq();
  if (grad_enabled() && any_requires_grad(parents)) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void check_matrix(const char* op, const Tensor& a) {
  if (a.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix("matmul", a);
  check_matrix("matmul", b);
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  kernels::gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* dc = self.grad.data();
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      std::vector<double> da(static_cast<size_t>(m) * k);
      kernels::gemm_nt(m, n, k, dc, pb.val.data(), da.data());
      double* g = pa.grad_buf().data();
      for (size_t i = 0; i < da.size(); ++i) g[i] += da[i];
    }
    if (pb.requires_grad) {
      std::vector<double> db(static_cast<size_t>(k) * n);
      kernels::gemm_tn(k, m, n, pa.val.data(), dc, db.data());
      double* g = pb.grad_buf().data();
      for (size_t i = 0; i < db.size(); ++i) g[i] += db[i];
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_matrix("transpose", a);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  const double* av = a.values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  return make_op("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    const double* dy = self.grad.data();
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) g[static_cast<size_t>(i) * n + j] += dy[static_cast<size_t>(j) * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int p = 0; p < 2; ++p) {
      Node& par = *self.parents[p];
      if (!par.requires_grad) continue;
      double* g = par.grad_buf().data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      double* g = self.parents[0]->grad_buf().data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      double* g = self.parents[1]->grad_buf().data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      double* g = pa.grad_buf().data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.val[i];
    }
    if (pb.requires_grad) {
      double* g = pb.grad_buf().data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.val[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  return make_op("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return make_op("mul_scalar", a.shape(), std::move(out), {a}, [s](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_op("relu", a.shape(), std::move(out), {a}, [](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    const std::vector<double>& x = self.parents[0]->val;
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  return make_op("exp", a.shape(), std::move(out), {a}, [](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * self.val[i];
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
  return make_op("log", a.shape(), std::move(out), {a}, [](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    const std::vector<double>& x = self.parents[0]->val;
    for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / x[i];
  });
}

Tensor clamp_min(const Tensor& a, double floor) {
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > floor ? av[i] : floor;
  return make_op("clamp_min", a.shape(), std::move(out), {a}, [floor](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    const std::vector<double>& x = self.parents[0]->val;
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (x[i] > floor) g[i] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& a) {
  check_matrix("softmax_rows", a);
  const int n = a.dim(0), c = a.dim(1);
  const double* av = a.values().data();
  for (size_t i = 0; i < static_cast<size_t>(a.size()); ++i) {
    if (std::isnan(av[i])) throw NumericError("softmax_rows: NaN in input");
  }
  std::vector<double> out(a.size());
  for (int i = 0; i < n; ++i) {
    const double* row = av + static_cast<size_t>(i) * c;
    double* orow = out.data() + static_cast<size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= z;
  }
  return make_op("softmax_rows", a.shape(), std::move(out), {a}, [n, c](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (int i = 0; i < n; ++i) {
      const double* y = self.val.data() + static_cast<size_t>(i) * c;
      const double* dy = self.grad.data() + static_cast<size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
      double* gr = g + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) gr[j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor stop_gradient(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  auto n = std::make_shared<Node>();
  n->shape = a.shape();
  n->val = std::move(out);
  n->op = "stop_gradient";
  n->is_leaf = false;
  n->requires_grad = false;
  n->seq = detail::next_seq();
  return Tensor(std::move(n));
}

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad) {
  if (x.ndim() != 4 || k.ndim() != 4) {
    throw ShapeError("conv2d: expected 4-d input and kernel, got " + shape_str(x.shape()) +
                     " and " + shape_str(k.shape()));
  }
  if (x.dim(1) != k.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                     " != kernel channels " + std::to_string(k.dim(1)));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  std::vector<double> out(static_cast<size_t>(n) * co * oh * ow);
  kernels::conv2d_fwd(n, ci, h, w, co, kh, kw, stride, pad, x.values().data(),
                      k.values().data(), out.data());
  return make_op("conv2d", {n, co, oh, ow}, std::move(out), {x, k},
                 [n, ci, h, w, co, kh, kw, stride, pad](Node& self) {
                   Node& px = *self.parents[0];
                   Node& pk = *self.parents[1];
                   if (px.requires_grad) {
                     kernels::conv2d_dx(n, ci, h, w, co, kh, kw, stride, pad,
                                        self.grad.data(), pk.val.data(), px.grad_buf().data());
                   }
                   if (pk.requires_grad) {
                     kernels::conv2d_dk(n, ci, h, w, co, kh, kw, stride, pad,
                                        px.val.data(), self.grad.data(), pk.grad_buf().data());
                   }
                 });
}

Tensor bias_rows(const Tensor& x, const Tensor& b) {
  check_matrix("bias_rows", x);
  if (b.ndim() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeError("bias_rows: bias " + shape_str(b.shape()) + " does not match columns of " +
                     shape_str(x.shape()));
  }
  const int n = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.size());
  const double* xv = x.values().data();
  const double* bv = b.values().data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<size_t>(i) * d + j] = xv[static_cast<size_t>(i) * d + j] + bv[j];
  return make_op("bias_rows", x.shape(), std::move(out), {x, b}, [n, d](Node& self) {
    if (self.parents[0]->requires_grad) {
      double* g = self.parents[0]->grad_buf().data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      double* g = self.parents[1]->grad_buf().data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) g[j] += self.grad[static_cast<size_t>(i) * d + j];
    }
  });
}

Tensor bias_channels(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 4) throw ShapeError("bias_channels: expected 4-d input, got " + shape_str(x.shape()));
  if (b.ndim() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeError("bias_channels: bias " + shape_str(b.shape()) + " does not match channels of " +
                     shape_str(x.shape()));
  }
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(x.size());
  const double* xv = x.values().data();
  const double* bv = b.values().data();
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const size_t base = (static_cast<size_t>(img) * c + ch) * hw;
      for (int p = 0; p < hw; ++p) out[base + p] = xv[base + p] + bv[ch];
    }
  return make_op("bias_channels", x.shape(), std::move(out), {x, b}, [n, c, hw](Node& self) {
    if (self.parents[0]->requires_grad) {
      double* g = self.parents[0]->grad_buf().data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      double* g = self.parents[1]->grad_buf().data();
      for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
          const size_t base = (static_cast<size_t>(img) * c + ch) * hw;
          double s = 0.0;
          for (int p = 0; p < hw; ++p) s += self.grad[base + p];
          g[ch] += s;
        }
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op("sum", {1}, {s}, {a}, [](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    const double dy = self.grad[0];
    for (size_t i = 0; i < self.parents[0]->val.size(); ++i) g[i] += dy;
  });
}

Tensor row_sums(const Tensor& a) {
  check_matrix("row_sums", a);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m, 0.0);
  const double* av = a.values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i] += av[static_cast<size_t>(i) * n + j];
  return make_op("row_sums", {m}, std::move(out), {a}, [m, n](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g[static_cast<size_t>(i) * n + j] += self.grad[i];
  });
}

Tensor col_sums(const Tensor& a) {
  check_matrix("col_sums", a);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(n, 0.0);
  const double* av = a.values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j] += av[static_cast<size_t>(i) * n + j];
  return make_op("col_sums", {n}, std::move(out), {a}, [m, n](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g[static_cast<size_t>(i) * n + j] += self.grad[j];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("global_avg_pool: expected 4-d input, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(n) * c);
  const double* xv = x.values().data();
  const double inv = 1.0 / hw;
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const size_t base = (static_cast<size_t>(img) * c + ch) * hw;
      double s = 0.0;
      for (int p = 0; p < hw; ++p) s += xv[base + p];
      out[static_cast<size_t>(img) * c + ch] = s * inv;
    }
  return make_op("global_avg_pool", {n, c}, std::move(out), {x}, [n, c, hw, inv](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (int img = 0; img < n; ++img)
      for (int ch = 0; ch < c; ++ch) {
        const double dy = self.grad[static_cast<size_t>(img) * c + ch] * inv;
        const size_t base = (static_cast<size_t>(img) * c + ch) * hw;
        for (int p = 0; p < hw; ++p) g[base + p] += dy;
      }
  });
}

Tensor reshape(const Tensor& a, Shape s) {
  if (numel(s) != static_cast<int64_t>(a.size())) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(s), std::move(out), {a}, [](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute_cols(const Tensor& a, const std::vector<int>& perm) {
  check_matrix("permute_cols", a);
  const int n = a.dim(0), c = a.dim(1);
  if (static_cast<int>(perm.size()) != c) {
    throw ShapeError("permute_cols: permutation size " + std::to_string(perm.size()) +
                     " != columns " + std::to_string(c));
  }
  std::vector<char> seen(c, 0);
  for (int p : perm) {
    if (p < 0 || p >= c || seen[p]) throw ShapeError("permute_cols: not a bijection on columns");
    seen[p] = 1;
  }
  std::vector<double> out(a.size());
  const double* av = a.values().data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<size_t>(i) * c + j] = av[static_cast<size_t>(i) * c + perm[j]];
  return make_op("permute_cols", a.shape(), std::move(out), {a}, [n, c, perm](Node& self) {
    double* g = self.parents[0]->grad_buf().data();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j)
        g[static_cast<size_t>(i) * c + perm[j]] += self.grad[static_cast<size_t>(i) * c + j];
  });
}

}  // namespace dhog
