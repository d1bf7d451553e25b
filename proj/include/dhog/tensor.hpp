#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dhog {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One node of the define-by-run graph. Leaves are parameters/inputs; op
// results carry their parents and an adjoint function. Creation order (seq)
// is the topological order; backward walks it in reverse.
struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // empty until first touched
    bool requires_grad = false;
    bool is_leaf = true;
    uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grads

    // Grad buffer, zero-initialized on first use.
    std::vector<double>& grad_buf();
};

uint64_t next_seq();

}  // namespace detail

// Dense f64 tensor handle. Value semantics on the handle; the payload is
// shared, immutable after creation except for the grad slot (and leaf values
// under optimizer updates).
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[i]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(node_->val.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> values() const { return node_->val; }
    // Mutable access to leaf values (parameter updates).
    std::span<double> values_mut();
    double operator[](int64_t i) const { return node_->val[static_cast<size_t>(i)]; }
    double at(int i, int j) const;  // 2-d convenience
    double item() const;            // size-1 tensors

    // Gradient view. For a requires_grad tensor this materializes zeros if
    // backward never reached it, so callers always see a full-shape array.
    std::span<const double> grad() const;
    bool grad_allocated() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

// Reverse-mode sweep from a scalar loss. Visits each reachable node exactly
// once in reverse creation order. Leaf gradients accumulate across calls
// (intermediate gradients are reset per call); callers zero leaves between
// steps via zero_grad.
void backward(const Tensor& loss);

// While a guard lives, newly created op results are detached constants.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

}  // namespace dhog
