#include "dhog/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "dhog/errors.hpp"

namespace dhog {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

namespace {
std::atomic<uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;
}  // namespace

uint64_t next_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

std::vector<double>& Node::grad_buf() {
    if (grad.empty()) grad.assign(val.size(), 0.0);
    return grad;
}

}  // namespace detail

bool grad_enabled() { return detail::g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_values(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->val.assign(static_cast<size_t>(numel(n->shape)), value);
    n->requires_grad = requires_grad;
    n->seq = detail::next_seq();
    return Tensor(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    const auto count = static_cast<size_t>(numel(n->shape));
    if (values.empty()) values.assign(count, 0.0);
    if (values.size() != count)
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(n->shape));
    n->val = std::move(values);
    n->requires_grad = requires_grad;
    n->seq = detail::next_seq();
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

std::span<double> Tensor::values_mut() {
    if (!node_->is_leaf) throw NumericError("values_mut: only leaf tensors are mutable");
    return node_->val;
}

double Tensor::at(int i, int j) const {
    return node_->val[static_cast<size_t>(i) * node_->shape[1] + j];
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
    return node_->val[0];
}

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty() && node_->requires_grad) node_->grad_buf();
    return node_->grad;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));

    // Reachable subgraph, following parents of grad-requiring nodes only.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{loss.node().get()};
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || !seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

    for (detail::Node* n : order)
        if (!n->is_leaf) n->grad.assign(n->val.size(), 0.0);

    if (!loss.node()->requires_grad) return;
    loss.node()->grad_buf()[0] += 1.0;

    for (detail::Node* n : order)
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
}

}  // namespace dhog
