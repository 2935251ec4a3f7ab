#include "densal/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <numeric>
#include <unordered_set>

#include "densal/error.hpp"

namespace densal {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

namespace detail {

std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

}  // namespace detail

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    std::vector<T> values(numel(shape), value);
    return from(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    if (numel(shape) != values.size())
        throw ShapeError("tensor shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(values.size()));
    auto node = std::make_shared<detail::Node<T>>();
    node->id = detail::next_node_id();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), T(0));
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (node_->value.size() != 1)
        throw ShapeError("item() on tensor of shape " + to_string(node_->shape));
    return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return from(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values, std::string op,
                                 std::vector<Tensor> inputs,
                                 std::function<void(detail::Node<T>&)> backward) {
    Tensor out = from(std::move(shape), std::move(values), false);
    out.node_->op = std::move(op);
    if (!grad_enabled()) return out;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
}

namespace {

template <typename T>
std::vector<detail::Node<T>*> reachable(detail::Node<T>* root) {
    std::vector<detail::Node<T>*> nodes;
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<detail::Node<T>*> stack{root};
    while (!stack.empty()) {
        auto* node = stack.back();
        stack.pop_back();
        if (!node->requires_grad || !seen.insert(node).second) continue;
        nodes.push_back(node);
        for (auto& in : node->inputs) stack.push_back(in.get());
    }
    std::sort(nodes.begin(), nodes.end(), [](auto* a, auto* b) { return a->id > b->id; });
    return nodes;
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& root) {
    if (!root.defined()) throw std::invalid_argument("backward on undefined tensor");
    if (root.size() != 1)
        throw ShapeError("backward requires a scalar root, got shape " + to_string(root.shape()));
    auto* root_node = root.node().get();
    if (!root_node->requires_grad) return;
    auto nodes = reachable(root_node);
    root_node->ensure_grad()[0] += T(1);
    for (auto* node : nodes) {
        if (!node->backward) continue;
        node->ensure_grad();
        for (auto& in : node->inputs)
            if (in->requires_grad) in->ensure_grad();
        node->backward(*node);
    }
}

template <typename T>
std::vector<const detail::Node<T>*> topological_order(const Tensor<T>& root) {
    auto nodes = reachable(root.node().get());
    std::vector<const detail::Node<T>*> out(nodes.rbegin(), nodes.rend());
    return out;
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template std::vector<const detail::Node<float>*> topological_order(const Tensor<float>&);
template std::vector<const detail::Node<double>*> topological_order(const Tensor<double>&);

}  // namespace densal
