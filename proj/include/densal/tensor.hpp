#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a graph node. Operators executed while
// gradient recording is enabled attach a backward closure and references to
// their inputs; node ids grow monotonically, so sorting reachable nodes by
// descending id yields a valid reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace densal {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until populated
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads self.grad and accumulates into the inputs' grad buffers.
    std::function<void(Node& self)> backward;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

std::uint64_t next_node_id();

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

template <typename T>
class Tensor {
  public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::uint64_t id() const { return node_->id; }
    const std::string& op() const { return node_->op; }

    std::span<const T> values() const { return node_->value; }
    // Writes bypass the graph; only meaningful on leaves.
    std::span<T> mutable_values() { return node_->value; }
    T item() const;
    T at(std::size_t flat) const { return node_->value.at(flat); }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad();

    // Same values, cut from the graph.
    Tensor detach() const;

    // Used by operator implementations.
    static Tensor make_result(Shape shape, std::vector<T> values, std::string op,
                              std::vector<Tensor> inputs,
                              std::function<void(detail::Node<T>&)> backward);
    const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node<T>> node_;
};

// Populates gradients of every node that requires grad and lies on a path to
// root. Gradients accumulate into existing buffers. Throws ShapeError if root
// holds more than one value.
template <typename T>
void backward(const Tensor<T>& root);

// Operations reachable from root, inputs before outputs.
template <typename T>
std::vector<const detail::Node<T>*> topological_order(const Tensor<T>& root);

}  // namespace densal
