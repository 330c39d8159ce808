#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace d2a {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

// Thread-local switch: when false, ops record no tape nodes (inference mode).
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;        // allocated lazily during backward
    bool requires_grad = false;
    bool grad_filled = false;   // set by backward(); cleared by zero_grad()
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void()> backward_fn;  // adds into parents' grads

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

// Dense N-D tensor (row-major, B,C,H,W for 4-D) with an attached tape node.
// Copies are shallow: two Tensors may share one node.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
        node_->shape = std::move(shape);
        node_->value.assign(numel_of(node_->shape), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node<T>>()) {
        check(numel_of(shape) == (int64_t)data.size(),
              "tensor data length " + std::to_string(data.size()) +
                  " does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->value = std::move(data);
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& x : t.node_->value) x = T(dist(rng)) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    size_t ndim() const { return node_->shape.size(); }
    int64_t numel() const { return (int64_t)node_->value.size(); }

    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }
    T* data() { return node_->value.data(); }
    const T* data() const { return node_->value.data(); }
    T item() const {
        check(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
        return node_->value[0];
    }

    Tensor& set_requires_grad(bool v = true) {
        node_->requires_grad = v;
        return *this;
    }
    bool requires_grad() const { return node_->requires_grad; }

    bool has_grad() const { return node_->grad_filled; }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        check(!node_->grad.empty(), "gradient not populated; call backward() first");
        return node_->grad;
    }

    void zero_grad() {
        node_->grad.assign(node_->value.size(), T(0));
        node_->grad_filled = false;
    }

    std::shared_ptr<Node<T>> node() const { return node_; }

    // Reverse-mode sweep from a scalar root. Leaves with requires_grad end up
    // holding dRoot/dLeaf. Calling backward again while a reachable leaf still
    // holds an un-reset gradient is an error: accumulation across steps must
    // be explicit (zero_grad between steps).
    void backward() const {
        check(numel() == 1, "backward() requires a scalar root, got shape " + shape_str(shape()));
        std::vector<Node<T>*> order;
        topo_sort(order);
        for (Node<T>* n : order) {
            if (n->parents.empty() && n->requires_grad && n->grad_filled)
                throw std::runtime_error(
                    "backward() called while a leaf still holds a gradient; "
                    "call zero_grad() on parameters between steps");
        }
        node_->ensure_grad();
        node_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* n = *it;
            if (n->backward_fn) n->backward_fn();
            if (n->requires_grad) n->grad_filled = true;
        }
    }

private:
    void topo_sort(std::vector<Node<T>*>& order) const {
        // iterative DFS; graphs from deep models overflow the stack otherwise
        std::vector<std::pair<Node<T>*, size_t>> stack;
        stack.push_back({node_.get(), 0});
        std::unordered_set<const void*> seen;
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node<T>* p = n->parents[idx++].get();
                if (seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node<T>> node_;
};

}  // namespace d2a
