#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gasda/error.hpp"

namespace gasda {

// Element precisions. Wide is mandatory for finite-difference checks,
// Standard is the training default.
using Wide = double;
using Standard = float;

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

inline constexpr Shape kScalarShape{1, 1, 1, 1};

template <class T>
class Graph;

namespace detail {

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;

  // Set when a graph recorded the primitive that produced this tensor.
  const Graph<T>* producer = nullptr;
  std::uint64_t producer_generation = 0;
  std::size_t producer_index = 0;
};

template <class T>
std::vector<T>& grad_buffer(TensorData<T>& d) {
  if (d.grad.empty()) d.grad.assign(d.value.size(), T(0));
  return d.grad;
}

}  // namespace detail

// Dense rank-4 (N,C,H,W) array with an optional gradient slot. Copies share
// storage; use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) { return full(s, T(0), requires_grad); }

  static Tensor full(Shape s, T v, bool requires_grad = false) {
    return from(s, std::vector<T>(s.numel(), v), requires_grad);
  }

  static Tensor from(Shape s, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != s.numel()) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + s.str());
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorData<T>>();
    t.impl_->shape = s;
    t.impl_->value = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return full(kScalarShape, v, requires_grad); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->value.size(); }

  std::span<const T> values() const { return impl_->value; }
  // Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_values() { return impl_->value; }

  T operator[](std::size_t i) const { return impl_->value[i]; }
  T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const Shape& s = impl_->shape;
    return impl_->value[((n * s.c + c) * s.h + y) * s.w + x];
  }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return detail::grad_buffer(*impl_); }
  void zero_grad() { impl_->grad.clear(); }

  // Same values, fresh storage, no graph connection.
  Tensor clone(bool requires_grad = false) const { return from(shape(), impl_->value, requires_grad); }
  Tensor detach() const { return clone(false); }

  bool all_finite() const {
    for (const T v : impl_->value) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  detail::TensorData<T>& data() const { return *impl_; }
  const std::shared_ptr<detail::TensorData<T>>& handle() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorData<T>> impl_;
};

// Thread-local switch that suppresses graph recording (evaluation, data
// pipelines, finite-difference probes).
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Ordered record of executed primitives. Recording order is a topological
// order, so reverse replay visits every node exactly once.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(const std::vector<T>& grad_out, const std::vector<T>& out_value)>;

  struct Node {
    std::string_view kind;
    std::shared_ptr<detail::TensorData<T>> output;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  void record(std::string_view kind, const Tensor<T>& output, BackwardFn fn) {
    auto& d = output.data();
    d.producer = this;
    d.producer_generation = generation_;
    d.producer_index = nodes_.size();
    nodes_.push_back(Node{kind, output.handle(), std::move(fn)});
  }

  // Releases every recorded intermediate. Tensors produced earlier can no
  // longer be differentiated through this graph.
  void clear() {
    nodes_.clear();
    ++generation_;
  }

  // Populates grad on every requires_grad leaf reachable from `loss`
  // (fan-out accumulates by summation), then consumes the graph.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.shape() != kScalarShape) {
      throw GraphError("backward: loss must have shape (1,1,1,1), got " +
                       (loss.defined() ? loss.shape().str() : std::string("undefined")));
    }
    auto& ld = loss.data();
    if (ld.producer == nullptr) {
      if (!ld.requires_grad) throw GraphError("backward: loss does not require grad");
      detail::grad_buffer(ld)[0] += T(1);
      return;
    }
    if (ld.producer != this || ld.producer_generation != generation_) {
      throw GraphError("backward: graph already consumed (or loss recorded on another graph)");
    }
    detail::grad_buffer(ld)[0] += T(1);
    for (std::size_t i = ld.producer_index + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.output->grad.empty()) continue;
      node.backward(node.output->grad, node.output->value);
    }
    clear();
  }

 private:
  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

// Per-thread active graph for precision T. GraphScope installs a different
// one for its lifetime.
template <class T>
Graph<T>*& active_graph_slot() {
  thread_local Graph<T>* slot = nullptr;
  return slot;
}

template <class T>
Graph<T>& active_graph() {
  thread_local Graph<T> fallback;
  Graph<T>* g = active_graph_slot<T>();
  return g != nullptr ? *g : fallback;
}

template <class T>
class GraphScope {
 public:
  explicit GraphScope(Graph<T>& g) : previous_(active_graph_slot<T>()) { active_graph_slot<T>() = &g; }
  ~GraphScope() { active_graph_slot<T>() = previous_; }
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph<T>* previous_;
};

template <class T>
void backward(const Tensor<T>& loss) {
  active_graph<T>().backward(loss);
}

namespace detail {

// Finalizes a primitive: enforces finiteness, and records `fn` on the active
// graph when any input participates in differentiation.
template <class T>
Tensor<T> emit(std::string_view kind, Shape shape, std::vector<T> values,
               std::initializer_list<const Tensor<T>*> inputs, typename Graph<T>::BackwardFn fn) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(kind) + ": non-finite output element");
  }
  Tensor<T> out = Tensor<T>::from(shape, std::move(values));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  active_graph<T>().record(kind, out, std::move(fn));
  return out;
}

template <class T>
Tensor<T> emit(std::string_view kind, Shape shape, std::vector<T> values,
               const std::vector<Tensor<T>>& inputs, typename Graph<T>::BackwardFn fn) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(kind) + ": non-finite output element");
  }
  Tensor<T> out = Tensor<T>::from(shape, std::move(values));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const Tensor<T>& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  active_graph<T>().record(kind, out, std::move(fn));
  return out;
}

}  // namespace detail

}  // namespace gasda
