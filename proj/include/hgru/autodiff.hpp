#pragma once

// Reverse-mode differentiation over whole tensors.
//
// A Tape is an append-only list of nodes; every op appends one node whose inputs already exist,
// so node ids are a topological order by construction. backward() walks ids in reverse and
// visits each reachable node once. Tapes are single-threaded; independent tapes can run on
// separate threads.

#include <cstddef>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "hgru/tensor.hpp"

namespace hgru {

enum class OpKind {
  leaf,
  constant,
  conv2d,
  maxpool2,
  upsample2,
  sigmoid,
  tanh,
  relu,
  one_minus,
  add,
  sub,
  mul,
  concat,
  slice,
  sum,
  scale,
  sigmoid_ce,
};

std::string_view op_name(OpKind kind);

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<std::optional<Tensor<T>>> grads, std::vector<std::size_t> order)
      : grads_(std::move(grads)), order_(std::move(order)) {}

  bool has(std::size_t id) const { return id < grads_.size() && grads_[id].has_value(); }
  bool has(Var<T> v) const { return has(v.id); }
  const Tensor<T>& of(std::size_t id) const;
  const Tensor<T>& of(Var<T> v) const { return of(v.id); }
  Tensor<T> take(Var<T> v);

  // Node ids in the order backward processed them.
  const std::vector<std::size_t>& visit_order() const { return order_; }

 private:
  std::vector<std::optional<Tensor<T>>> grads_;
  std::vector<std::size_t> order_;
};

template <typename T>
class BackwardContext;

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(BackwardContext<T>&, const Tensor<T>& grad_out)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    BackwardFn backward;
    bool requires_grad;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter or data we want gradients for).
  Var<T> leaf(Tensor<T> value);
  /// Non-differentiable input.
  Var<T> constant(Tensor<T> value);

  Var<T> record(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value, BackwardFn fn);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradients of a scalar node w.r.t. every node it depends on. Leaves that the loss does not
  /// reach still get an all-zero gradient.
  Gradients<T> backward(Var<T> loss) const;

 private:
  std::vector<Node> nodes_;
};

template <typename T>
class BackwardContext {
 public:
  BackwardContext(const Tape<T>& tape, const typename Tape<T>::Node& node,
                  std::vector<std::optional<Tensor<T>>>& grads)
      : tape_(tape), node_(node), grads_(grads) {}

  // Value of the k-th input of the node being differentiated.
  const Tensor<T>& input(std::size_t k) const { return tape_.value(node_.inputs[k]); }
  const Tensor<T>& output() const { return node_.value; }

  // Accumulator for the k-th input's gradient, or nullptr when that input needs none.
  Tensor<T>* grad(std::size_t k);

 private:
  const Tape<T>& tape_;
  const typename Tape<T>::Node& node_;
  std::vector<std::optional<Tensor<T>>>& grads_;
};

// ---- ops ------------------------------------------------------------------------------------

/// Same-padded stride-1 convolution. x:[Cin,H,W], w:[Cout,Cin,k,k], b:[Cout] -> [Cout,H,W].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b);

/// 2x2 max pooling; ties resolve to the first element in row-major order.
template <typename T>
Var<T> maxpool2(Var<T> x);

template <typename T>
Var<T> upsample2(Var<T> x);

template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> one_minus(Var<T> x);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);
/// Channels [begin, end) of a [C,H,W] tensor.
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end);

template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> scale(Var<T> x, T factor);

/// Mean over all elements of max(x,0) - x*z + log(1 + exp(-|x|)).
/// z must lie in [0,1]; the gradient w.r.t. x is (sigmoid(x) - z) / N.
template <typename T>
Var<T> sigmoid_ce_mean(Var<T> logits, const Tensor<T>& targets);

// Pointwise scalar helpers shared with the tensor-level API.
template <typename T>
T sigmoid_scalar(T x);

}  // namespace hgru
