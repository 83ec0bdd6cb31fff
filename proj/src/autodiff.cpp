#include "hgru/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hgru/kernels.hpp"

namespace hgru {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::conv2d: return "conv2d";
    case OpKind::maxpool2: return "maxpool2";
    case OpKind::upsample2: return "upsample2";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::one_minus: return "one_minus";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::sum: return "sum";
    case OpKind::scale: return "scale";
    case OpKind::sigmoid_ce: return "sigmoid_ce";
  }
  return "?";
}

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
const Tensor<T>& Gradients<T>::of(std::size_t id) const {
  if (!has(id)) throw std::out_of_range("no gradient recorded for node " + std::to_string(id));
  return *grads_[id];
}

template <typename T>
Tensor<T> Gradients<T>::take(Var<T> v) {
  if (!has(v.id)) throw std::out_of_range("no gradient recorded for node " + std::to_string(v.id));
  Tensor<T> out = std::move(*grads_[v.id]);
  grads_[v.id].reset();
  return out;
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), {}, true});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{OpKind::constant, {}, std::move(value), {}, false});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value, BackwardFn fn) {
  bool needs = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw std::logic_error("tape input id out of range");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), needs ? std::move(fn) : BackwardFn{}, needs});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>* BackwardContext<T>::grad(std::size_t k) {
  const std::size_t id = node_.inputs[k];
  if (!tape_.node(id).requires_grad) return nullptr;
  auto& slot = grads_[id];
  if (!slot) slot.emplace(tape_.value(id).shape(), T{0});
  return &*slot;
}

template <typename T>
Gradients<T> Tape<T>::backward(Var<T> loss) const {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to a different tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(value(loss.id).shape()));
  }
  std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
  std::vector<std::size_t> order;
  grads[loss.id].emplace(value(loss.id).shape(), T{1});
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (!grads[i]) continue;
    const Node& n = nodes_[i];
    order.push_back(i);
    if (!n.backward) continue;
    BackwardContext<T> ctx(*this, n, grads);
    n.backward(ctx, *grads[i]);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::leaf && !grads[i]) grads[i].emplace(nodes_[i].value.shape(), T{0});
  }
  return Gradients<T>(std::move(grads), std::move(order));
}

// ---- ops ------------------------------------------------------------------------------------

namespace {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b, const char* what) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument(std::string(what) + ": operands live on different tapes");
  }
  return *a.tape;
}

template <typename T, typename F, typename G>
Var<T> unary(Var<T> x, OpKind kind, F forward, G derivative) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  return x.tape->record(kind, {x.id}, std::move(out),
                        [derivative](BackwardContext<T>& ctx, const Tensor<T>& g) {
                          Tensor<T>* gx = ctx.grad(0);
                          if (!gx) return;
                          const Tensor<T>& in = ctx.input(0);
                          const Tensor<T>& out = ctx.output();
                          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * derivative(in[i], out[i]);
                        });
}

}  // namespace

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tape = same_tape(x, w, "conv2d");
  same_tape(x, b, "conv2d");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = b.value();
  require_chw(xv, "conv2d input");
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d: weights must be [Cout,Cin,k,k], got " + shape_str(wv.shape()));
  }
  if (wv.dim(1) != xv.dim(0)) {
    throw ShapeError("conv2d: input has " + std::to_string(xv.dim(0)) + " channels but weights expect " +
                     std::to_string(wv.dim(1)) + " (weights " + shape_str(wv.shape()) + ", input " +
                     shape_str(xv.shape()) + ")");
  }
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(wv.dim(0)) + "], got " + shape_str(bv.shape()));
  }
  const ConvDims d{xv.dim(0), wv.dim(0), xv.dim(1), xv.dim(2), wv.dim(2)};
  check_conv_buffers(d, xv.size(), wv.size(), bv.size(), d.output_size());
  Tensor<T> out(Shape{d.out_channels, d.height, d.width});
  kernels::conv2d_forward<T>(d, xv.data(), wv.data(), bv.data(), out.data());
  return tape.record(OpKind::conv2d, {x.id, w.id, b.id}, std::move(out),
                     [d](BackwardContext<T>& ctx, const Tensor<T>& g) {
                       if (Tensor<T>* gx = ctx.grad(0)) {
                         kernels::conv2d_backward_input<T>(d, g.data(), ctx.input(1).data(), gx->data());
                       }
                       Tensor<T>* gw = ctx.grad(1);
                       Tensor<T>* gb = ctx.grad(2);
                       if (gw || gb) {
                         kernels::conv2d_backward_params<T>(d, g.data(), ctx.input(0).data(),
                                                            gw ? gw->data() : std::span<T>{},
                                                            gb ? gb->data() : std::span<T>{});
                       }
                     });
}

template <typename T>
Var<T> maxpool2(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_chw(xv, "maxpool2");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (h % 2 || w % 2) throw ShapeError("maxpool2: spatial dims must be even, got " + shape_str(xv.shape()));
  Tensor<T> out(Shape{c, h / 2, w / 2});
  std::vector<std::size_t> argmax(out.size());
  kernels::maxpool2_forward<T>(c, h, w, xv.data(), out.data(), argmax);
  return x.tape->record(OpKind::maxpool2, {x.id}, std::move(out),
                        [argmax = std::move(argmax)](BackwardContext<T>& ctx, const Tensor<T>& g) {
                          Tensor<T>* gx = ctx.grad(0);
                          if (!gx) return;
                          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[argmax[i]] += g[i];
                        });
}

template <typename T>
Var<T> upsample2(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_chw(xv, "upsample2");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor<T> out(Shape{c, 2 * h, 2 * w});
  kernels::upsample2_forward<T>(c, h, w, xv.data(), out.data());
  return x.tape->record(OpKind::upsample2, {x.id}, std::move(out),
                        [c, h, w](BackwardContext<T>& ctx, const Tensor<T>& g) {
                          if (Tensor<T>* gx = ctx.grad(0)) kernels::upsample2_backward<T>(c, h, w, g.data(), gx->data());
                        });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(x, OpKind::sigmoid, [](T v) { return sigmoid_scalar(v); },
               [](T, T s) { return s * (T{1} - s); });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return unary(x, OpKind::tanh, [](T v) { return std::tanh(v); }, [](T, T t) { return T{1} - t * t; });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, OpKind::relu, [](T v) { return v > 0 ? v : T{0}; }, [](T v, T) { return v > 0 ? T{1} : T{0}; });
}

template <typename T>
Var<T> one_minus(Var<T> x) {
  return unary(x, OpKind::one_minus, [](T v) { return T{1} - v; }, [](T, T) { return T{-1}; });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(OpKind::add, {a.id, b.id}, std::move(out), [](BackwardContext<T>& ctx, const Tensor<T>& g) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor<T>* gi = ctx.grad(k)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "sub");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av, bv, "sub");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record(OpKind::sub, {a.id, b.id}, std::move(out), [](BackwardContext<T>& ctx, const Tensor<T>& g) {
    if (Tensor<T>* ga = ctx.grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor<T>* gb = ctx.grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "mul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(OpKind::mul, {a.id, b.id}, std::move(out), [](BackwardContext<T>& ctx, const Tensor<T>& g) {
    if (Tensor<T>* ga = ctx.grad(0)) {
      const Tensor<T>& bv = ctx.input(1);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor<T>* gb = ctx.grad(1)) {
      const Tensor<T>& av = ctx.input(0);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "concat_channels");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_chw(av, "concat_channels");
  require_chw(bv, "concat_channels");
  if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2)) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor<T> out(Shape{av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::copy(av.data().begin(), av.data().end(), out.data().begin());
  std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(av.size()));
  const std::size_t split = av.size();
  return tape.record(OpKind::concat, {a.id, b.id}, std::move(out),
                     [split](BackwardContext<T>& ctx, const Tensor<T>& g) {
                       if (Tensor<T>* ga = ctx.grad(0)) {
                         for (std::size_t i = 0; i < split; ++i) (*ga)[i] += g[i];
                       }
                       if (Tensor<T>* gb = ctx.grad(1)) {
                         for (std::size_t i = split; i < g.size(); ++i) (*gb)[i - split] += g[i];
                       }
                     });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = x.value();
  require_chw(xv, "slice_channels");
  if (begin >= end || end > xv.dim(0)) {
    throw ShapeError("slice_channels: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") for " + shape_str(xv.shape()));
  }
  const std::size_t plane = xv.dim(1) * xv.dim(2);
  Tensor<T> out(Shape{end - begin, xv.dim(1), xv.dim(2)});
  std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * plane), out.size(), out.data().begin());
  const std::size_t offset = begin * plane;
  return x.tape->record(OpKind::slice, {x.id}, std::move(out),
                        [offset](BackwardContext<T>& ctx, const Tensor<T>& g) {
                          if (Tensor<T>* gx = ctx.grad(0)) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[offset + i] += g[i];
                          }
                        });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  long double s = 0;
  for (auto v : xv.data()) s += v;
  return x.tape->record(OpKind::sum, {x.id}, Tensor<T>::scalar(static_cast<T>(s)), [](BackwardContext<T>& ctx, const Tensor<T>& g) {
    if (Tensor<T>* gx = ctx.grad(0)) {
      const T gs = g[0];
      for (auto& v : gx->data()) v += gs;
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  return x.tape->record(OpKind::scale, {x.id}, std::move(out),
                        [factor](BackwardContext<T>& ctx, const Tensor<T>& g) {
                          if (Tensor<T>* gx = ctx.grad(0)) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor;
                          }
                        });
}

template <typename T>
Var<T> sigmoid_ce_mean(Var<T> logits, const Tensor<T>& targets) {
  const Tensor<T>& xv = logits.value();
  require_same_shape(xv, targets, "sigmoid_ce_mean");
  for (auto z : targets.data()) {
    if (!(z >= 0 && z <= 1)) throw std::invalid_argument("sigmoid_ce_mean: targets must lie in [0,1]");
  }
  long double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const long double x = xv[i];
    acc += std::max(x, 0.0L) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const T inv_n = T{1} / static_cast<T>(xv.size());
  return logits.tape->record(OpKind::sigmoid_ce, {logits.id},
                             Tensor<T>::scalar(static_cast<T>(acc / static_cast<long double>(xv.size()))),
                             [targets, inv_n](BackwardContext<T>& ctx, const Tensor<T>& g) {
                               Tensor<T>* gx = ctx.grad(0);
                               if (!gx) return;
                               const Tensor<T>& x = ctx.input(0);
                               const T scale = g[0] * inv_n;
                               for (std::size_t i = 0; i < x.size(); ++i) {
                                 (*gx)[i] += scale * (sigmoid_scalar(x[i]) - targets[i]);
                               }
                             });
}

#define HGRU_AUTODIFF(T)                                                   \
  template struct Var<T>;                                                  \
  template class Gradients<T>;                                             \
  template class Tape<T>;                                                  \
  template class BackwardContext<T>;                                       \
  template T sigmoid_scalar<T>(T);                                         \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>);                       \
  template Var<T> maxpool2<T>(Var<T>);                                     \
  template Var<T> upsample2<T>(Var<T>);                                    \
  template Var<T> sigmoid<T>(Var<T>);                                      \
  template Var<T> tanh<T>(Var<T>);                                         \
  template Var<T> relu<T>(Var<T>);                                         \
  template Var<T> one_minus<T>(Var<T>);                                    \
  template Var<T> add<T>(Var<T>, Var<T>);                                  \
  template Var<T> sub<T>(Var<T>, Var<T>);                                  \
  template Var<T> mul<T>(Var<T>, Var<T>);                                  \
  template Var<T> concat_channels<T>(Var<T>, Var<T>);                      \
  template Var<T> slice_channels<T>(Var<T>, std::size_t, std::size_t);     \
  template Var<T> sum<T>(Var<T>);                                          \
  template Var<T> scale<T>(Var<T>, T);                                     \
  template Var<T> sigmoid_ce_mean<T>(Var<T>, const Tensor<T>&);

HGRU_AUTODIFF(float)
HGRU_AUTODIFF(double)

}  // namespace hgru
