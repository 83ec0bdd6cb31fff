#include "hgru/recurrent.hpp"

#include <stdexcept>
#include <string>

namespace hgru {

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::none: return "none";
    case CellKind::convgru: return "convgru";
    case CellKind::coordconvgru: return "coordconvgru";
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view text) {
  if (text == "none" || text == "baseline") return CellKind::none;
  if (text == "convgru") return CellKind::convgru;
  if (text == "coordconvgru") return CellKind::coordconvgru;
  throw std::invalid_argument("unknown cell kind '" + std::string(text) + "'");
}

namespace {

template <typename T>
GruWeights<T> zero_weights(std::size_t c, std::size_t c_in, std::size_t k) {
  if (k % 2 == 0) throw ShapeError("GRU kernel size must be odd");
  const Shape ws{c, c_in, k, k};
  GruWeights<T> w;
  w.w_hz = w.w_xz = w.w_hr = w.w_xr = w.w_h = w.w_x = Tensor<T>(ws);
  w.b_z = w.b_r = w.b = Tensor<T>(Shape{c});
  return w;
}

// Copies [C, C, k, k] weights into the first C input channels of [C, C+2, k, k].
template <typename T>
Tensor<T> pad_input_channels(const Tensor<T>& w) {
  const std::size_t c = w.dim(0), cin = w.dim(1), kk = w.dim(2) * w.dim(3);
  Tensor<T> out(Shape{c, cin + kCoordChannels, w.dim(2), w.dim(3)});
  for (std::size_t o = 0; o < c; ++o) {
    for (std::size_t i = 0; i < cin * kk; ++i) out[o * (cin + kCoordChannels) * kk + i] = w[o * cin * kk + i];
  }
  return out;
}

template <typename T>
void check_step_shapes(const GruWeights<T>& p, const Tensor<T>& h_prev, const Tensor<T>& x, bool coords) {
  require_chw(h_prev, "gru step h_prev");
  require_chw(x, "gru step x");
  require_same_shape(h_prev, x, "gru step h_prev/x");
  const std::size_t expect_in = p.channels() + (coords ? kCoordChannels : 0);
  if (h_prev.dim(0) != p.channels()) {
    throw ShapeError("gru step: state has " + std::to_string(h_prev.dim(0)) + " channels, cell has " +
                     std::to_string(p.channels()));
  }
  for (const Tensor<T>* w : {&p.w_hz, &p.w_xz, &p.w_hr, &p.w_xr, &p.w_h, &p.w_x}) {
    if (w->rank() != 4 || w->dim(0) != p.channels() || w->dim(1) != expect_in || w->dim(2) != p.kernel() ||
        w->dim(3) != p.kernel()) {
      throw ShapeError("gru step: weight shape " + shape_str(w->shape()) + " inconsistent with cell (C=" +
                       std::to_string(p.channels()) + ", inputs=" + std::to_string(expect_in) + ")");
    }
  }
}

template <typename T>
GruStepTrace<T> run_step(const GruWeights<T>& p, const Tensor<T>& h_prev, const Tensor<T>& x, bool coords) {
  check_step_shapes(p, h_prev, x, coords);
  Tape<T> tape;
  const GruVars<T> v = bind_leaves(tape, p);
  const auto out = gru_step(v, tape.constant(h_prev), tape.constant(x), coords);
  return GruStepTrace<T>{out.z.value(), out.r.value(), out.h_hat.value(), out.h.value()};
}

}  // namespace

template <typename T>
GruParams<T> GruParams<T>::zeros(std::size_t channels, std::size_t kernel) {
  return GruParams<T>{zero_weights<T>(channels, channels, kernel)};
}

template <typename T>
CoordGruParams<T> CoordGruParams<T>::zeros(std::size_t channels, std::size_t kernel) {
  return CoordGruParams<T>{zero_weights<T>(channels, channels + kCoordChannels, kernel)};
}

template <typename T>
CoordGruParams<T> with_zero_coord_weights(const GruParams<T>& p) {
  CoordGruParams<T> out;
  out.w_hz = pad_input_channels(p.w_hz);
  out.w_xz = pad_input_channels(p.w_xz);
  out.w_hr = pad_input_channels(p.w_hr);
  out.w_xr = pad_input_channels(p.w_xr);
  out.w_h = pad_input_channels(p.w_h);
  out.w_x = pad_input_channels(p.w_x);
  out.b_z = p.b_z;
  out.b_r = p.b_r;
  out.b = p.b;
  return out;
}

template <typename T>
GruVars<T> bind_leaves(Tape<T>& tape, const GruWeights<T>& w) {
  return GruVars<T>{tape.leaf(w.w_hz), tape.leaf(w.w_xz), tape.leaf(w.w_hr), tape.leaf(w.w_xr), tape.leaf(w.w_h),
                    tape.leaf(w.w_x),  tape.leaf(w.b_z),  tape.leaf(w.b_r),  tape.leaf(w.b)};
}

template <typename T>
GruStepVars<T> gru_step(const GruVars<T>& p, Var<T> h_prev, Var<T> x, bool coords) {
  Tape<T>& tape = *h_prev.tape;
  const Shape& s = h_prev.shape();
  require_chw(h_prev.value(), "gru step h_prev");
  require_same_shape(h_prev.value(), x.value(), "gru step h_prev/x");
  const std::size_t channels = s[0];
  const Var<T> no_bias = tape.constant(Tensor<T>(Shape{channels}));

  Var<T> h_in = h_prev;
  Var<T> x_in = x;
  Var<T> grid{};
  if (coords) {
    grid = tape.constant(coord_channels<T>(s[1], s[2]));
    h_in = concat_channels(h_prev, grid);
    x_in = concat_channels(x, grid);
  }

  const Var<T> z = sigmoid(add(conv2d(h_in, p.w_hz, p.b_z), conv2d(x_in, p.w_xz, no_bias)));
  const Var<T> r = sigmoid(add(conv2d(h_in, p.w_hr, p.b_r), conv2d(x_in, p.w_xr, no_bias)));
  Var<T> gated = mul(r, h_prev);
  if (coords) gated = concat_channels(gated, grid);
  const Var<T> h_hat = tanh(add(conv2d(gated, p.w_h, p.b), conv2d(x_in, p.w_x, no_bias)));
  const Var<T> h = add(mul(one_minus(z), h_prev), mul(z, h_hat));
  return GruStepVars<T>{z, r, h_hat, h};
}

template <typename T>
Tensor<T> coord_channels(std::size_t height, std::size_t width) {
  Tensor<T> out(Shape{kCoordChannels, height, width});
  auto ramp = [](std::size_t i, std::size_t n) -> T {
    if (n <= 1) return T{0};
    return T{-1} + T{2} * static_cast<T>(i) / static_cast<T>(n - 1);
  };
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      out.at(0, y, x) = ramp(x, width);
      out.at(1, y, x) = ramp(y, height);
    }
  }
  return out;
}

template <typename T>
Tensor<T> init_hidden(std::size_t channels, std::size_t height, std::size_t width) {
  return Tensor<T>(Shape{channels, height, width});
}

template <typename T>
GruStepTrace<T> conv_gru_step(const GruParams<T>& p, const Tensor<T>& h_prev, const Tensor<T>& x) {
  return run_step<T>(p, h_prev, x, false);
}

template <typename T>
GruStepTrace<T> coord_conv_gru_step(const CoordGruParams<T>& p, const Tensor<T>& h_prev, const Tensor<T>& x) {
  return run_step<T>(p, h_prev, x, true);
}

#define HGRU_RECURRENT(T)                                                                              \
  template struct GruParams<T>;                                                                        \
  template struct CoordGruParams<T>;                                                                   \
  template CoordGruParams<T> with_zero_coord_weights<T>(const GruParams<T>&);                          \
  template GruVars<T> bind_leaves<T>(Tape<T>&, const GruWeights<T>&);                                  \
  template GruStepVars<T> gru_step<T>(const GruVars<T>&, Var<T>, Var<T>, bool);                        \
  template Tensor<T> coord_channels<T>(std::size_t, std::size_t);                                      \
  template Tensor<T> init_hidden<T>(std::size_t, std::size_t, std::size_t);                            \
  template GruStepTrace<T> conv_gru_step<T>(const GruParams<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template GruStepTrace<T> coord_conv_gru_step<T>(const CoordGruParams<T>&, const Tensor<T>&, const Tensor<T>&);

HGRU_RECURRENT(float)
HGRU_RECURRENT(double)

}  // namespace hgru
