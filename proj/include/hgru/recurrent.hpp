#pragma once

// Convolutional GRU and its coordinate-augmented variant.
//
//   z_t  = sigmoid(W_hz * h_{t-1} + W_xz * x_t + b_z)
//   r_t  = sigmoid(W_hr * h_{t-1} + W_xr * x_t + b_r)
//   h^_t = tanh(W_h * (r_t . h_{t-1}) + W_x * x_t + b)
//   h_t  = (1 - z_t) . h_{t-1} + z_t . h^_t
//
// The coordinate variant appends two normalised coordinate maps (x then y) to every
// convolution operand, so each weight tensor has C + 2 input channels.

#include <cstddef>
#include <string_view>

#include "hgru/autodiff.hpp"
#include "hgru/tensor.hpp"

namespace hgru {

enum class CellKind { none, convgru, coordconvgru };

std::string_view to_string(CellKind kind);
CellKind parse_cell_kind(std::string_view text);

inline constexpr std::size_t kCoordChannels = 2;

template <typename T>
struct GruWeights {
  Tensor<T> w_hz, w_xz, w_hr, w_xr, w_h, w_x;  // [C, C_in, k, k]
  Tensor<T> b_z, b_r, b;                       // [C]

  std::size_t channels() const { return b.dim(0); }
  std::size_t in_channels() const { return w_h.dim(1); }
  std::size_t kernel() const { return w_h.dim(2); }
};

template <typename T>
struct GruParams : GruWeights<T> {
  static GruParams zeros(std::size_t channels, std::size_t kernel = 3);
};

template <typename T>
struct CoordGruParams : GruWeights<T> {
  static CoordGruParams zeros(std::size_t channels, std::size_t kernel = 3);
};

/// Lifts plain ConvGRU weights to the coordinate variant with zero coordinate weights.
template <typename T>
CoordGruParams<T> with_zero_coord_weights(const GruParams<T>& p);

template <typename T>
struct GruStepTrace {
  Tensor<T> z, r, h_hat, h;
};

/// Tape handles for the nine parameter tensors.
template <typename T>
struct GruVars {
  Var<T> w_hz, w_xz, w_hr, w_xr, w_h, w_x, b_z, b_r, b;
};

template <typename T>
struct GruStepVars {
  Var<T> z, r, h_hat, h;
};

template <typename T>
GruVars<T> bind_leaves(Tape<T>& tape, const GruWeights<T>& w);

/// One cell step on a tape. With `coords` set, every operand is concatenated with the
/// coordinate maps before its convolution.
template <typename T>
GruStepVars<T> gru_step(const GruVars<T>& p, Var<T> h_prev, Var<T> x, bool coords);

/// [2,H,W]: channel 0 is the column coordinate, channel 1 the row coordinate, each mapped
/// linearly onto [-1,1]. A single row/column maps to 0.
template <typename T>
Tensor<T> coord_channels(std::size_t height, std::size_t width);

template <typename T>
Tensor<T> init_hidden(std::size_t channels, std::size_t height, std::size_t width);

template <typename T>
GruStepTrace<T> conv_gru_step(const GruParams<T>& p, const Tensor<T>& h_prev, const Tensor<T>& x);

template <typename T>
GruStepTrace<T> coord_conv_gru_step(const CoordGruParams<T>& p, const Tensor<T>& h_prev, const Tensor<T>& x);

}  // namespace hgru
