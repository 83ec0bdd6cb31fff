#pragma once

// Raw 2D kernels over flat channels-first buffers. Two implementations share one signature:
//   hgru::kernels    OpenMP-parallel, row-vectorised; used by the autodiff ops.
//   hgru::reference  serial direct sums, kept as the oracle for tests and benchmarks.
//
// Convolutions are stride 1 with zero "same" padding of (k-1)/2. Every parallel loop writes
// disjoint output slices and reduces in a fixed order, so results do not depend on the
// thread count.

#include <cstddef>
#include <span>

namespace hgru {

struct ConvDims {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 3;

  std::size_t plane() const noexcept { return height * width; }
  std::size_t input_size() const noexcept { return in_channels * plane(); }
  std::size_t output_size() const noexcept { return out_channels * plane(); }
  std::size_t weight_size() const noexcept { return out_channels * in_channels * kernel * kernel; }
};

// Validates buffer lengths and odd kernel; throws ShapeError.
void check_conv_buffers(const ConvDims& d, std::size_t in, std::size_t w, std::size_t b, std::size_t out);

namespace kernels {

// out = conv(in, weight) + bias  (overwrites out)
template <typename T>
void conv2d_forward(const ConvDims& d, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

// grad_in += conv^T(grad_out, weight)
template <typename T>
void conv2d_backward_input(const ConvDims& d, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);

// grad_weight += grad_out (*) in ; grad_bias += sum(grad_out) per channel.
// Either output span may be empty to skip it.
template <typename T>
void conv2d_backward_params(const ConvDims& d, std::span<const T> grad_out, std::span<const T> in,
                            std::span<T> grad_weight, std::span<T> grad_bias);

// 2x2 max pooling. argmax receives the flat input index that produced each output.
template <typename T>
void maxpool2_forward(std::size_t channels, std::size_t height, std::size_t width, std::span<const T> in,
                      std::span<T> out, std::span<std::size_t> argmax);

template <typename T>
void upsample2_forward(std::size_t channels, std::size_t height, std::size_t width, std::span<const T> in,
                       std::span<T> out);

// grad_in += sum of the 2x2 block of grad_out for each input pixel.
template <typename T>
void upsample2_backward(std::size_t channels, std::size_t height, std::size_t width,
                        std::span<const T> grad_out, std::span<T> grad_in);

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const ConvDims& d, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

template <typename T>
void conv2d_backward_input(const ConvDims& d, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);

template <typename T>
void conv2d_backward_params(const ConvDims& d, std::span<const T> grad_out, std::span<const T> in,
                            std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void maxpool2_forward(std::size_t channels, std::size_t height, std::size_t width, std::span<const T> in,
                      std::span<T> out, std::span<std::size_t> argmax);

}  // namespace reference

}  // namespace hgru
