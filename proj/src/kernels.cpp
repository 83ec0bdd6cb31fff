#include "hgru/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "hgru/tensor.hpp"

namespace hgru {

void check_conv_buffers(const ConvDims& d, std::size_t in, std::size_t w, std::size_t b, std::size_t out) {
  if (d.kernel % 2 == 0) {
    throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(d.kernel));
  }
  if (in != d.input_size() || w != d.weight_size() || b != d.out_channels || out != d.output_size()) {
    throw ShapeError("conv2d: buffer sizes inconsistent with dims");
  }
}

namespace {

using Index = std::int64_t;

// Valid output range [lo, hi) along one axis for a tap offset `off`.
inline void tap_range(Index off, Index extent, Index& lo, Index& hi) {
  lo = std::max<Index>(0, -off);
  hi = std::min<Index>(extent, extent - off);
}

// ---- 3x3 fast path: zero-padded planes, register tiles of kLanes columns ----------------------

constexpr Index kLanes = 16;

// Channel c, padded row r, padded column x lives at (c * (h + 2) + r) * (w + 2) + x. The slack at
// the end lets a full tile read past the last column of the last row.
template <typename T>
std::vector<T> pad_planes(const T* src, Index channels, Index h, Index w) {
  const Index hp = h + 2, wp = w + 2;
  std::vector<T> buf(static_cast<std::size_t>(channels * hp * wp + kLanes + 2), T{0});
  for (Index c = 0; c < channels; ++c) {
    for (Index y = 0; y < h; ++y) {
      std::copy(src + (c * h + y) * w, src + (c * h + y + 1) * w, buf.data() + (c * hp + y + 1) * wp + 1);
    }
  }
  return buf;
}

template <typename T, Index CB>
void conv3_tile_row(const T* pad, Index h, Index w, Index cin, const T* weight, const T* bias, Index co0, Index y,
                    T* out, bool accumulate) {
  const Index hp = h + 2, wp = w + 2, hw = h * w;
  for (Index x0 = 0; x0 < w; x0 += kLanes) {
    const Index n = std::min(kLanes, w - x0);
    T acc[CB][kLanes] = {};
    for (Index ci = 0; ci < cin; ++ci) {
      const T* wk[CB];
      for (Index c = 0; c < CB; ++c) wk[c] = weight + ((co0 + c) * cin + ci) * 9;
      for (Index ky = 0; ky < 3; ++ky) {
        const T* row = pad + (ci * hp + y + ky) * wp + x0;
        for (Index kx = 0; kx < 3; ++kx) {
          for (Index c = 0; c < CB; ++c) {
            const T wv = wk[c][ky * 3 + kx];
#pragma omp simd
            for (Index v = 0; v < kLanes; ++v) acc[c][v] += wv * row[kx + v];
          }
        }
      }
    }
    for (Index c = 0; c < CB; ++c) {
      T* o = out + (co0 + c) * hw + y * w + x0;
      if (accumulate) {
        for (Index v = 0; v < n; ++v) o[v] += acc[c][v];
      } else {
        const T b = bias ? bias[co0 + c] : T{0};
        for (Index v = 0; v < n; ++v) o[v] = b + acc[c][v];
      }
    }
  }
}

// out (=|+=) conv3(in) + bias over all output channels, blocked 8/4/1 channels at a time.
template <typename T>
void conv3_apply(const T* in, Index cin, Index cout, Index h, Index w, const T* weight, const T* bias, T* out,
                 bool accumulate) {
  const std::vector<T> pad = pad_planes(in, cin, h, w);
  const Index b8 = cout / 8, b4 = (cout - b8 * 8) / 4, rest0 = b8 * 8 + b4 * 4;
  const Index tasks = (b8 + b4 + (cout - rest0)) * h;
#pragma omp parallel for schedule(static)
  for (Index t = 0; t < tasks; ++t) {
    const Index blk = t / h, y = t % h;
    if (blk < b8) {
      conv3_tile_row<T, 8>(pad.data(), h, w, cin, weight, bias, blk * 8, y, out, accumulate);
    } else if (blk < b8 + b4) {
      conv3_tile_row<T, 4>(pad.data(), h, w, cin, weight, bias, b8 * 8 + (blk - b8) * 4, y, out, accumulate);
    } else {
      conv3_tile_row<T, 1>(pad.data(), h, w, cin, weight, bias, rest0 + (blk - b8 - b4), y, out, accumulate);
    }
  }
}

template <typename T>
void conv3_params(const T* grad_out, const T* in, Index cin, Index cout, Index h, Index w, T* grad_weight) {
  const std::vector<T> pad = pad_planes(in, cin, h, w);
  const Index hp = h + 2, wp = w + 2;
  // grad_out rows widened to whole tiles; the extra lanes stay zero.
  const Index ws = (w + kLanes - 1) / kLanes * kLanes;
  std::vector<T> gpad(static_cast<std::size_t>(cout * h * ws), T{0});
  for (Index r = 0; r < cout * h; ++r) std::copy(grad_out + r * w, grad_out + (r + 1) * w, gpad.data() + r * ws);
#pragma omp parallel for schedule(static)
  for (Index pair = 0; pair < cout * cin; ++pair) {
    const Index co = pair / cin, ci = pair % cin;
    T acc[9][kLanes] = {};
    for (Index y = 0; y < h; ++y) {
      for (Index x0 = 0; x0 < w; x0 += kLanes) {
        const T* gv = gpad.data() + (co * h + y) * ws + x0;
        for (Index ky = 0; ky < 3; ++ky) {
          const T* row = pad.data() + (ci * hp + y + ky) * wp + x0;
          for (Index kx = 0; kx < 3; ++kx) {
#pragma omp simd
            for (Index v = 0; v < kLanes; ++v) acc[ky * 3 + kx][v] += gv[v] * row[kx + v];
          }
        }
      }
    }
    T* gw = grad_weight + pair * 9;
    for (Index tap = 0; tap < 9; ++tap) {
      T sum = 0;
      for (Index v = 0; v < kLanes; ++v) sum += acc[tap][v];
      gw[tap] += sum;
    }
  }
}

}  // namespace

namespace kernels {

template <typename T>
void conv2d_forward(const ConvDims& d, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  check_conv_buffers(d, in.size(), weight.size(), bias.size(), out.size());
  const Index cin = static_cast<Index>(d.in_channels);
  const Index cout = static_cast<Index>(d.out_channels);
  const Index h = static_cast<Index>(d.height);
  const Index w = static_cast<Index>(d.width);
  const Index k = static_cast<Index>(d.kernel);
  const Index pad = (k - 1) / 2;
  const Index hw = h * w;
  if (k == 3) {
    conv3_apply(in.data(), cin, cout, h, w, weight.data(), bias.data(), out.data(), false);
    return;
  }

#pragma omp parallel for schedule(static)
  for (Index co = 0; co < cout; ++co) {
    T* o = out.data() + co * hw;
    std::fill(o, o + hw, bias[co]);
    for (Index ci = 0; ci < cin; ++ci) {
      const T* src = in.data() + ci * hw;
      const T* wk = weight.data() + (co * cin + ci) * k * k;
      for (Index ky = 0; ky < k; ++ky) {
        Index y0, y1;
        tap_range(ky - pad, h, y0, y1);
        for (Index kx = 0; kx < k; ++kx) {
          Index x0, x1;
          const Index dx = kx - pad;
          tap_range(dx, w, x0, x1);
          const T wv = wk[ky * k + kx];
          for (Index y = y0; y < y1; ++y) {
            T* orow = o + y * w;
            const T* irow = src + (y + ky - pad) * w + dx;
#pragma omp simd
            for (Index x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvDims& d, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
  check_conv_buffers(d, grad_in.size(), weight.size(), d.out_channels, grad_out.size());
  const Index cin = static_cast<Index>(d.in_channels);
  const Index cout = static_cast<Index>(d.out_channels);
  const Index h = static_cast<Index>(d.height);
  const Index w = static_cast<Index>(d.width);
  const Index k = static_cast<Index>(d.kernel);
  const Index pad = (k - 1) / 2;
  const Index hw = h * w;
  if (k == 3) {
    // Transposed, flipped taps turn the input gradient into a forward convolution.
    std::vector<T> flipped(weight.size());
    for (Index co = 0; co < cout; ++co) {
      for (Index ci = 0; ci < cin; ++ci) {
        for (Index tap = 0; tap < 9; ++tap) flipped[(ci * cout + co) * 9 + 8 - tap] = weight[(co * cin + ci) * 9 + tap];
      }
    }
    conv3_apply<T>(grad_out.data(), cout, cin, h, w, flipped.data(), nullptr, grad_in.data(), true);
    return;
  }

#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < cin; ++ci) {
    T* gi = grad_in.data() + ci * hw;
    for (Index co = 0; co < cout; ++co) {
      const T* g = grad_out.data() + co * hw;
      const T* wk = weight.data() + (co * cin + ci) * k * k;
      for (Index ky = 0; ky < k; ++ky) {
        Index y0, y1;
        tap_range(ky - pad, h, y0, y1);
        for (Index kx = 0; kx < k; ++kx) {
          Index x0, x1;
          const Index dx = kx - pad;
          tap_range(dx, w, x0, x1);
          const T wv = wk[ky * k + kx];
          for (Index y = y0; y < y1; ++y) {
            T* girow = gi + (y + ky - pad) * w + dx;
            const T* grow = g + y * w;
#pragma omp simd
            for (Index x = x0; x < x1; ++x) girow[x] += wv * grow[x];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvDims& d, std::span<const T> grad_out, std::span<const T> in,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  const Index cin = static_cast<Index>(d.in_channels);
  const Index cout = static_cast<Index>(d.out_channels);
  const Index h = static_cast<Index>(d.height);
  const Index w = static_cast<Index>(d.width);
  const Index k = static_cast<Index>(d.kernel);
  const Index pad = (k - 1) / 2;
  const Index hw = h * w;
  const bool want_w = !grad_weight.empty();
  const bool want_b = !grad_bias.empty();
  if (k == 3) {
    if (want_b) {
      for (Index co = 0; co < cout; ++co) {
        const T* g = grad_out.data() + co * hw;
        T acc = 0;
        for (Index i = 0; i < hw; ++i) acc += g[i];
        grad_bias[co] += acc;
      }
    }
    if (want_w) conv3_params(grad_out.data(), in.data(), cin, cout, h, w, grad_weight.data());
    return;
  }

#pragma omp parallel
  {
    std::vector<T> lane(static_cast<std::size_t>(w));
#pragma omp for schedule(static)
    for (Index co = 0; co < cout; ++co) {
      const T* g = grad_out.data() + co * hw;
      if (want_b) {
        T acc = 0;
        for (Index i = 0; i < hw; ++i) acc += g[i];
        grad_bias[co] += acc;
      }
      if (!want_w) continue;
      for (Index ci = 0; ci < cin; ++ci) {
        const T* src = in.data() + ci * hw;
        T* gw = grad_weight.data() + (co * cin + ci) * k * k;
        for (Index ky = 0; ky < k; ++ky) {
          Index y0, y1;
          tap_range(ky - pad, h, y0, y1);
          for (Index kx = 0; kx < k; ++kx) {
            Index x0, x1;
            const Index dx = kx - pad;
            tap_range(dx, w, x0, x1);
            // Per-column partial sums; one horizontal reduction per tap.
            T* acc = lane.data();
            std::fill(acc, acc + w, T{0});
            for (Index y = y0; y < y1; ++y) {
              const T* grow = g + y * w;
              const T* irow = src + (y + ky - pad) * w + dx;
#pragma omp simd
              for (Index x = x0; x < x1; ++x) acc[x] += grow[x] * irow[x];
            }
            T total = 0;
            for (Index x = x0; x < x1; ++x) total += acc[x];
            gw[ky * k + kx] += total;
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool2_forward(std::size_t channels, std::size_t height, std::size_t width, std::span<const T> in,
                      std::span<T> out, std::span<std::size_t> argmax) {
  const Index c = static_cast<Index>(channels);
  const std::size_t oh = height / 2, ow = width / 2;
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t base = (static_cast<std::size_t>(ch) * height + 2 * oy) * width + 2 * ox;
        const std::size_t cand[4] = {base, base + 1, base + width, base + width + 1};
        std::size_t best = cand[0];
        for (int i = 1; i < 4; ++i) {
          if (in[cand[i]] > in[best]) best = cand[i];
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
}

template <typename T>
void upsample2_forward(std::size_t channels, std::size_t height, std::size_t width, std::span<const T> in,
                       std::span<T> out) {
  const std::size_t ow = 2 * width;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const T* irow = in.data() + (c * height + y) * width;
      T* r0 = out.data() + (c * 2 * height + 2 * y) * ow;
      T* r1 = r0 + ow;
      for (std::size_t x = 0; x < width; ++x) {
        r0[2 * x] = r0[2 * x + 1] = irow[x];
        r1[2 * x] = r1[2 * x + 1] = irow[x];
      }
    }
  }
}

template <typename T>
void upsample2_backward(std::size_t channels, std::size_t height, std::size_t width,
                        std::span<const T> grad_out, std::span<T> grad_in) {
  const std::size_t ow = 2 * width;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      T* gi = grad_in.data() + (c * height + y) * width;
      const T* r0 = grad_out.data() + (c * 2 * height + 2 * y) * ow;
      const T* r1 = r0 + ow;
      for (std::size_t x = 0; x < width; ++x) {
        gi[x] += (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
      }
    }
  }
}

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const ConvDims& d, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  const Index k = static_cast<Index>(d.kernel), pad = (k - 1) / 2;
  const Index h = static_cast<Index>(d.height), w = static_cast<Index>(d.width);
  for (std::size_t co = 0; co < d.out_channels; ++co) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        T s = bias[co];
        for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
          for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
              const Index iy = y + ky - pad, ix = x + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += weight[((co * d.in_channels + ci) * k + ky) * k + kx] * in[(ci * h + iy) * w + ix];
            }
          }
        }
        out[(co * h + y) * w + x] = s;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvDims& d, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
  const Index k = static_cast<Index>(d.kernel), pad = (k - 1) / 2;
  const Index h = static_cast<Index>(d.height), w = static_cast<Index>(d.width);
  for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
    for (Index iy = 0; iy < h; ++iy) {
      for (Index ix = 0; ix < w; ++ix) {
        T s = 0;
        for (std::size_t co = 0; co < d.out_channels; ++co) {
          for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
              const Index y = iy - ky + pad, x = ix - kx + pad;
              if (y < 0 || y >= h || x < 0 || x >= w) continue;
              s += weight[((co * d.in_channels + ci) * k + ky) * k + kx] * grad_out[(co * h + y) * w + x];
            }
          }
        }
        grad_in[(ci * h + iy) * w + ix] += s;
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvDims& d, std::span<const T> grad_out, std::span<const T> in,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  const Index k = static_cast<Index>(d.kernel), pad = (k - 1) / 2;
  const Index h = static_cast<Index>(d.height), w = static_cast<Index>(d.width);
  for (std::size_t co = 0; co < d.out_channels; ++co) {
    if (!grad_bias.empty()) {
      T s = 0;
      for (Index i = 0; i < h * w; ++i) s += grad_out[co * h * w + i];
      grad_bias[co] += s;
    }
    if (grad_weight.empty()) continue;
    for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          T s = 0;
          for (Index y = 0; y < h; ++y) {
            for (Index x = 0; x < w; ++x) {
              const Index iy = y + ky - pad, ix = x + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += grad_out[(co * h + y) * w + x] * in[(ci * h + iy) * w + ix];
            }
          }
          grad_weight[((co * d.in_channels + ci) * k + ky) * k + kx] += s;
        }
      }
    }
  }
}

template <typename T>
void maxpool2_forward(std::size_t channels, std::size_t height, std::size_t width, std::span<const T> in,
                      std::span<T> out, std::span<std::size_t> argmax) {
  const std::size_t oh = height / 2, ow = width / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = 0;
        bool first = true;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * height + 2 * oy + dy) * width + 2 * ox + dx;
            if (first || in[idx] > in[best]) best = idx;
            first = false;
          }
        }
        out[(c * oh + oy) * ow + ox] = in[best];
        argmax[(c * oh + oy) * ow + ox] = best;
      }
    }
  }
}

}  // namespace reference

#define HGRU_KERNELS(NS, T)                                                                              \
  template void NS::conv2d_forward<T>(const ConvDims&, std::span<const T>, std::span<const T>,           \
                                      std::span<const T>, std::span<T>);                                 \
  template void NS::conv2d_backward_input<T>(const ConvDims&, std::span<const T>, std::span<const T>,    \
                                             std::span<T>);                                              \
  template void NS::conv2d_backward_params<T>(const ConvDims&, std::span<const T>, std::span<const T>,   \
                                              std::span<T>, std::span<T>);                               \
  template void NS::maxpool2_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,       \
                                        std::span<T>, std::span<std::size_t>);

HGRU_KERNELS(kernels, float)
HGRU_KERNELS(kernels, double)
HGRU_KERNELS(reference, float)
HGRU_KERNELS(reference, double)

template void kernels::upsample2_forward<float>(std::size_t, std::size_t, std::size_t, std::span<const float>,
                                                std::span<float>);
template void kernels::upsample2_forward<double>(std::size_t, std::size_t, std::size_t, std::span<const double>,
                                                 std::span<double>);
template void kernels::upsample2_backward<float>(std::size_t, std::size_t, std::size_t, std::span<const float>,
                                                 std::span<float>);
template void kernels::upsample2_backward<double>(std::size_t, std::size_t, std::size_t,
                                                  std::span<const double>, std::span<double>);

}  // namespace hgru
