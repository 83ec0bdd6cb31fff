#include "hgru/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace hgru {

template <typename T>
Tensor<T> render_heatmap(const KeypointSet& kps, std::size_t height, std::size_t width, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("render_heatmap: sigma must be positive");
  if (kps.points.empty()) throw std::invalid_argument("render_heatmap: no keypoints");
  Tensor<T> out(Shape{kps.size(), height, width});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t k = 0; k < kps.size(); ++k) {
    const auto [u, v] = kps.points[k];
    for (std::size_t y = 0; y < height; ++y) {
      const double dy = static_cast<double>(y) - v;
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = static_cast<double>(x) - u;
        out.at(k, y, x) = static_cast<T>(std::exp(-(dx * dx + dy * dy) * inv));
      }
    }
  }
  return out;
}

template <typename T>
T sigmoid_ce_loss(std::span<const Tensor<T>> logits, std::span<const Tensor<T>> targets) {
  if (logits.size() != targets.size()) {
    throw ShapeError("sigmoid_ce_loss: " + std::to_string(logits.size()) + " predictions vs " +
                     std::to_string(targets.size()) + " targets");
  }
  T total = 0;
  for (std::size_t p = 0; p < logits.size(); ++p) {
    require_same_shape(logits[p], targets[p], "sigmoid_ce_loss");
    T acc = 0;
    for (std::size_t i = 0; i < logits[p].size(); ++i) {
      const T x = logits[p][i];
      const T z = targets[p][i];
      if (!(z >= 0 && z <= 1)) throw std::invalid_argument("sigmoid_ce_loss: targets must lie in [0,1]");
      acc += std::max(x, T{0}) - x * z + std::log1p(std::exp(-std::abs(x)));
    }
    total += acc / static_cast<T>(logits[p].size());
  }
  return total;
}

template <typename T>
std::vector<Point2> decode_keypoints(const Tensor<T>& heatmaps) {
  require_chw(heatmaps, "decode_keypoints");
  const std::size_t k = heatmaps.dim(0), h = heatmaps.dim(1), w = heatmaps.dim(2);
  std::vector<Point2> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    const T* m = heatmaps.data().data() + c * h * w;
    std::size_t best = 0;
    for (std::size_t i = 1; i < h * w; ++i) {
      if (m[i] > m[best]) best = i;
    }
    out[c] = Point2{static_cast<double>(best % w), static_cast<double>(best / w)};
  }
  return out;
}

std::optional<double> pck(std::span<const Point2> pred, const KeypointSet& gt, const PckConfig& cfg) {
  PckTally t{cfg.alpha};
  t.add(pred, gt, cfg.length);
  return t.value();
}

void PckTally::add(std::span<const Point2> pred, const KeypointSet& gt, double length) {
  if (pred.size() != gt.size() || gt.visible.size() != gt.size()) {
    throw ShapeError("pck: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                     " ground-truth keypoints");
  }
  if (!(alpha > 0) || !(length > 0)) throw std::invalid_argument("pck: alpha and L must be positive");
  const double r2 = (alpha * length) * (alpha * length);
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!gt.visible[k]) continue;
    ++visible;
    const double du = pred[k].u - gt.points[k].u;
    const double dv = pred[k].v - gt.points[k].v;
    if (du * du + dv * dv <= r2) ++correct;
  }
}

std::optional<double> PckTally::value() const {
  if (visible == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(visible);
}

std::string PckReport::table() const {
  std::ostringstream os;
  os << "  alpha     PCK   visible\n";
  for (const auto& r : rows) {
    char buf[96];
    const auto v = r.value();
    if (v) {
      std::snprintf(buf, sizeof buf, "  %5.3f  %6.2f%%  %8zu\n", r.alpha, 100.0 * *v, r.visible);
    } else {
      std::snprintf(buf, sizeof buf, "  %5.3f       -  %8zu\n", r.alpha, r.visible);
    }
    os << buf;
  }
  return os.str();
}

std::string PckReport::lines() const {
  std::ostringstream os;
  for (const auto& r : rows) {
    const auto v = r.value();
    char buf[128];
    if (v) {
      std::snprintf(buf, sizeof buf, "pck alpha=%g value=%.6f n_visible=%zu\n", r.alpha, *v, r.visible);
    } else {
      std::snprintf(buf, sizeof buf, "pck alpha=%g value=none n_visible=0\n", r.alpha);
    }
    os << buf;
  }
  return os.str();
}

#define HGRU_METRICS(T)                                                                                   \
  template Tensor<T> render_heatmap<T>(const KeypointSet&, std::size_t, std::size_t, double);            \
  template T sigmoid_ce_loss<T>(std::span<const Tensor<T>>, std::span<const Tensor<T>>);                 \
  template std::vector<Point2> decode_keypoints<T>(const Tensor<T>&);

HGRU_METRICS(float)
HGRU_METRICS(double)

}  // namespace hgru
