#pragma once

// Heatmap targets, the sigmoid cross-entropy objective, argmax decoding and PCK.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hgru/tensor.hpp"

namespace hgru {

struct Point2 {
  double u = 0.0;  // column (x)
  double v = 0.0;  // row (y)
  bool operator==(const Point2&) const = default;
};

/// K keypoints in pixel coordinates (pixel centres at integers) with visibility flags.
/// Points may lie outside the image.
struct KeypointSet {
  std::vector<Point2> points;
  std::vector<bool> visible;

  std::size_t size() const noexcept { return points.size(); }
};

/// [K,H,W] peak-normalised Gaussians exp(-d^2 / 2 sigma^2), one map per keypoint, rendered
/// for every keypoint regardless of visibility.
template <typename T>
Tensor<T> render_heatmap(const KeypointSet& kps, std::size_t height, std::size_t width, double sigma = 1.0);

/// Sum over (logits, target) pairs of the per-pair mean of
/// max(x,0) - x*z + log(1 + exp(-|x|)). Pairs are frames x stacks.
template <typename T>
T sigmoid_ce_loss(std::span<const Tensor<T>> logits, std::span<const Tensor<T>> targets);

template <typename T>
T sigmoid_ce_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
  return sigmoid_ce_loss<T>(std::span<const Tensor<T>>(&logits, 1), std::span<const Tensor<T>>(&targets, 1));
}

/// Per-channel argmax position (u = column, v = row); ties go to the smallest row-major index.
template <typename T>
std::vector<Point2> decode_keypoints(const Tensor<T>& heatmaps);

struct PckConfig {
  double alpha = 0.05;
  double length = 64.0;  // larger image dimension
  double radius() const { return alpha * length; }
};

/// Fraction of visible ground-truth keypoints whose prediction lies within alpha*L (inclusive).
/// Empty optional when no keypoint is visible.
std::optional<double> pck(std::span<const Point2> pred, const KeypointSet& gt, const PckConfig& cfg);

/// Running counts for pooling PCK over many frames.
struct PckTally {
  double alpha = 0.0;
  std::size_t correct = 0;
  std::size_t visible = 0;

  void add(std::span<const Point2> pred, const KeypointSet& gt, double length);
  std::optional<double> value() const;
};

struct PckReport {
  std::vector<PckTally> rows;

  /// Human-readable table.
  std::string table() const;
  /// One `pck alpha=<a> value=<v> n_visible=<n>` line per alpha.
  std::string lines() const;
};

}  // namespace hgru
