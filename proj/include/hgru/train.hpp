#pragma once

// RMSProp training (single frames, then unrolled sequences), evaluation and run-time bench.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgru/config.hpp"
#include "hgru/dataset.hpp"
#include "hgru/hourglass.hpp"
#include "hgru/metrics.hpp"

namespace hgru {

struct TrainConfig {
  double base_lr = 2.5e-4;
  double decay_factor = 0.96;
  std::size_t decay_every = 20000;
  double rho = 0.9;
  double epsilon = 1e-8;

  std::size_t phase1_batch = 60;   // single frames per step
  std::size_t phase1_steps = 2000;
  std::size_t phase2_batch = 16;   // sequences per step
  std::size_t phase2_steps = 1000;
  std::size_t sequence_length = 4;
  bool plateau_switch = false;     // leave phase 1 early once the loss stops improving
  std::size_t plateau_window = 500;
  double plateau_rel = 0.01;

  std::size_t channels = 16;
  std::size_t stacks = 2;
  std::size_t kernel = 3;
  CellKind cell = CellKind::none;
  double heatmap_sigma = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint

  std::size_t total_steps() const { return phase1_steps + phase2_steps; }
  void validate() const;
  /// Network geometry for a dataset with the given image channels and keypoint count.
  NetConfig net_config(std::size_t image_channels, std::size_t keypoints) const;

  static TrainConfig from_config(const KeyValueConfig& kv);
};

/// base_lr * decay_factor^floor(step / decay_every).
double lr_schedule(std::size_t step, const TrainConfig& cfg);

template <typename T>
struct OptimState {
  std::vector<Tensor<T>> acc;  // one per parameter, same order as the weights
  double rho = 0.9;
  double epsilon = 1e-8;
  std::size_t step = 0;

  static OptimState zeros_like(const HourglassWeights<T>& w, double rho, double epsilon);
};

/// acc <- rho*acc + (1-rho)*g^2;  param <- param - lr*g / (sqrt(acc) + eps).
template <typename T>
void rmsprop_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& acc, double rho, double epsilon, double lr);

/// Applies rmsprop_step to every parameter and advances the step counter.
template <typename T>
void rmsprop_step(HourglassWeights<T>& w, std::span<const Tensor<T>> grads, OptimState<T>& state, double lr);

/// Optimizer sidecar written next to a checkpoint ("<ckpt>.opt"): "HGOS", u32 version,
/// u32 step low/high words, f64 rho, f64 epsilon, then every accumulator as f32.
void save_optim_state(const std::filesystem::path& path, const OptimState<float>& s);
OptimState<float> load_optim_state(const std::filesystem::path& path, const HourglassWeights<float>& like);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct TraceEntry {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  std::size_t phase = 1;
};

std::string format_trace_line(const TraceEntry& e);

struct TrainResult {
  HourglassWeights<float> weights;
  OptimState<float> optim;
  std::vector<TraceEntry> trace;
  std::size_t phase1_steps = 0;  // steps actually spent in phase 1
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint;  // final and periodic checkpoints
  std::ostream* trace_sink = nullptr;               // one trace line per step
  const HourglassWeights<float>* initial = nullptr;  // resume weights
  const OptimState<float>* initial_optim = nullptr;  // resume optimizer; its step is where training restarts
};

/// Per-sample objective and parameter gradients: sigmoid CE summed over frames and stacks.
struct SampleGrad {
  double loss = 0;
  std::vector<Tensor<float>> grads;
};
SampleGrad sample_gradient(const HourglassWeights<float>& w, std::span<const Tensor<float>> frames,
                           std::span<const Tensor<float>> targets);

TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opts = {});

/// Final-stack PCK over every frame of every sequence, L = max(H, W).
PckReport evaluate(const HourglassWeights<float>& w, const Dataset& data, std::span<const double> alphas);

struct BenchResult {
  CellKind cell = CellKind::none;
  double median_ms = 0;
  std::vector<double> samples_ms;
};

/// Median wall time of one stacked_forward call with states carried between frames.
BenchResult bench_forward(const HourglassWeights<float>& w, std::size_t height, std::size_t width,
                          std::size_t frames, std::size_t warmup, std::uint64_t seed);

}  // namespace hgru
