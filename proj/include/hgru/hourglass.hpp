#pragma once

// Recurrent stacked hourglass.
//
// One stack, input [C,H,W] with H,W divisible by 16:
//   encoder   4 x (conv + ReLU at H/2^(l-1), 2x2 max-pool to H/2^l)
//   skip l    pooled feature at H/2^l -> plain conv + ReLU, or one recurrent cell step
//   middle    conv + ReLU at H/16
//   decoder   for l = 4..1: add skip l, upsample to H/2^(l-1), conv + ReLU
//   head      1x1 conv -> K heatmap logits
// Stacks are chained: stack s+1 receives stack s's decoder features plus a 1x1 re-projection of
// its heatmap logits. One weight set serves every frame; only the 4 states per stack change.
//
// Parameter names (stable, used in checkpoints):
//   pre.{w,b}                     image channels -> C
//   hg<s>.enc<l>.{w,b}            l = 1..4
//   hg<s>.mid.{w,b}
//   hg<s>.skip<l>.{w,b}           plain skip conv (cell = none)
//   hg<s>.skip<l>.{w_hz,w_xz,w_hr,w_xr,w_h,w_x,b_z,b_r,b}   recurrent skip cell
//   hg<s>.dec<l>.{w,b}
//   hg<s>.head.{w,b}              [K,C,1,1]
//   remap<s>.{w,b}                [C,K,1,1], s < stacks-1

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hgru/autodiff.hpp"
#include "hgru/recurrent.hpp"
#include "hgru/tensor.hpp"

namespace hgru {

inline constexpr std::size_t kLevels = 4;
inline constexpr std::size_t kSpatialMultiple = std::size_t{1} << kLevels;

struct NetConfig {
  std::size_t image_channels = 1;
  std::size_t channels = 36;
  std::size_t keypoints = 36;
  std::size_t kernel = 3;
  std::size_t stacks = 2;
  CellKind cell = CellKind::none;

  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

template <typename T>
class HourglassWeights {
 public:
  HourglassWeights() = default;
  explicit HourglassWeights(NetConfig cfg);

  /// Xavier-uniform weights, zero biases.
  static HourglassWeights xavier(const NetConfig& cfg, std::uint64_t seed);
  /// Every tensor zero.
  static HourglassWeights zeros(const NetConfig& cfg);

  const NetConfig& config() const noexcept { return cfg_; }

  void add(std::string name, Tensor<T> value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;

  std::size_t count() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& tensor(std::size_t i) const { return tensors_[i]; }

  template <typename U>
  HourglassWeights<U> cast() const {
    HourglassWeights<U> out;
    out.set_config(cfg_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  void set_config(const NetConfig& cfg) { cfg_ = cfg; }
  bool operator==(const HourglassWeights& o) const { return names_ == o.names_ && tensors_ == o.tensors_; }

 private:
  NetConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Total scalar parameter count.
template <typename T>
std::size_t param_count(const HourglassWeights<T>& w);

/// Recurrent states, ordered stack-major: index = stack * 4 + (level - 1).
template <typename T>
struct HiddenStates {
  std::vector<Tensor<T>> tensors;

  static HiddenStates zeros(const NetConfig& cfg, std::size_t height, std::size_t width);
};

// ---- tape-level network ---------------------------------------------------------------------

template <typename T>
struct ConvVars {
  Var<T> w, b;
};

template <typename T>
struct StackVars {
  std::array<ConvVars<T>, kLevels> enc, dec, skip;
  std::array<GruVars<T>, kLevels> cell;
  ConvVars<T> mid, head;
};

template <typename T>
struct NetVars {
  NetConfig cfg;
  ConvVars<T> pre;
  std::vector<StackVars<T>> stacks;
  std::vector<ConvVars<T>> remap;
  std::vector<Var<T>> params;  // same order as the weight container
};

/// Registers every parameter as a leaf on the tape.
template <typename T>
NetVars<T> bind_leaves(Tape<T>& tape, const HourglassWeights<T>& w);

/// Wires existing handles (one per parameter, container order) into the network layout.
template <typename T>
NetVars<T> bind_vars(const HourglassWeights<T>& w, std::vector<Var<T>> params);

template <typename T>
struct HourglassOutput {
  Var<T> heatmaps;
  Var<T> features;
  std::array<Var<T>, kLevels> states;
};

template <typename T>
HourglassOutput<T> hourglass_forward(const StackVars<T>& w, Var<T> x, std::span<const Var<T>> states_in,
                                     CellKind cell);

template <typename T>
struct StackedOutput {
  std::vector<Var<T>> heatmaps;  // one per stack
  std::vector<Var<T>> states;    // stacks * 4
};

template <typename T>
StackedOutput<T> stacked_forward(const NetVars<T>& net, Var<T> image, std::span<const Var<T>> states_in);

/// Runs frames in order from zero states; returns heatmaps frame-major (frame t, stack s at
/// index t * stacks + s).
template <typename T>
std::vector<Var<T>> sequence_forward(Tape<T>& tape, const NetVars<T>& net, std::span<const Tensor<T>> frames);

// ---- tensor-level convenience ---------------------------------------------------------------

template <typename T>
struct StackedResult {
  std::vector<Tensor<T>> heatmaps;
  HiddenStates<T> states;
};

template <typename T>
StackedResult<T> stacked_forward(const HourglassWeights<T>& w, const Tensor<T>& image,
                                 const HiddenStates<T>& states_in);

template <typename T>
std::vector<Tensor<T>> sequence_forward(const HourglassWeights<T>& w, std::span<const Tensor<T>> frames);

// ---- checkpoints ----------------------------------------------------------------------------
// "HGCK", u32 version, then per parameter until EOF:
//   u32 name length, name bytes, u32 rank, u32 dims[rank], f32 data (little endian).
// The network configuration is recovered from parameter names and shapes.

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const HourglassWeights<T>& w);

HourglassWeights<float> load_checkpoint(const std::filesystem::path& path);

/// Recovers the configuration from names/shapes; throws if the set is not a complete network.
NetConfig infer_config(const HourglassWeights<float>& w);

}  // namespace hgru
