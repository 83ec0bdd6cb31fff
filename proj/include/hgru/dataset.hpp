#pragma once

// Synthetic keypoint sequences: generation from a seed and the on-disk record format.
//
// Directory layout: manifest.txt (key = value lines) plus seq_<index>.kpsq per sequence.
// Record: "KPSQ", u32 version, u32 T, K, H, W, C_img, then per frame the f32 image
// [C_img*H*W], f32 (u,v) x K, u8 visibility x K and f32 pose (az, el, dist, focal).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hgru/config.hpp"
#include "hgru/metrics.hpp"
#include "hgru/synth.hpp"
#include "hgru/tensor.hpp"

namespace hgru {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct SynthConfig {
  std::size_t models = 4;
  std::size_t seqs_per_model = 100;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t image_channels = 1;
  std::size_t keypoints = 8;
  std::size_t background_pool = 16;
  TrajectoryConfig trajectory{};
  Range light_intensity{0.6, 1.0};
  double ambient = 0.3;
  double noise = 0.0;            // uniform pixel noise amplitude
  double occluder_prob = 0.0;    // chance a sequence gets a static slab between camera and car
  double visibility_tol = 1e-3;  // times the object scale

  std::size_t sequence_count() const { return models * seqs_per_model; }
  void validate() const;

  /// Reads keys such as `models`, `seqs_per_model`, `frames`, `height`, `width`, `keypoints`,
  /// `azimuth_lo`, `d_azimuth_hi`, `focal`, `occluder_prob`; unset focal defaults to 1.25 * width.
  static SynthConfig from_config(const KeyValueConfig& kv);
};

struct SequenceSample {
  std::vector<Tensor<float>> frames;  // T x [C_img,H,W]
  std::vector<KeypointSet> labels;
  std::vector<CameraPose> poses;
  std::size_t background_id = 0;
  std::size_t model_id = 0;

  std::size_t length() const { return frames.size(); }
};

/// One sequence, a pure function of its arguments.
SequenceSample generate_sequence(const SynthConfig& cfg, const ObjectModel& model,
                                 const std::vector<Tensor<float>>& backgrounds, std::uint64_t seed);

struct DatasetManifest {
  std::uint32_t version = kDatasetVersion;
  std::size_t keypoints = 0, frames = 0, height = 0, width = 0, image_channels = 0, count = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> background_ids;  // optional, one per sequence

  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);
};

std::string record_name(std::size_t index);

void write_sequence(const std::filesystem::path& path, const SequenceSample& s);
SequenceSample read_sequence(const std::filesystem::path& path);

/// Model pool, background pool and every sequence derive child seeds from `seed`.
/// Throws before touching the disk when the config is invalid.
DatasetManifest generate_dataset(const SynthConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir);

struct Dataset {
  DatasetManifest manifest;
  std::vector<SequenceSample> sequences;
};

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace hgru
