#include "hgru/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>

#include "hgru/binary_io.hpp"

namespace hgru {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string("synth config: ") + what + " must be positive");
  };
  positive(models, "models");
  positive(seqs_per_model, "seqs_per_model");
  positive(height, "height");
  positive(width, "width");
  positive(image_channels, "image_channels");
  positive(background_pool, "background_pool");
  if (keypoints != 8 && keypoints != 16) {
    throw std::invalid_argument("synth config: keypoints must be 8 or 16, got " + std::to_string(keypoints));
  }
  trajectory.validate();
  if (!(light_intensity.lo <= light_intensity.hi) || light_intensity.lo < 0) {
    throw std::invalid_argument("synth config: bad light intensity range");
  }
  if (!(ambient >= 0 && ambient <= 1)) throw std::invalid_argument("synth config: ambient must lie in [0,1]");
  if (!(noise >= 0)) throw std::invalid_argument("synth config: noise must be non-negative");
  if (!(occluder_prob >= 0 && occluder_prob <= 1)) {
    throw std::invalid_argument("synth config: occluder_prob must lie in [0,1]");
  }
  if (!(visibility_tol > 0)) throw std::invalid_argument("synth config: visibility_tol must be positive");
}

SynthConfig SynthConfig::from_config(const KeyValueConfig& kv) {
  SynthConfig c;
  auto count = [&](const char* key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v <= 0) throw std::invalid_argument(std::string("config key '") + key + "' must be positive");
    return static_cast<std::size_t>(v);
  };
  auto range = [&](const char* name, Range r) {
    const std::string n(name);
    return Range{kv.get_double(n + "_lo", r.lo), kv.get_double(n + "_hi", r.hi)};
  };
  c.models = count("models", c.models);
  c.seqs_per_model = count("seqs_per_model", c.seqs_per_model);
  c.height = count("height", c.height);
  c.width = count("width", c.width);
  c.image_channels = count("image_channels", c.image_channels);
  c.keypoints = count("keypoints", c.keypoints);
  c.background_pool = count("background_pool", c.background_pool);
  c.trajectory.frames = count("frames", c.trajectory.frames);
  c.trajectory.azimuth = range("azimuth", c.trajectory.azimuth);
  c.trajectory.elevation = range("elevation", c.trajectory.elevation);
  c.trajectory.distance = range("distance", c.trajectory.distance);
  c.trajectory.d_azimuth = range("d_azimuth", c.trajectory.d_azimuth);
  c.trajectory.d_elevation = range("d_elevation", c.trajectory.d_elevation);
  c.trajectory.d_distance = range("d_distance", c.trajectory.d_distance);
  c.trajectory.focal = kv.get_double("focal", 1.25 * static_cast<double>(c.width));
  c.light_intensity = range("light", c.light_intensity);
  c.ambient = kv.get_double("ambient", c.ambient);
  c.noise = kv.get_double("noise", c.noise);
  c.occluder_prob = kv.get_double("occluder_prob", c.occluder_prob);
  c.visibility_tol = kv.get_double("visibility_tol", c.visibility_tol);
  c.validate();
  return c;
}

namespace {

ObjectModel rotate_z(ObjectModel m, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (auto* list : {&m.vertices, &m.keypoints}) {
    for (auto& p : *list) p = Vec3{c * p.x - s * p.y, s * p.x + c * p.y, p.z};
  }
  return m;
}

ObjectModel translate(ObjectModel m, const Vec3& d) {
  for (auto& p : m.vertices) p = p + d;
  for (auto& p : m.keypoints) p = p + d;
  return m;
}

// Static slab part way along the first camera ray, shifted sideways so it covers part of the car.
ObjectModel make_occluder(Rng& rng, const CameraPose& first) {
  const double along = rng.uniform(0.35, 0.6);
  const double side = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 0.6);
  const double half_width = rng.uniform(0.15, 0.35);
  const double shade = rng.uniform(0.1, 0.9);
  ObjectModel slab = make_box(Vec3{}, Vec3{0.03, half_width, rng.uniform(0.6, 1.0)},
                              {shade, shade, shade, shade, shade, shade});
  slab = rotate_z(std::move(slab), first.azimuth);
  const Vec3 eye = first.position();
  const Vec3 lateral = Vec3{-std::sin(first.azimuth), std::cos(first.azimuth), 0.0};
  return translate(std::move(slab), eye * along + lateral * side);
}

}  // namespace

SequenceSample generate_sequence(const SynthConfig& cfg, const ObjectModel& model,
                                 const std::vector<Tensor<float>>& backgrounds, std::uint64_t seed) {
  if (backgrounds.empty()) throw std::invalid_argument("generate_sequence: empty background pool");
  Rng rng(seed);
  SequenceSample s;
  s.background_id = static_cast<std::size_t>(rng.index(backgrounds.size()));
  const Tensor<float>& bg = backgrounds[s.background_id];
  const Lighting light{normalized(Vec3{0.3, -0.5, -1.0}), cfg.light_intensity.sample(rng), cfg.ambient};
  const double scale = model.scale() > 0 ? model.scale() : 1.0;  // empty model
  const double tol = cfg.visibility_tol * scale;

  // Resample the trajectory until every keypoint stays in front of the camera.
  std::vector<Projection> proj;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100) throw std::runtime_error("generate_sequence: could not find a valid camera trajectory");
    s.poses = sample_trajectory(rng, cfg.trajectory);
    proj.clear();
    try {
      for (const auto& p : s.poses) proj.push_back(project_keypoints(model, p, cfg.height, cfg.width));
      break;
    } catch (const BehindCameraError&) {
    }
  }

  ObjectModel scene = model;
  if (cfg.occluder_prob > 0 && rng.uniform() < cfg.occluder_prob) {
    scene.merge(make_occluder(rng, s.poses.front()), false);
  }

  for (std::size_t t = 0; t < s.poses.size(); ++t) {
    const CameraPose& pose = s.poses[t];
    Tensor<float> img = rasterize_frame(scene, pose, bg, light);
    if (cfg.noise > 0) {
      for (auto& v : img.data()) v = static_cast<float>(v + cfg.noise * rng.uniform(-1.0, 1.0));
    }
    const SurfaceMap surface = render_surface(scene, pose, cfg.height, cfg.width);
    s.labels.push_back(KeypointSet{proj[t].points, visibility(proj[t], surface, tol)});
    s.frames.push_back(std::move(img));
  }
  return s;
}

std::string record_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%06zu.kpsq", index);
  return buf;
}

void DatasetManifest::write(const fs::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + path.string());
  os << "version = " << version << "\nK = " << keypoints << "\nT = " << frames << "\nH = " << height
     << "\nW = " << width << "\nC_img = " << image_channels << "\ncount = " << count << "\nseed = " << seed
     << "\n";
  if (!background_ids.empty()) {
    os << "background_ids = ";
    for (std::size_t i = 0; i < background_ids.size(); ++i) os << (i ? "," : "") << background_ids[i];
    os << "\n";
  }
  if (!os.flush()) throw IoError("failed writing manifest: " + path.string());
}

DatasetManifest DatasetManifest::read(const fs::path& path) {
  const KeyValueConfig kv = KeyValueConfig::load(path);
  for (const char* key : {"version", "K", "T", "H", "W", "C_img", "count", "seed"}) {
    if (!kv.has(key)) throw FormatError("manifest " + path.string() + " lacks key '" + key + "'");
  }
  DatasetManifest m;
  auto sz = [&](const char* key) {
    const long long v = kv.get_int(key, 0);
    if (v <= 0) throw FormatError(std::string("manifest: '") + key + "' must be positive");
    return static_cast<std::size_t>(v);
  };
  m.version = static_cast<std::uint32_t>(sz("version"));
  if (m.version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(m.version));
  m.keypoints = sz("K");
  m.frames = sz("T");
  m.height = sz("H");
  m.width = sz("W");
  m.image_channels = sz("C_img");
  m.count = sz("count");
  m.seed = std::stoull(*kv.get("seed"));
  if (auto ids = kv.get("background_ids")) {
    std::stringstream ss(*ids);
    std::string item;
    while (std::getline(ss, item, ',')) m.background_ids.push_back(std::stoull(item));
  }
  return m;
}

void write_sequence(const fs::path& path, const SequenceSample& s) {
  if (s.frames.empty()) throw std::invalid_argument("write_sequence: empty sequence");
  const Tensor<float>& f0 = s.frames.front();
  require_chw(f0, "write_sequence frame");
  const std::size_t k = s.labels.front().size();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open record for writing: " + path.string());
  io::put_bytes(os, "KPSQ");
  io::put_u32(os, kDatasetVersion);
  for (std::size_t v : {s.frames.size(), k, f0.dim(1), f0.dim(2), f0.dim(0)}) {
    io::put_u32(os, static_cast<std::uint32_t>(v));
  }
  for (std::size_t t = 0; t < s.frames.size(); ++t) {
    require_same_shape(s.frames[t], f0, "write_sequence frames");
    if (s.labels[t].size() != k || s.labels[t].visible.size() != k) {
      throw ShapeError("write_sequence: keypoint count changes within a sequence");
    }
    for (float v : s.frames[t].data()) io::put_f32(os, v);
    for (const auto& p : s.labels[t].points) {
      io::put_f32(os, static_cast<float>(p.u));
      io::put_f32(os, static_cast<float>(p.v));
    }
    for (bool vis : s.labels[t].visible) io::put_u8(os, vis ? 1 : 0);
    const CameraPose& pose = s.poses[t];
    for (double v : {pose.azimuth, pose.elevation, pose.distance, pose.focal}) io::put_f32(os, static_cast<float>(v));
  }
  if (!os.flush()) throw IoError("failed writing record: " + path.string());
}

SequenceSample read_sequence(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open record: " + path.string());
  if (io::get_bytes(is, 4) != "KPSQ") throw FormatError("not a sequence record (bad magic): " + path.string());
  const std::uint32_t version = io::get_u32(is);
  if (version != kDatasetVersion) throw FormatError("unsupported record version " + std::to_string(version));
  const std::size_t t_len = io::get_u32(is), k = io::get_u32(is), h = io::get_u32(is), w = io::get_u32(is),
                    c = io::get_u32(is);
  if (t_len == 0 || k == 0 || h == 0 || w == 0 || c == 0) throw FormatError("record has a zero dimension");
  SequenceSample s;
  for (std::size_t t = 0; t < t_len; ++t) {
    Tensor<float> img(Shape{c, h, w});
    for (auto& v : img.data()) v = io::get_f32(is);
    KeypointSet kps;
    kps.points.resize(k);
    for (auto& p : kps.points) {
      p.u = io::get_f32(is);
      p.v = io::get_f32(is);
    }
    kps.visible.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::uint8_t b = io::get_u8(is);
      if (b > 1) throw FormatError("record visibility flag must be 0 or 1");
      kps.visible[i] = b == 1;
    }
    CameraPose pose;
    pose.azimuth = io::get_f32(is);
    pose.elevation = io::get_f32(is);
    pose.distance = io::get_f32(is);
    pose.focal = io::get_f32(is);
    s.frames.push_back(std::move(img));
    s.labels.push_back(std::move(kps));
    s.poses.push_back(pose);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in record: " + path.string());
  return s;
}

DatasetManifest generate_dataset(const SynthConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create dataset directory: " + dir.string());

  std::vector<ObjectModel> models;
  for (std::size_t m = 0; m < cfg.models; ++m) {
    Rng rng(derive_seed(derive_seed(seed, 1), m));
    models.push_back(make_car(rng, cfg.keypoints));
  }
  std::vector<Tensor<float>> backgrounds;
  for (std::size_t b = 0; b < cfg.background_pool; ++b) {
    Rng rng(derive_seed(derive_seed(seed, 3), b));
    backgrounds.push_back(make_background(rng, cfg.image_channels, cfg.height, cfg.width));
  }

  const std::size_t n = cfg.sequence_count();
  std::vector<std::size_t> bg_ids(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      SequenceSample s = generate_sequence(cfg, models[i / cfg.seqs_per_model], backgrounds,
                                           derive_seed(derive_seed(seed, 2), i));
      s.model_id = i / cfg.seqs_per_model;
      bg_ids[i] = s.background_id;
      write_sequence(dir / record_name(i), s);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  DatasetManifest m;
  m.keypoints = cfg.keypoints;
  m.frames = cfg.trajectory.frames;
  m.height = cfg.height;
  m.width = cfg.width;
  m.image_channels = cfg.image_channels;
  m.count = n;
  m.seed = seed;
  m.background_ids = std::move(bg_ids);
  m.write(dir / "manifest.txt");
  return m;
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset d;
  d.manifest = DatasetManifest::read(dir / "manifest.txt");
  d.sequences.resize(d.manifest.count);
  std::vector<std::exception_ptr> errors(d.manifest.count);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < d.manifest.count; ++i) {
    try {
      d.sequences[i] = read_sequence(dir / record_name(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const auto& m = d.manifest;
  for (std::size_t i = 0; i < m.count; ++i) {
    auto& s = d.sequences[i];
    const auto& f = s.frames.front();
    if (s.length() != m.frames || s.labels.front().size() != m.keypoints || f.dim(0) != m.image_channels ||
        f.dim(1) != m.height || f.dim(2) != m.width) {
      throw FormatError("record " + record_name(i) + " disagrees with the manifest");
    }
    if (i < m.background_ids.size()) s.background_id = m.background_ids[i];
  }
  return d;
}

}  // namespace hgru
