#include "hgru/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hgru {

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return n > 0 ? a * (1.0 / n) : a;
}

double ObjectModel::scale() const {
  double r = 0;
  for (const auto& v : vertices) r = std::max(r, norm(v));
  return r;
}

void ObjectModel::merge(const ObjectModel& other, bool with_keypoints) {
  const std::size_t base = vertices.size();
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (Face f : other.faces) {
    for (auto& i : f.v) i += base;
    faces.push_back(f);
  }
  if (with_keypoints) {
    const std::size_t kbase = keypoints.size();
    keypoints.insert(keypoints.end(), other.keypoints.begin(), other.keypoints.end());
    for (auto [a, b] : other.edges) edges.emplace_back(a + kbase, b + kbase);
  }
}

ObjectModel make_box(const Vec3& center, const Vec3& half_extent, const std::array<double, 6>& albedo) {
  ObjectModel m;
  for (int ix = 0; ix < 2; ++ix) {
    for (int iy = 0; iy < 2; ++iy) {
      for (int iz = 0; iz < 2; ++iz) {
        m.vertices.push_back(center + Vec3{(2 * ix - 1) * half_extent.x, (2 * iy - 1) * half_extent.y,
                                           (2 * iz - 1) * half_extent.z});
      }
    }
  }
  m.keypoints = m.vertices;
  auto corner = [](int ix, int iy, int iz) { return static_cast<std::size_t>(ix * 4 + iy * 2 + iz); };

  // Quads as (axis, side); the two free axes walk a cycle so the quad is not self-crossing.
  const int cyc[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      std::array<std::size_t, 4> q{};
      for (int i = 0; i < 4; ++i) {
        int c[3];
        c[axis] = side;
        c[(axis + 1) % 3] = cyc[i][0];
        c[(axis + 2) % 3] = cyc[i][1];
        q[i] = corner(c[0], c[1], c[2]);
      }
      Vec3 outward{};
      (axis == 0 ? outward.x : axis == 1 ? outward.y : outward.z) = side ? 1.0 : -1.0;
      const Vec3 n = cross(m.vertices[q[1]] - m.vertices[q[0]], m.vertices[q[2]] - m.vertices[q[0]]);
      if (dot(n, outward) < 0) std::swap(q[1], q[3]);
      const double a = albedo[static_cast<std::size_t>(axis * 2 + side)];
      m.faces.push_back(Face{{q[0], q[1], q[2]}, a});
      m.faces.push_back(Face{{q[0], q[2], q[3]}, a});
    }
  }
  for (int a = 0; a < 8; ++a) {
    for (int b = a + 1; b < 8; ++b) {
      const int diff = a ^ b;
      if (diff == 1 || diff == 2 || diff == 4) m.edges.emplace_back(a, b);
    }
  }
  return m;
}

ObjectModel make_car(Rng& rng, std::size_t keypoints) {
  if (keypoints != 8 && keypoints != 16) {
    throw std::invalid_argument("make_car: keypoint count must be 8 or 16, got " + std::to_string(keypoints));
  }
  auto jitter = [&](double a) { return std::clamp(a + rng.uniform(-0.05, 0.05), 0.02, 0.98); };
  const Vec3 body_half{rng.uniform(0.8, 1.1), rng.uniform(0.38, 0.5), rng.uniform(0.2, 0.3)};
  const Vec3 body_center{0.0, 0.0, -0.1};
  ObjectModel car = make_box(body_center, body_half,
                             {jitter(0.3), jitter(0.85), jitter(0.55), jitter(0.68), jitter(0.15), jitter(0.75)});

  const Vec3 cabin_half{body_half.x * rng.uniform(0.45, 0.6), body_half.y * rng.uniform(0.75, 0.9),
                        rng.uniform(0.15, 0.22)};
  const Vec3 cabin_center{-body_half.x * rng.uniform(0.1, 0.3), 0.0, body_center.z + body_half.z + cabin_half.z};
  const ObjectModel cabin = make_box(
      cabin_center, cabin_half, {jitter(0.45), jitter(0.2), jitter(0.35), jitter(0.42), jitter(0.15), jitter(0.6)});
  car.merge(cabin, keypoints == 16);
  return car;
}

Vec3 CameraPose::position() const {
  return Vec3{std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth), std::sin(elevation)} *
         distance;
}

Vec3 CameraPose::to_camera(const Vec3& p) const {
  const Vec3 eye = position();
  const Vec3 forward = normalized(eye * -1.0);
  const Vec3 right = normalized(cross(forward, Vec3{0, 0, 1}));
  const Vec3 down = cross(forward, right);
  const Vec3 q = p - eye;
  return {dot(q, right), dot(q, down), dot(q, forward)};
}

void TrajectoryConfig::validate() const {
  if (frames == 0) throw std::invalid_argument("trajectory: frame count must be positive");
  for (const Range* r : {&azimuth, &elevation, &distance, &d_azimuth, &d_elevation, &d_distance}) {
    if (!(r->lo <= r->hi)) throw std::invalid_argument("trajectory: empty sampling range");
  }
  if (distance.lo <= 0) throw std::invalid_argument("trajectory: distance must be positive");
  if (elevation.lo <= -1.5 || elevation.hi >= 1.5) throw std::invalid_argument("trajectory: elevation too steep");
  if (!(focal > 0)) throw std::invalid_argument("trajectory: focal length must be positive");
}

std::vector<CameraPose> sample_trajectory(Rng& rng, const TrajectoryConfig& cfg) {
  cfg.validate();
  const CameraPose start{cfg.azimuth.sample(rng), cfg.elevation.sample(rng), cfg.distance.sample(rng), cfg.focal};
  const double daz = cfg.d_azimuth.sample(rng);
  const double del = cfg.d_elevation.sample(rng);
  const double ddist = cfg.d_distance.sample(rng);
  std::vector<CameraPose> poses;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const double s = static_cast<double>(t);
    poses.push_back(CameraPose{start.azimuth + s * daz, start.elevation + s * del, start.distance + s * ddist,
                               cfg.focal});
  }
  return poses;
}

Projection project_keypoints(const ObjectModel& model, const CameraPose& pose, std::size_t height,
                             std::size_t width) {
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  Projection out;
  for (const auto& kp : model.keypoints) {
    const Vec3 c = pose.to_camera(kp);
    if (c.z <= kNearPlane) throw BehindCameraError("keypoint at or behind the camera plane");
    out.points.push_back(Point2{pose.focal * c.x / c.z + cx, pose.focal * c.y / c.z + cy});
    out.depths.push_back(c.z);
  }
  return out;
}

namespace {

struct Raster {
  std::vector<double> depth;
  std::vector<int> face;
  std::vector<double> shade_cos;  // n . to_light per face, camera frame
  std::vector<InverseDepthPlane> planes;
};

Raster rasterize(const ObjectModel& model, const CameraPose& pose, std::size_t height, std::size_t width,
                 const Vec3& to_light) {
  Raster r;
  r.depth.assign(height * width, kBackgroundDepth);
  r.face.assign(height * width, -1);
  r.shade_cos.assign(model.faces.size(), 0.0);
  r.planes.assign(model.faces.size(), InverseDepthPlane{});
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;

  std::vector<Vec3> cam(model.vertices.size());
  for (std::size_t i = 0; i < cam.size(); ++i) cam[i] = pose.to_camera(model.vertices[i]);
  const Vec3 light = normalized(to_light);

  for (std::size_t fi = 0; fi < model.faces.size(); ++fi) {
    const auto& f = model.faces[fi];
    const Vec3 a = cam[f.v[0]], b = cam[f.v[1]], c = cam[f.v[2]];
    if (a.z <= kNearPlane || b.z <= kNearPlane || c.z <= kNearPlane) continue;
    r.shade_cos[fi] = dot(normalized(cross(b - a, c - a)), light);

    const double ua = pose.focal * a.x / a.z + cx, va = pose.focal * a.y / a.z + cy;
    const double ub = pose.focal * b.x / b.z + cx, vb = pose.focal * b.y / b.z + cy;
    const double uc = pose.focal * c.x / c.z + cx, vc = pose.focal * c.y / c.z + cy;
    const double area = (ub - ua) * (vc - va) - (vb - va) * (uc - ua);
    if (std::abs(area) < 1e-12) continue;

    const double umin = std::max(0.0, std::ceil(std::min({ua, ub, uc})));
    const double umax = std::min(static_cast<double>(width) - 1.0, std::floor(std::max({ua, ub, uc})));
    const double vmin = std::max(0.0, std::ceil(std::min({va, vb, vc})));
    const double vmax = std::min(static_cast<double>(height) - 1.0, std::floor(std::max({va, vb, vc})));
    if (umin > umax || vmin > vmax) continue;

    const double inv_area = 1.0 / area;
    {
      // Barycentrics are affine in (u,v), so 1/Z is too.
      const double ia = 1.0 / a.z, ib = 1.0 / b.z, ic = 1.0 / c.z;
      InverseDepthPlane& pl = r.planes[fi];
      pl.a = ((vb - vc) * ia + (vc - va) * ib + (va - vb) * ic) * inv_area;
      pl.b = ((uc - ub) * ia + (ua - uc) * ib + (ub - ua) * ic) * inv_area;
      pl.c = ((ub * vc - uc * vb) * ia + (uc * va - ua * vc) * ib + (ua * vb - ub * va) * ic) * inv_area;
    }
    for (auto y = static_cast<std::size_t>(vmin); y <= static_cast<std::size_t>(vmax); ++y) {
      const double py = static_cast<double>(y);
      for (auto x = static_cast<std::size_t>(umin); x <= static_cast<std::size_t>(umax); ++x) {
        const double px = static_cast<double>(x);
        const double w0 = ((ub - px) * (vc - py) - (vb - py) * (uc - px)) * inv_area;
        const double w1 = ((uc - px) * (va - py) - (vc - py) * (ua - px)) * inv_area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double z = 1.0 / (w0 / a.z + w1 / b.z + w2 / c.z);
        const std::size_t idx = y * width + x;
        if (z < r.depth[idx]) {
          r.depth[idx] = z;
          r.face[idx] = static_cast<int>(fi);
        }
      }
    }
  }
  return r;
}

}  // namespace

Tensor<double> render_depth(const ObjectModel& model, const CameraPose& pose, std::size_t height,
                            std::size_t width) {
  Raster r = rasterize(model, pose, height, width, Vec3{0, 0, -1});
  return Tensor<double>(Shape{1, height, width}, std::move(r.depth));
}

SurfaceMap render_surface(const ObjectModel& model, const CameraPose& pose, std::size_t height, std::size_t width) {
  Raster r = rasterize(model, pose, height, width, Vec3{0, 0, -1});
  return SurfaceMap{Tensor<double>(Shape{1, height, width}, std::move(r.depth)), std::move(r.face),
                    std::move(r.planes)};
}

std::vector<bool> visibility(const Projection& proj, const SurfaceMap& surface, double tol) {
  if (!(tol > 0)) throw std::invalid_argument("visibility: tolerance must be positive");
  const Tensor<double>& depth = surface.depth;
  require_chw(depth, "visibility depth image");
  const auto h = static_cast<long long>(depth.dim(1)), w = static_cast<long long>(depth.dim(2));
  std::vector<bool> out(proj.points.size(), false);
  for (std::size_t k = 0; k < proj.points.size(); ++k) {
    const auto [u, v] = proj.points[k];
    const auto x = static_cast<long long>(std::floor(u + 0.5));
    const auto y = static_cast<long long>(std::floor(v + 0.5));
    if (x < 0 || y < 0 || x >= w || y >= h) continue;
    const auto idx = static_cast<std::size_t>(y * w + x);
    const int f = surface.face[idx];
    if (f < 0) {
      out[k] = true;
      continue;
    }
    const double inv = surface.planes[static_cast<std::size_t>(f)].inverse_depth(u, v);
    const double d = inv > 0 ? 1.0 / inv : depth[idx];
    out[k] = proj.depths[k] <= d + tol;
  }
  return out;
}

std::vector<bool> visibility(const Projection& proj, const Tensor<double>& depth, double tol) {
  if (!(tol > 0)) throw std::invalid_argument("visibility: tolerance must be positive");
  require_chw(depth, "visibility depth image");
  const auto h = static_cast<long long>(depth.dim(1)), w = static_cast<long long>(depth.dim(2));
  std::vector<bool> out(proj.points.size(), false);
  for (std::size_t k = 0; k < proj.points.size(); ++k) {
    const auto x = static_cast<long long>(std::floor(proj.points[k].u + 0.5));
    const auto y = static_cast<long long>(std::floor(proj.points[k].v + 0.5));
    if (x < 0 || y < 0 || x >= w || y >= h) continue;
    out[k] = proj.depths[k] <= depth.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) + tol;
  }
  return out;
}

Tensor<float> rasterize_frame(const ObjectModel& model, const CameraPose& pose, const Tensor<float>& background,
                              const Lighting& light) {
  require_chw(background, "rasterize_frame background");
  const std::size_t c = background.dim(0), h = background.dim(1), w = background.dim(2);
  const Raster r = rasterize(model, pose, h, w, light.to_light);
  Tensor<float> out = background;
  for (std::size_t i = 0; i < h * w; ++i) {
    const int f = r.face[i];
    if (f < 0) continue;
    const double lambert = std::max(0.0, r.shade_cos[static_cast<std::size_t>(f)]);
    const double shade = model.faces[static_cast<std::size_t>(f)].albedo *
                         (light.ambient + (1.0 - light.ambient) * light.intensity * lambert);
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * h * w + i] = static_cast<float>(shade);
  }
  return out;
}

Tensor<float> make_background(Rng& rng, std::size_t channels, std::size_t height, std::size_t width) {
  constexpr std::size_t kGrid = 5;
  Tensor<float> out(Shape{channels, height, width});
  for (std::size_t ch = 0; ch < channels; ++ch) {
    double grid[kGrid][kGrid];
    for (auto& row : grid) {
      for (auto& g : row) g = rng.uniform();
    }
    const double fx = rng.uniform(0.5, 3.0), fy = rng.uniform(0.5, 3.0), phase = rng.uniform(0.0, 6.283185307179586);
    const double amp = rng.uniform(0.0, 0.3);
    std::vector<double> vals(height * width);
    for (std::size_t y = 0; y < height; ++y) {
      const double gy = static_cast<double>(y) / static_cast<double>(std::max<std::size_t>(height - 1, 1)) * (kGrid - 1);
      const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kGrid - 2);
      const double ty = gy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double gx = static_cast<double>(x) / static_cast<double>(std::max<std::size_t>(width - 1, 1)) * (kGrid - 1);
        const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kGrid - 2);
        const double tx = gx - static_cast<double>(x0);
        const double smooth = (1 - ty) * ((1 - tx) * grid[y0][x0] + tx * grid[y0][x0 + 1]) +
                              ty * ((1 - tx) * grid[y0 + 1][x0] + tx * grid[y0 + 1][x0 + 1]);
        const double wave = amp * std::sin(fx * gx + fy * gy + phase);
        vals[y * width + x] = smooth + wave;
      }
    }
    const auto [mn, mx] = std::minmax_element(vals.begin(), vals.end());
    const double lo = *mn, span = std::max(*mx - *mn, 1e-9);
    const double out_lo = rng.uniform(0.05, 0.4), out_hi = rng.uniform(0.6, 0.95);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      out[ch * height * width + i] = static_cast<float>(out_lo + (out_hi - out_lo) * (vals[i] - lo) / span);
    }
  }
  return out;
}

}  // namespace hgru
