#pragma once

// Procedural stand-in for a CAD rendering pipeline: car-like hulls with annotated 3D keypoints,
// constant-velocity orbiting cameras, a z-buffered flat-shaded rasterizer, and depth-based
// keypoint visibility.
//
// Conventions: object frame is z-up with the object at the origin. The camera sits at
// distance * (cos el cos az, cos el sin az, sin el) and looks at the origin; camera axes are
// (right, down, forward). Pixel centres are at integer coordinates and the principal point is
// the image centre ((W-1)/2, (H-1)/2). Depth means camera-frame Z.

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hgru/metrics.hpp"
#include "hgru/random.hpp"
#include "hgru/tensor.hpp"

namespace hgru {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  bool operator==(const Vec3&) const = default;
};

double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& a);
Vec3 normalized(const Vec3& a);

struct Face {
  std::array<std::size_t, 3> v;  // counter-clockwise seen from outside
  double albedo = 0.5;
};

struct ObjectModel {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Vec3> keypoints;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // wireframe, keypoint indices

  /// Radius of the bounding sphere about the origin.
  double scale() const;
  /// Appends another model's geometry; keypoints and edges are only taken when `with_keypoints`.
  void merge(const ObjectModel& other, bool with_keypoints);
};

/// Axis-aligned box with 12 outward-facing triangles and its 8 corners as keypoints, ordered
/// by (x-, x+) x (y-, y+) x (z-, z+) with x slowest. `albedo` is per face: -x, +x, -y, +y, -z, +z.
ObjectModel make_box(const Vec3& center, const Vec3& half_extent, const std::array<double, 6>& albedo);

/// Car-like hull: a body box plus an offset cabin box. K = 8 (body corners) or 16 (plus cabin).
ObjectModel make_car(Rng& rng, std::size_t keypoints);

struct CameraPose {
  double azimuth = 0;    // radians
  double elevation = 0;  // radians
  double distance = 4;
  double focal = 40;     // pixels

  Vec3 position() const;
  /// World point -> camera frame (right, down, forward).
  Vec3 to_camera(const Vec3& p) const;
};

struct Range {
  double lo = 0, hi = 0;
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
};

struct TrajectoryConfig {
  std::size_t frames = 4;
  Range azimuth{0.0, 6.283185307179586};
  Range elevation{0.0, 0.5235987755982988};
  Range distance{4.0, 5.0};
  Range d_azimuth{-0.15, 0.15};
  Range d_elevation{0.0, 0.0};
  Range d_distance{0.0, 0.0};
  double focal = 40.0;

  void validate() const;
};

/// Initial pose uniform over the ranges, then one increment drawn once and added every frame.
std::vector<CameraPose> sample_trajectory(Rng& rng, const TrajectoryConfig& cfg);

/// Raised when a keypoint lies at or behind the camera plane; callers resample the pose.
class BehindCameraError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Projection {
  std::vector<Point2> points;
  std::vector<double> depths;
};

inline constexpr double kNearPlane = 1e-6;

Projection project_keypoints(const ObjectModel& model, const CameraPose& pose, std::size_t height,
                             std::size_t width);

inline constexpr double kBackgroundDepth = std::numeric_limits<double>::infinity();

/// [1,H,W] nearest camera-frame depth per pixel; kBackgroundDepth where nothing is drawn.
Tensor<double> render_depth(const ObjectModel& model, const CameraPose& pose, std::size_t height,
                            std::size_t width);

/// Visible iff the rounded projection is inside the image and depth <= depth_image + tol.
std::vector<bool> visibility(const Projection& proj, const Tensor<double>& depth, double tol);

/// 1/Z = a*u + b*v + c over a triangle's screen plane.
struct InverseDepthPlane {
  double a = 0, b = 0, c = 0;
  double inverse_depth(double u, double v) const { return a * u + b * v + c; }
};

/// Depth image plus, per pixel, the winning face (-1 for background) and per-face depth planes.
struct SurfaceMap {
  Tensor<double> depth;
  std::vector<int> face;
  std::vector<InverseDepthPlane> planes;
};

SurfaceMap render_surface(const ObjectModel& model, const CameraPose& pose, std::size_t height, std::size_t width);

/// Same pixel lookup as the depth-image overload, but the comparison depth is the covering face's
/// plane evaluated at the keypoint's exact sub-pixel position instead of at the pixel centre.
std::vector<bool> visibility(const Projection& proj, const SurfaceMap& surface, double tol);

struct Lighting {
  Vec3 to_light{0.0, 0.0, -1.0};  // camera frame, pointing from the surface towards the light
  double intensity = 1.0;
  double ambient = 0.0;
};

/// Flat-shaded z-buffered rendering composited over `background` ([C,H,W]). A face's shade is
/// albedo * (ambient + (1 - ambient) * intensity * max(0, n . l)).
Tensor<float> rasterize_frame(const ObjectModel& model, const CameraPose& pose, const Tensor<float>& background,
                              const Lighting& light = {});

/// Smooth procedural background with values in [0.05, 0.95].
Tensor<float> make_background(Rng& rng, std::size_t channels, std::size_t height, std::size_t width);

}  // namespace hgru
