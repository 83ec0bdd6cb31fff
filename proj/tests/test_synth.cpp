#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hgru/synth.hpp"
#include "oracles.hpp"

using namespace hgru;

namespace {

// square in the plane x = x0 spanning y,z in [-s,s], wound to face +x
ObjectModel square(double x0, double s, double albedo = 0.5) {
  ObjectModel m;
  m.vertices = {{x0, -s, -s}, {x0, s, -s}, {x0, s, s}, {x0, -s, s}};
  m.faces = {{{0, 1, 2}, albedo}, {{0, 2, 3}, albedo}};
  return m;
}

const CameraPose kFront{0.0, 0.0, 4.0, 40.0};  // eye at (4,0,0) looking down -x

}  // namespace

TEST(Trajectory, StaticCamera) {
  Rng rng(1);
  TrajectoryConfig cfg;
  cfg.d_azimuth = {0, 0};
  auto p = sample_trajectory(rng, cfg);
  ASSERT_EQ(p.size(), 4u);
  for (const auto& q : p) {
    EXPECT_EQ(q.azimuth, p[0].azimuth);
    EXPECT_EQ(q.elevation, p[0].elevation);
    EXPECT_EQ(q.distance, p[0].distance);
  }
}

TEST(Trajectory, ArithmeticAzimuth) {
  Rng rng(2);
  TrajectoryConfig cfg;
  cfg.d_azimuth = {0.1, 0.1};
  auto p = sample_trajectory(rng, cfg);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(p[t].azimuth, p[0].azimuth + 0.1 * t, 1e-12);
}

TEST(Trajectory, InitialAzimuthMean) {
  Rng rng(3);
  TrajectoryConfig cfg;
  cfg.frames = 1;
  const int n = 1000;
  double s = 0;
  for (int i = 0; i < n; ++i) s += sample_trajectory(rng, cfg)[0].azimuth;
  const double se = 2 * std::numbers::pi / std::sqrt(12.0) / std::sqrt(static_cast<double>(n));
  EXPECT_LT(std::abs(s / n - std::numbers::pi), 3 * se);
}

TEST(Trajectory, RejectsEmptyRange) {
  Rng rng(4);
  TrajectoryConfig cfg;
  cfg.distance = {5, 4};
  EXPECT_THROW(sample_trajectory(rng, cfg), std::invalid_argument);
  cfg = {};
  cfg.frames = 0;
  EXPECT_THROW(sample_trajectory(rng, cfg), std::invalid_argument);
}

TEST(Projection, OpticalAxisAndScaling) {
  ObjectModel m;
  m.keypoints = {{0, 0, 0}, {0, 0.3, 0.2}};
  for (double d : {3.0, 7.5}) {
    auto p = project_keypoints(m, CameraPose{0.4, 0.2, d, 40}, 32, 48);
    EXPECT_NEAR(p.points[0].u, 23.5, 1e-12);
    EXPECT_NEAR(p.points[0].v, 15.5, 1e-12);
    EXPECT_NEAR(p.depths[0], d, 1e-12);
  }
  // a point in the plane through the origin facing the camera: offset scales as 1/distance
  auto a = project_keypoints(m, CameraPose{0, 0, 4, 40}, 32, 32);
  auto b = project_keypoints(m, CameraPose{0, 0, 8, 40}, 32, 32);
  EXPECT_NEAR(b.points[1].u - 15.5, (a.points[1].u - 15.5) / 2, 1e-12);
  EXPECT_NEAR(b.points[1].v - 15.5, (a.points[1].v - 15.5) / 2, 1e-12);
}

TEST(Projection, MatchesHomogeneousMatrices) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto m = make_car(rng, i % 2 ? 16 : 8);
    CameraPose pose{rng.uniform(0, 6.28), rng.uniform(-0.6, 0.6), rng.uniform(3, 6), rng.uniform(20, 90)};
    auto p = project_keypoints(m, pose, 32, 40);
    auto q = oracle::matrix_projection(m.keypoints, pose, 32, 40);
    for (std::size_t k = 0; k < q.size(); ++k) {
      EXPECT_NEAR(p.points[k].u, q[k].u, 1e-9);
      EXPECT_NEAR(p.points[k].v, q[k].v, 1e-9);
    }
  }
}

TEST(Projection, RejectsBehindCamera) {
  ObjectModel m;
  m.keypoints = {{10, 0, 0}};
  EXPECT_THROW(project_keypoints(m, kFront, 16, 16), BehindCameraError);
}

TEST(Depth, FrontSquareEmptyAndNearer) {
  auto d = render_depth(square(0, 0.5), kFront, 16, 16);
  std::size_t covered = 0;
  for (auto v : d.data())
    if (v != kBackgroundDepth) {
      EXPECT_NEAR(v, 4.0, 1e-12);
      ++covered;
    }
  EXPECT_GT(covered, 0u);

  auto e = render_depth(ObjectModel{}, kFront, 8, 8);
  for (auto v : e.data()) EXPECT_EQ(v, kBackgroundDepth);

  auto two = square(0, 0.5);
  two.merge(square(1, 0.3), false);
  auto dd = render_depth(two, kFront, 16, 16);
  std::size_t near = 0;
  for (auto v : dd.data())
    if (v != kBackgroundDepth) {
      EXPECT_TRUE(std::abs(v - 3.0) < 1e-12 || std::abs(v - 4.0) < 1e-12);
      near += std::abs(v - 3.0) < 1e-12;
    }
  EXPECT_GT(near, 0u);
  // wherever the near square covers, the far one must not win
  auto only_near = render_depth(square(1, 0.3), kFront, 16, 16);
  for (std::size_t i = 0; i < dd.size(); ++i)
    if (only_near[i] != kBackgroundDepth) EXPECT_NEAR(dd[i], 3.0, 1e-12);
}

TEST(Depth, DegenerateTriangleSkipped) {
  ObjectModel m;
  m.vertices = {{0, 0, 0}, {0, 0.5, 0}, {0, 1, 0}};
  m.faces = {{{0, 1, 2}, 0.5}};
  const auto depth = render_depth(m, kFront, 8, 8);
  for (auto v : depth.data()) EXPECT_EQ(v, kBackgroundDepth);
}

TEST(Visibility, FrontFaceAndOccluded) {
  const std::array<double, 6> g{.5, .5, .5, .5, .5, .5};
  auto box = make_box({0, 0, 0}, {0.5, 0.5, 0.5}, g);
  auto proj = project_keypoints(box, kFront, 32, 32);
  auto vis = visibility(proj, render_depth(box, kFront, 32, 32), 1e-3);
  auto vis2 = visibility(proj, render_surface(box, kFront, 32, 32), 1e-3);
  // corners are x slowest: indices 4..7 have x = +0.5 (front), 0..3 are behind the box
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(vis2[k], k >= 4) << k;
    if (k < 4) EXPECT_FALSE(vis[k]);
  }
  EXPECT_THROW(visibility(proj, render_depth(box, kFront, 32, 32), 0.0), std::invalid_argument);
}

TEST(Visibility, OutOfImageIsHidden) {
  ObjectModel m = square(0, 0.2);
  m.keypoints = {{0, 3.0, 0}};
  auto proj = project_keypoints(m, kFront, 16, 16);
  EXPECT_FALSE(visibility(proj, render_surface(m, kFront, 16, 16), 1e-3)[0]);
}

TEST(Visibility, AgreesWithRayCasting) {
  Rng rng(6);
  std::size_t agree = 0, total = 0;
  for (int s = 0; s < 100; ++s) {
    auto m = oracle::random_cuboid_scene(rng);
    auto pose = oracle::random_pose(rng, 128);
    auto proj = project_keypoints(m, pose, 128, 128);
    auto v = visibility(proj, render_surface(m, pose, 128, 128), 1e-3 * m.scale());
    auto o = oracle::ray_cast_visibility(m, pose, proj, 128, 128);
    for (std::size_t k = 0; k < v.size(); ++k) agree += v[k] == o[k];
    total += v.size();
  }
  EXPECT_GE(static_cast<double>(agree) / total, 0.99);
}

TEST(Raster, EmptyModelAndFlatSquare) {
  Rng rng(7);
  auto bg = make_background(rng, 1, 16, 16);
  EXPECT_EQ(rasterize_frame(ObjectModel{}, kFront, bg), bg);
  for (auto v : bg.data()) {
    EXPECT_GE(v, 0.05f);
    EXPECT_LE(v, 0.95f);
  }
  auto img = rasterize_frame(square(0, 5.0, 0.7), kFront, bg, Lighting{{0, 0, -1}, 1.0, 0.0});
  for (auto v : img.data()) EXPECT_NEAR(v, 0.7f, 1e-6f);
}

TEST(Raster, DeterministicAndBackgroundPreserved) {
  Rng a(8), b(8);
  auto ma = make_car(a, 8), mb = make_car(b, 8);
  auto bga = make_background(a, 1, 32, 32), bgb = make_background(b, 1, 32, 32);
  CameraPose pose{0.7, 0.3, 4.5, 40};
  auto fa = rasterize_frame(ma, pose, bga), fb = rasterize_frame(mb, pose, bgb);
  EXPECT_EQ(fa, fb);
  auto depth = render_depth(ma, pose, 32, 32);
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (depth[i] == kBackgroundDepth) EXPECT_EQ(fa[i], bga[i]);
}

TEST(Models, CarKeypointsInsideHull) {
  Rng rng(9);
  for (std::size_t k : {8u, 16u}) {
    auto m = make_car(rng, k);
    EXPECT_EQ(m.keypoints.size(), k);
    double lo[3] = {1e9, 1e9, 1e9}, hi[3] = {-1e9, -1e9, -1e9};
    for (const auto& v : m.vertices) {
      lo[0] = std::min(lo[0], v.x), hi[0] = std::max(hi[0], v.x);
      lo[1] = std::min(lo[1], v.y), hi[1] = std::max(hi[1], v.y);
      lo[2] = std::min(lo[2], v.z), hi[2] = std::max(hi[2], v.z);
    }
    for (const auto& p : m.keypoints) {
      EXPECT_TRUE(p.x >= lo[0] && p.x <= hi[0] && p.y >= lo[1] && p.y <= hi[1] && p.z >= lo[2] && p.z <= hi[2]);
    }
    for (auto [a, b] : m.edges) EXPECT_TRUE(a < k && b < k);
  }
  EXPECT_THROW(make_car(rng, 36), std::invalid_argument);
}

TEST(Motion, SmoothDisplacement) {
  Rng rng(10);
  auto m = make_car(rng, 8);
  for (int rep = 0; rep < 50; ++rep) {
    TrajectoryConfig cfg;
    cfg.frames = 6;
    cfg.d_azimuth = {0.05, 0.15};
    auto poses = sample_trajectory(rng, cfg);
    std::vector<double> disp;
    auto prev = project_keypoints(m, poses[0], 32, 32);
    for (std::size_t t = 1; t < poses.size(); ++t) {
      auto cur = project_keypoints(m, poses[t], 32, 32);
      double s = 0;
      for (std::size_t k = 0; k < 8; ++k) s += std::hypot(cur.points[k].u - prev.points[k].u, cur.points[k].v - prev.points[k].v);
      disp.push_back(s / 8);
      prev = cur;
    }
    auto sorted = disp;
    std::sort(sorted.begin(), sorted.end());
    const double med = sorted[sorted.size() / 2];
    for (double d : disp) EXPECT_LE(d, 3 * med);
  }
}
