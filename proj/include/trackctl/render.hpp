#pragma once

// Analytic ray-cast depth rendering with a surface-id buffer, and the g x g
// point-grid initialization that back-projects first-frame pixels into
// camera-frame 3D points.

#include "trackctl/camera.hpp"
#include "trackctl/scene.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace trackctl {

// Surface-id codes written into the id buffer.
constexpr std::int32_t kIdNone = -1;  // no hit within max_depth
constexpr std::int32_t kIdTable = 0;
constexpr std::int32_t kIdDecor = 1;  // static background geometry
constexpr std::int32_t kIdObjectBase = 100;
constexpr std::int32_t kIdLinkBase = 200;

struct RenderItem {
  ShapeKind kind = ShapeKind::box;
  Vector3d half_extents = Vector3d::Zero();
  double radius = 0.0;
  kin::RigidTransform pose;  // body -> world
  std::int32_t id = kIdDecor;
};

struct RenderScene {
  double table_height = 0.0;
  double max_depth = 2.5;
  std::vector<RenderItem> items;
};

struct DepthImage {
  int width = 0, height = 0;
  std::vector<float> depth;      // z-depth in meters, 0 where no hit
  std::vector<std::int32_t> id;  // kIdNone where no hit

  float at(int u, int v) const { return depth[std::size_t(v) * width + u]; }
  std::int32_t id_at(int u, int v) const { return id[std::size_t(v) * width + u]; }
};

namespace detail {

// Ray parameter s is camera z-depth (dir is the unit-z pixel ray).
inline bool ray_box(const Vector3d& o, const Vector3d& d, const RenderItem& it, double s_min,
                    double s_max, double& s_hit) {
  kin::RigidTransform inv = it.pose.inverse();
  Vector3d ob = inv.R * o + inv.t;
  Vector3d db = inv.R * d;
  double lo = s_min, hi = s_max;
  for (int a = 0; a < 3; ++a) {
    double h = it.half_extents[a];
    if (std::abs(db[a]) < 1e-12) {
      if (ob[a] < -h || ob[a] > h) return false;
      continue;
    }
    double t0 = (-h - ob[a]) / db[a];
    double t1 = (h - ob[a]) / db[a];
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
    if (lo > hi) return false;
  }
  s_hit = lo;
  return true;
}

inline bool ray_sphere(const Vector3d& o, const Vector3d& d, const RenderItem& it, double s_min,
                       double s_max, double& s_hit) {
  Vector3d oc = o - it.pose.t;
  double a = d.squaredNorm();
  double b = 2.0 * oc.dot(d);
  double c = oc.squaredNorm() - it.radius * it.radius;
  double disc = b * b - 4 * a * c;
  if (disc < 0) return false;
  double sq = std::sqrt(disc);
  double t0 = (-b - sq) / (2 * a);
  double t1 = (-b + sq) / (2 * a);
  double s = t0 >= s_min ? t0 : t1;
  if (s < s_min || s > s_max) return false;
  s_hit = s;
  return true;
}

}  // namespace detail

inline DepthImage render_depth(const RenderScene& scene, const CameraModel& cam) {
  cam.validate();
  DepthImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.depth.assign(std::size_t(cam.width) * cam.height, 0.0f);
  img.id.assign(std::size_t(cam.width) * cam.height, kIdNone);

  const double s_min = 1e-4;
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      Vector3d o, d;
      cam.pixel_ray_world(u, v, o, d);
      double best = scene.max_depth;
      std::int32_t best_id = kIdNone;
      // table plane z = h
      if (std::abs(d.z()) > 1e-12) {
        double s = (scene.table_height - o.z()) / d.z();
        if (s > s_min && s < best) {
          best = s;
          best_id = kIdTable;
        }
      }
      for (const auto& it : scene.items) {
        double s;
        bool hit = it.kind == ShapeKind::box ? detail::ray_box(o, d, it, s_min, best, s)
                                             : detail::ray_sphere(o, d, it, s_min, best, s);
        if (hit && s < best) {
          best = s;
          best_id = it.id;
        }
      }
      if (best_id != kIdNone) {
        img.depth[std::size_t(v) * cam.width + u] = float(best);
        img.id[std::size_t(v) * cam.width + u] = best_id;
      }
    }
  }
  return img;
}

struct GridInit {
  Eigen::MatrixX3d coords;            // camera frame, n = g*g rows
  std::vector<std::int32_t> ids;      // surface id per point (kIdNone = far plane)
  std::vector<std::array<int, 2>> pixels;
};

// g x g pixel grid uniformly spanning the raster, inset half a cell from the
// borders; each pixel back-projects through its center at the rendered depth.
// No-hit pixels attach to the far plane at max_depth.
inline GridInit init_point_grid(const DepthImage& img, const CameraModel& cam, int g,
                                double max_depth) {
  if (g < 2) throw std::invalid_argument("grid size must be >= 2");
  if (img.width != cam.width || img.height != cam.height)
    throw std::invalid_argument("raster/intrinsics resolution mismatch");
  GridInit out;
  out.coords.resize(g * g, 3);
  out.ids.reserve(std::size_t(g) * g);
  out.pixels.reserve(std::size_t(g) * g);
  int k = 0;
  for (int i = 0; i < g; ++i) {
    int v = std::min(img.height - 1, int((2 * i + 1) * img.height / (2 * g)));
    for (int j = 0; j < g; ++j, ++k) {
      int u = std::min(img.width - 1, int((2 * j + 1) * img.width / (2 * g)));
      std::int32_t id = img.id_at(u, v);
      double depth = id == kIdNone ? max_depth : double(img.at(u, v));
      out.coords.row(k) = cam.backproject(u + 0.5, v + 0.5, depth).transpose();
      out.ids.push_back(id);
      out.pixels.push_back({u, v});
    }
  }
  return out;
}

}  // namespace trackctl
