#pragma once

// Pinhole camera model. Depth rasters store z-depth (camera-frame z), not
// ray length; pixel (u, v) samples through its center (u + 0.5, v + 0.5).

#include "trackctl/kinematics.hpp"

namespace trackctl {

struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;  // pixels
  kin::RigidTransform pose;               // world -> camera
  int width = 0, height = 0;

  void validate() const {
    if (fx <= 0 || fy <= 0) throw std::invalid_argument("camera focal lengths must be > 0");
    if (width < 8 || height < 8) throw std::invalid_argument("camera resolution must be >= 8x8");
  }

  // Continuous pixel coordinates of a camera-frame point (z > 0).
  Eigen::Vector2d project(const Vector3d& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }

  // Camera-frame point for continuous pixel coords at given z-depth.
  Vector3d backproject(double u, double v, double depth) const {
    return {(u - cx) / fx * depth, (v - cy) / fy * depth, depth};
  }

  Vector3d camera_center_world() const { return pose.inverse().t; }

  // Unit-z ray for a pixel: world origin plus direction scaled so that the
  // ray parameter equals camera z-depth.
  void pixel_ray_world(int u, int v, Vector3d& origin, Vector3d& dir) const {
    Vector3d d_cam((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0);
    kin::RigidTransform inv = pose.inverse();
    origin = inv.t;
    dir = inv.R * d_cam;
  }
};

// world -> camera pose looking from `eye` toward `target` (+z forward,
// +x right, +y down, gravity-aligned horizon).
inline kin::RigidTransform camera_look_at(const Vector3d& eye, const Vector3d& target,
                                          const Vector3d& up_world = {0, 0, 1}) {
  Vector3d fwd = (target - eye).normalized();
  Vector3d right = fwd.cross(up_world);
  if (right.norm() < 1e-9) right = fwd.cross(Vector3d(0, 1, 0));
  right.normalize();
  Vector3d down = fwd.cross(right).normalized();
  // rows of R map world axes onto camera axes
  kin::RigidTransform g;
  g.R.row(0) = right.transpose();
  g.R.row(1) = down.transpose();
  g.R.row(2) = fwd.transpose();
  g.t = -(g.R * eye);
  return g;
}

}  // namespace trackctl
