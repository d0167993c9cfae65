// SPDX-License-Identifier: Apache-2.0
//
// Orthographic view descriptor. Normalized image coordinates run over
// [-1,1]^2 with (-1,-1) at the top-left pixel; a camera at azimuth 0 looks
// along -z, and q = rotation*(p-center)/half_extent projects to (q.x, q.y)
// with q.z left to the caller as the signed coordinate along the camera axis.

#pragma once

#include "occufield/math.hpp"
#include "occufield/tensor.hpp"

namespace occufield {

struct Camera {
  Mat3 rotation;            // world -> camera
  Vec3 center{0, 0, 0};
  double half_extent = 1.0;  // world units per unit of normalized coordinate
  int width = 128, height = 128;

  // Ring camera: rotate the world by `azimuth` about +y; azimuth 0 faces -z.
  static Camera azimuth(double radians, int w = 128, int h = 128, double half_extent = 1.0) {
    Camera cam;
    cam.rotation = Mat3::rotation_y(radians);
    cam.width = w;
    cam.height = h;
    cam.half_extent = half_extent;
    return cam;
  }

  void validate() const {
    if (half_extent <= 0) fail("camera: half_extent must be positive");
    if (rotation.orthonormal_error() > 1e-9) fail("camera: rotation is not orthonormal");
  }

  Vec2 project(const Vec3& p, double* depth = nullptr) const {
    Vec3 q = rotation * ((p - center) / half_extent);
    if (depth) *depth = q.z;
    return {q.x, q.y};
  }

  // Direction rays travel; the camera axis points opposite to it.
  Vec3 ray_direction() const { return -rotation.row(2); }

  // Pixel centers <-> normalized coordinates.
  Vec2 pixel_to_ndc(double px, double py) const {
    return {(px + 0.5) * 2.0 / width - 1.0, (py + 0.5) * 2.0 / height - 1.0};
  }
  Vec2 ndc_to_pixel(double u, double v) const {
    return {(u + 1.0) * 0.5 * width - 0.5, (v + 1.0) * 0.5 * height - 0.5};
  }

  // World point whose projection is (u,v) and whose camera-axis coordinate is 0.
  Vec3 unproject(double u, double v) const {
    return center + rotation.transposed() * Vec3{u * half_extent, v * half_extent, 0.0};
  }
};

}  // namespace occufield
