// SPDX-License-Identifier: Apache-2.0
//
// Condition assembly: pixel-aligned samples of the source feature map at the
// point's projection, voxel-aligned trilinear samples of the volume feature,
// and (in fusion mode) pixel-aligned samples of the backside feature map at
// the backside camera's projection.

#pragma once

#include <vector>

#include "occufield/camera.hpp"
#include "occufield/nn.hpp"

namespace occufield {

struct ConditionInputs {
  Tensor f_img;        // [C_img, h, w]
  Tensor f_vol;        // [C_vol, d, h, w]
  Camera source_cam;
  bool fusion = false;
  Tensor f_img_back;   // [C_img, h, w]; fusion only
  Camera back_cam;

  int64_t width() const {
    return f_img.dim(0) + f_vol.dim(0) + (fusion ? f_img_back.dim(0) : 0);
  }
};

inline Tensor projections_tensor(const std::vector<Vec3>& points, const Camera& cam) {
  std::vector<double> uv(points.size() * 2);
  for (size_t i = 0; i < points.size(); ++i) {
    const Vec2 p = cam.project(points[i]);
    uv[i * 2] = p.x;
    uv[i * 2 + 1] = p.y;
  }
  return Tensor::from_data({static_cast<int64_t>(points.size()), 2}, std::move(uv));
}

inline Tensor points_tensor(const std::vector<Vec3>& points) {
  std::vector<double> d(points.size() * 3);
  for (size_t i = 0; i < points.size(); ++i) {
    d[i * 3] = points[i].x;
    d[i * 3 + 1] = points[i].y;
    d[i * 3 + 2] = points[i].z;
  }
  return Tensor::from_data({static_cast<int64_t>(points.size()), 3}, std::move(d));
}

// C(p) rows for a batch of world points.
inline Tensor build_condition(const std::vector<Vec3>& points, const ConditionInputs& in) {
  if (!in.f_img.defined() || !in.f_vol.defined())
    fail("build_condition: feature inputs missing");
  if (in.fusion && !in.f_img_back.defined())
    fail("build_condition: fusion mode requires a backside feature map and camera");
  Tensor pix = grid_sample_bilinear(in.f_img, projections_tensor(points, in.source_cam));
  Tensor vox = grid_sample_trilinear(in.f_vol, points_tensor(points));
  if (!in.fusion) return concat({pix, vox}, 1);
  Tensor back = grid_sample_bilinear(in.f_img_back, projections_tensor(points, in.back_cam));
  return concat({pix, back, vox}, 1);
}

}  // namespace occufield
