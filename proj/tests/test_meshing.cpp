// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>

#include "occufield/meshing.hpp"

using namespace occufield;

namespace {

// undirected edge -> incident triangle count
std::map<std::pair<int, int>, int> edge_counts(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      int a = t[static_cast<size_t>(e)], b = t[static_cast<size_t>((e + 1) % 3)];
      if (a > b) std::swap(a, b);
      ++edges[{a, b}];
    }
  return edges;
}

bool watertight(const TriMesh& mesh) {
  for (const auto& [edge, count] : edge_counts(mesh))
    if (count != 2) return false;
  return !mesh.empty();
}

int euler_characteristic(const TriMesh& mesh) {
  return static_cast<int>(mesh.vertices.size()) - static_cast<int>(edge_counts(mesh).size()) +
         static_cast<int>(mesh.triangles.size());
}

}  // namespace

TEST(MarchingCubes, SphereTopologyAndAccuracy) {
  AnalyticScene scene = sphere_scene(0.5);
  TriMesh mesh = marching_cubes(batched_occupancy(scene), 64, 0.5);
  ASSERT_FALSE(mesh.empty());
  EXPECT_TRUE(watertight(mesh));
  EXPECT_EQ(euler_characteristic(mesh), 2);
  double worst = 0;
  for (const Vec3& v : mesh.vertices) worst = std::max(worst, std::abs(norm(v) - 0.5));
  EXPECT_LT(worst, 2.0 * (2.0 / 64.0));
  // no degenerate triangles
  for (size_t t = 0; t < mesh.triangles.size(); ++t)
    EXPECT_GT(mesh.triangle_area(t), 1e-12);
}

TEST(MarchingCubes, EmptyFieldGivesEmptyMesh) {
  BatchedField zero = [](const std::vector<Vec3>& pts) {
    return std::vector<double>(pts.size(), 0.0);
  };
  TriMesh mesh = marching_cubes(zero, 16, 0.5);
  EXPECT_TRUE(mesh.empty());
  EXPECT_TRUE(mesh.vertices.empty());
  EXPECT_THROW(marching_cubes(zero, 4, 0.5), std::invalid_argument);
}

TEST(MarchingCubes, CapsulePersonWatertight) {
  AnalyticScene scene = capsule_person(13);
  TriMesh mesh = marching_cubes(batched_occupancy(scene), 48, 0.5);
  ASSERT_FALSE(mesh.empty());
  EXPECT_TRUE(watertight(mesh));
}

TEST(VertexColors, ConstantField) {
  AnalyticScene scene = sphere_scene(0.4);
  TriMesh mesh = marching_cubes(batched_occupancy(scene), 24, 0.5);
  vertex_colors(mesh, [](const std::vector<Vec3>& pts) {
    return std::vector<Vec3>(pts.size(), Vec3{0.3, 0.6, 0.9});
  });
  ASSERT_EQ(mesh.colors.size(), mesh.vertices.size());
  for (const Vec3& c : mesh.colors) {
    EXPECT_DOUBLE_EQ(c.x, 0.3);
    EXPECT_DOUBLE_EQ(c.z, 0.9);
  }
}

TEST(MetricP2s, SelfSamplesAreZero) {
  AnalyticScene scene = sphere_scene(0.5);
  TriMesh mesh = marching_cubes(batched_occupancy(scene), 32, 0.5);
  std::vector<Vec3> samples = sample_mesh_surface(mesh, 500, RngStream(3));
  EXPECT_LT(metric_p2s(mesh, samples), 1e-9);
  // single point exactly at a vertex
  EXPECT_LT(metric_p2s(mesh, {mesh.vertices[7]}), 1e-12);
}

TEST(MetricP2s, ConcentricSpheresOffset) {
  TriMesh inner = marching_cubes(batched_occupancy(sphere_scene(0.5)), 96, 0.5);
  TriMesh outer = marching_cubes(batched_occupancy(sphere_scene(0.6)), 96, 0.5);
  std::vector<Vec3> samples = sample_mesh_surface(outer, 2000, RngStream(4));
  EXPECT_NEAR(metric_p2s(inner, samples), 0.1, 0.01);
}

TEST(MetricP2s, EmptyMeshSentinel) {
  TriMesh empty;
  EXPECT_TRUE(std::isinf(metric_p2s(empty, {{0, 0, 0}})));
  EXPECT_THROW(metric_p2s(empty, {}), std::invalid_argument);
}

TEST(MetricChamfer, IdenticalSymmetricTranslated) {
  TriMesh sphere = marching_cubes(batched_occupancy(sphere_scene(0.5)), 64, 0.5);
  const double self = metric_chamfer(sphere, sphere, 10000, RngStream(5));
  EXPECT_LT(self, 1e-3);

  EXPECT_DOUBLE_EQ(metric_chamfer(sphere, sphere, 2000, RngStream(6)),
                   metric_chamfer(sphere, sphere, 2000, RngStream(6)));

  const double t = 0.05;
  TriMesh moved = sphere;
  for (auto& v : moved.vertices) v.z += t;
  const double d = metric_chamfer(sphere, moved, 20000, RngStream(7));
  EXPECT_NEAR(d, t, 0.25 * t);

  TriMesh empty;
  EXPECT_TRUE(std::isinf(metric_chamfer(sphere, empty, 100, RngStream(8))));
}

TEST(MetricChamfer, RigidInvariance) {
  TriMesh a = marching_cubes(batched_occupancy(sphere_scene(0.45)), 32, 0.5);
  TriMesh b = marching_cubes(batched_occupancy(sphere_scene(0.55)), 32, 0.5);
  const double before = metric_chamfer(a, b, 4000, RngStream(9));
  const Mat3 rot = Mat3::rotation_y(0.7) * Mat3::rotation_x(-0.4);
  const Vec3 shift{0.1, -0.2, 0.05};
  auto transform = [&](TriMesh m) {
    for (auto& v : m.vertices) v = rot * v + shift;
    return m;
  };
  TriMesh ar = transform(a), br = transform(b);
  const double after = metric_chamfer(ar, br, 4000, RngStream(9));
  EXPECT_NEAR(before, after, 1e-6);
}

TEST(MetricChamfer, ResolutionConvergence) {
  AnalyticScene scene = sphere_scene(0.5);
  TriMesh gt = marching_cubes(batched_occupancy(scene), 128, 0.5);
  double prev = 1e9;
  for (int res : {16, 32, 64}) {
    TriMesh mesh = marching_cubes(batched_occupancy(scene), res, 0.5);
    const double d = metric_chamfer(mesh, gt, 4000, RngStream(10));
    EXPECT_LT(d, prev);
    prev = d;
  }
}

TEST(Export, ObjRoundTrip) {
  AnalyticScene scene = sphere_scene(0.5);
  TriMesh mesh = marching_cubes(batched_occupancy(scene), 16, 0.5);
  vertex_colors(mesh, [](const std::vector<Vec3>& pts) {
    std::vector<Vec3> out;
    for (const Vec3& p : pts) out.push_back({clamp01(p.x + 0.5), 0.5, 0.25});
    return out;
  });
  const std::string path = testing::TempDir() + "/mesh_roundtrip.obj";
  export_obj(mesh, path);
  TriMesh back = import_obj(path);
  ASSERT_EQ(back.vertices.size(), mesh.vertices.size());
  ASSERT_EQ(back.triangles.size(), mesh.triangles.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    EXPECT_NEAR(norm(back.vertices[i] - mesh.vertices[i]), 0.0, 1e-6);
  for (size_t t = 0; t < mesh.triangles.size(); ++t)
    EXPECT_EQ(back.triangles[t], mesh.triangles[t]);  // winding preserved
  ASSERT_EQ(back.colors.size(), mesh.colors.size());
}

TEST(Export, PlyRoundTripAndEmpty) {
  AnalyticScene scene = sphere_scene(0.4);
  TriMesh mesh = marching_cubes(batched_occupancy(scene), 12, 0.5);
  vertex_colors(mesh, [](const std::vector<Vec3>& pts) {
    return std::vector<Vec3>(pts.size(), Vec3{1.0, 0.0, 0.5});
  });
  const std::string path = testing::TempDir() + "/mesh_roundtrip.ply";
  export_ply(mesh, path);
  TriMesh back = import_ply(path);
  ASSERT_EQ(back.vertices.size(), mesh.vertices.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    EXPECT_NEAR(norm(back.vertices[i] - mesh.vertices[i]), 0.0, 1e-6);
  for (size_t t = 0; t < mesh.triangles.size(); ++t)
    EXPECT_EQ(back.triangles[t], mesh.triangles[t]);
  EXPECT_NEAR(back.colors[0].x, 1.0, 1e-2);

  TriMesh empty;
  const std::string empty_path = testing::TempDir() + "/empty.ply";
  export_ply(empty, empty_path);
  TriMesh back_empty = import_ply(empty_path);
  EXPECT_TRUE(back_empty.vertices.empty());
  EXPECT_TRUE(back_empty.triangles.empty());
}
