// SPDX-License-Identifier: Apache-2.0
//
// Isosurface extraction (256-case marching cubes with shared-edge vertex
// dedup), vertex coloring, exact point-to-surface queries over a triangle
// BVH, chamfer distance from area-uniform surface samples, and OBJ/PLY
// export.

#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "occufield/math.hpp"
#include "occufield/mc_tables.hpp"
#include "occufield/parallel.hpp"
#include "occufield/rng.hpp"
#include "occufield/synth.hpp"
#include "occufield/tensor.hpp"

namespace occufield {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> colors;  // optional; empty or one per vertex

  bool empty() const { return triangles.empty(); }

  double triangle_area(size_t t) const {
    const auto& tri = triangles[t];
    const Vec3 e1 = vertices[static_cast<size_t>(tri[1])] - vertices[static_cast<size_t>(tri[0])];
    const Vec3 e2 = vertices[static_cast<size_t>(tri[2])] - vertices[static_cast<size_t>(tri[0])];
    return 0.5 * norm(cross(e1, e2));
  }
  double surface_area() const {
    double a = 0;
    for (size_t t = 0; t < triangles.size(); ++t) a += triangle_area(t);
    return a;
  }
};

// Batched scalar field over world points.
using BatchedField = std::function<std::vector<double>(const std::vector<Vec3>&)>;

inline BatchedField batched_occupancy(const AnalyticScene& scene) {
  return [&scene](const std::vector<Vec3>& pts) {
    std::vector<double> out(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) out[i] = scene.occupancy(pts[i]);
    return out;
  };
}

// ---------------------------------------------------------------------------
// Marching cubes over the [-1,1]^3 cube, grid_res cells per axis
// ---------------------------------------------------------------------------

inline TriMesh marching_cubes(const BatchedField& field, int grid_res, double iso = 0.5) {
  if (grid_res < 8) fail("marching_cubes: grid resolution must be >= 8");
  const int n = grid_res + 1;
  const double step = 2.0 / grid_res;
  auto coord = [&](int i) { return -1.0 + i * step; };

  // sample the full grid, slab by slab to keep eval batches bounded
  std::vector<double> grid(static_cast<size_t>(n) * n * n);
  {
    std::vector<Vec3> pts(static_cast<size_t>(n) * n);
    for (int z = 0; z < n; ++z) {
      size_t k = 0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) pts[k++] = {coord(x), coord(y), coord(z)};
      std::vector<double> vals = field(pts);
      for (size_t i = 0; i < pts.size(); ++i) {
        double v = vals[i];
        if (v == iso) v = iso + 1e-12;  // avoid zero-length crossings
        grid[static_cast<size_t>(z) * n * n + i] = v;
      }
    }
  }
  auto gval = [&](int x, int y, int z) {
    return grid[(static_cast<size_t>(z) * n + y) * n + x];
  };
  auto gidx = [&](int x, int y, int z) {
    return (static_cast<int64_t>(z) * n + y) * n + x;
  };

  // cube corner offsets and the (grid point, axis) identity of each edge
  static const int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                   {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static const int edge_corner[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                         {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  static const int edge_base[12][4] = {
      // base corner offset + axis (0=x,1=y,2=z)
      {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
      {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
      {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2}};

  // per-slab polygonization, merged in slab order for determinism
  struct SlabOut {
    std::vector<int64_t> edge_keys;  // three per triangle
  };
  std::vector<SlabOut> slabs(static_cast<size_t>(grid_res));
  parallel_for(grid_res, [&](int64_t z0, int64_t z1) {
    for (int64_t z = z0; z < z1; ++z) {
      auto& out = slabs[static_cast<size_t>(z)].edge_keys;
      for (int y = 0; y < grid_res; ++y)
        for (int x = 0; x < grid_res; ++x) {
          int cube = 0;
          for (int c = 0; c < 8; ++c)
            if (gval(x + corner[c][0], y + corner[c][1], static_cast<int>(z) + corner[c][2]) <
                iso)
              cube |= 1 << c;
          if (detail::kMcEdgeTable[cube] == 0) continue;
          const int8_t* tri = detail::kMcTriTable[cube];
          for (int t = 0; tri[t] != -1; t += 3)
            for (int v = 0; v < 3; ++v) {
              const int e = tri[t + v];
              const int64_t base = gidx(x + edge_base[e][0], y + edge_base[e][1],
                                        static_cast<int>(z) + edge_base[e][2]);
              out.push_back(base * 3 + edge_base[e][3]);
            }
        }
    }
  }, /*grain=*/1);

  // shared-edge vertex dedup, first-seen order
  TriMesh mesh;
  std::unordered_map<int64_t, int> vertex_of_edge;
  auto edge_vertex = [&](int64_t key) {
    auto it = vertex_of_edge.find(key);
    if (it != vertex_of_edge.end()) return it->second;
    const int axis = static_cast<int>(key % 3);
    int64_t base = key / 3;
    const int x = static_cast<int>(base % n);
    const int y = static_cast<int>((base / n) % n);
    const int z = static_cast<int>(base / (static_cast<int64_t>(n) * n));
    const double v0 = gval(x, y, z);
    const double v1 = gval(x + (axis == 0), y + (axis == 1), z + (axis == 2));
    double t = (iso - v0) / (v1 - v0);
    t = std::clamp(t, 0.0, 1.0);
    Vec3 p{coord(x), coord(y), coord(z)};
    if (axis == 0) p.x += t * step;
    else if (axis == 1) p.y += t * step;
    else p.z += t * step;
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(p);
    vertex_of_edge.emplace(key, id);
    return id;
  };
  for (const auto& slab : slabs)
    for (size_t t = 0; t + 2 < slab.edge_keys.size(); t += 3) {
      const int a = edge_vertex(slab.edge_keys[t]);
      const int b = edge_vertex(slab.edge_keys[t + 1]);
      const int c = edge_vertex(slab.edge_keys[t + 2]);
      if (a == b || b == c || a == c) continue;  // collapsed crossing
      mesh.triangles.push_back({a, b, c});
    }
  return mesh;
}

// Per-vertex evaluation of a color field (typically the composited texture).
inline void vertex_colors(TriMesh& mesh,
                          const std::function<std::vector<Vec3>(const std::vector<Vec3>&)>&
                              color_field) {
  if (mesh.vertices.empty()) fail("vertex_colors: empty mesh");
  mesh.colors = color_field(mesh.vertices);
}

// ---------------------------------------------------------------------------
// Point-triangle distance and BVH
// ---------------------------------------------------------------------------

namespace detail {

inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                      const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

struct Aabb {
  Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
  void grow(const Vec3& p) {
    lo = cwise_min(lo, p);
    hi = cwise_max(hi, p);
  }
  void grow(const Aabb& b) {
    lo = cwise_min(lo, b.lo);
    hi = cwise_max(hi, b.hi);
  }
  double distance2(const Vec3& p) const {
    double d2 = 0;
    auto axis = [&](double v, double l, double h) {
      if (v < l) d2 += (l - v) * (l - v);
      else if (v > h) d2 += (v - h) * (v - h);
    };
    axis(p.x, lo.x, hi.x);
    axis(p.y, lo.y, hi.y);
    axis(p.z, lo.z, hi.z);
    return d2;
  }
};

}  // namespace detail

// Median-split BVH for exact nearest-triangle queries.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriMesh& mesh) : mesh_(&mesh) {
    const size_t nt = mesh.triangles.size();
    order_.resize(nt);
    for (size_t i = 0; i < nt; ++i) order_[i] = static_cast<int>(i);
    centroids_.resize(nt);
    boxes_.resize(nt);
    for (size_t i = 0; i < nt; ++i) {
      const auto& t = mesh.triangles[i];
      detail::Aabb box;
      Vec3 c{0, 0, 0};
      for (int v = 0; v < 3; ++v) {
        const Vec3& p = mesh.vertices[static_cast<size_t>(t[static_cast<size_t>(v)])];
        box.grow(p);
        c += p;
      }
      boxes_[i] = box;
      centroids_[i] = c / 3.0;
    }
    if (nt > 0) root_ = build(0, static_cast<int>(nt));
  }

  double distance(const Vec3& p) const {
    if (mesh_->triangles.empty()) return std::numeric_limits<double>::infinity();
    double best2 = std::numeric_limits<double>::infinity();
    std::vector<int> stack{root_};
    while (!stack.empty()) {
      const int ni = stack.back();
      stack.pop_back();
      const Node& node = nodes_[static_cast<size_t>(ni)];
      if (node.box.distance2(p) >= best2) continue;
      if (node.count > 0) {
        for (int i = node.first; i < node.first + node.count; ++i) {
          const auto& t = mesh_->triangles[static_cast<size_t>(order_[static_cast<size_t>(i)])];
          const Vec3 q = detail::closest_point_on_triangle(
              p, mesh_->vertices[static_cast<size_t>(t[0])],
              mesh_->vertices[static_cast<size_t>(t[1])],
              mesh_->vertices[static_cast<size_t>(t[2])]);
          best2 = std::min(best2, norm2(p - q));
        }
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
    }
    return std::sqrt(best2);
  }

 private:
  struct Node {
    detail::Aabb box;
    int left = -1, right = -1;
    int first = 0, count = 0;
  };

  int build(int begin, int end) {
    Node node;
    for (int i = begin; i < end; ++i) node.box.grow(boxes_[static_cast<size_t>(order_[static_cast<size_t>(i)])]);
    if (end - begin <= 4) {
      node.first = begin;
      node.count = end - begin;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    detail::Aabb cbox;
    for (int i = begin; i < end; ++i)
      cbox.grow(centroids_[static_cast<size_t>(order_[static_cast<size_t>(i)])]);
    const Vec3 ext = cbox.hi - cbox.lo;
    const int axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       auto key = [&](int t) {
                         const Vec3& c = centroids_[static_cast<size_t>(t)];
                         return axis == 0 ? c.x : (axis == 1 ? c.y : c.z);
                       };
                       return key(a) < key(b);
                     });
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[static_cast<size_t>(self)].left = l;
    nodes_[static_cast<size_t>(self)].right = r;
    return self;
  }

  const TriMesh* mesh_;
  std::vector<int> order_;
  std::vector<Vec3> centroids_;
  std::vector<detail::Aabb> boxes_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// Mean distance from each ground-truth point to the predicted surface.
inline double metric_p2s(const TriMesh& pred, const std::vector<Vec3>& gt_points) {
  if (gt_points.empty()) fail("metric_p2s: no ground-truth points");
  if (pred.empty()) return std::numeric_limits<double>::infinity();
  TriangleBvh bvh(pred);
  std::vector<double> dist(gt_points.size());
  parallel_for(static_cast<int64_t>(gt_points.size()), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) dist[static_cast<size_t>(i)] = bvh.distance(gt_points[static_cast<size_t>(i)]);
  }, /*grain=*/64);
  double s = 0;
  for (double d : dist) s += d;
  return s / static_cast<double>(gt_points.size());
}

// Area-uniform samples of a mesh surface.
inline std::vector<Vec3> sample_mesh_surface(const TriMesh& mesh, int n, RngStream rng) {
  std::vector<Vec3> out;
  if (mesh.empty() || n <= 0) return out;
  std::vector<double> cum(mesh.triangles.size());
  double total = 0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    total += mesh.triangle_area(t);
    cum[t] = total;
  }
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double pick = rng.uniform() * total;
    size_t t = static_cast<size_t>(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
    if (t >= mesh.triangles.size()) t = mesh.triangles.size() - 1;
    const auto& tri = mesh.triangles[t];
    double r1 = std::sqrt(rng.uniform());
    double r2 = rng.uniform();
    const double w0 = 1 - r1, w1 = r1 * (1 - r2), w2 = r1 * r2;
    out.push_back(mesh.vertices[static_cast<size_t>(tri[0])] * w0 +
                  mesh.vertices[static_cast<size_t>(tri[1])] * w1 +
                  mesh.vertices[static_cast<size_t>(tri[2])] * w2);
  }
  return out;
}

// Symmetric chamfer: mean sample-to-surface distance in both directions.
inline double metric_chamfer(const TriMesh& a, const TriMesh& b, int n_samples, RngStream rng) {
  if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
  std::vector<Vec3> sa = sample_mesh_surface(a, n_samples, rng.child("a"));
  std::vector<Vec3> sb = sample_mesh_surface(b, n_samples, rng.child("b"));
  return metric_p2s(b, sa) + metric_p2s(a, sb);
}

// ---------------------------------------------------------------------------
// Export / import
// ---------------------------------------------------------------------------

inline void export_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("export_obj: cannot write " + path);
  os.precision(9);
  const bool colored = mesh.colors.size() == mesh.vertices.size();
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    os << "v " << v.x << " " << v.y << " " << v.z;
    if (colored) {
      const Vec3& c = mesh.colors[i];
      os << " " << c.x << " " << c.y << " " << c.z;
    }
    os << "\n";
  }
  for (const auto& t : mesh.triangles)
    os << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!os) fail("export_obj: write failed for " + path);
}

inline TriMesh import_obj(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("import_obj: cannot open " + path);
  TriMesh mesh;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 p, c;
      ls >> p.x >> p.y >> p.z;
      if (ls >> c.x >> c.y >> c.z) mesh.colors.push_back(c);
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      ls >> t[0] >> t[1] >> t[2];
      mesh.triangles.push_back({t[0] - 1, t[1] - 1, t[2] - 1});
    }
  }
  if (mesh.colors.size() != mesh.vertices.size()) mesh.colors.clear();
  return mesh;
}

inline void export_ply(const TriMesh& mesh, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("export_ply: cannot write " + path);
  const bool colored = mesh.colors.size() == mesh.vertices.size();
  os << "ply\nformat binary_little_endian 1.0\n";
  os << "element vertex " << mesh.vertices.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  if (colored) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "element face " << mesh.triangles.size() << "\n";
  os << "property list uchar int vertex_indices\nend_header\n";
  auto put_f32 = [&](double v) {
    float f = static_cast<float>(v);
    os.write(reinterpret_cast<const char*>(&f), 4);
  };
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    put_f32(mesh.vertices[i].x);
    put_f32(mesh.vertices[i].y);
    put_f32(mesh.vertices[i].z);
    if (colored) {
      const Vec3& c = mesh.colors[i];
      unsigned char rgb[3] = {
          static_cast<unsigned char>(std::lround(clamp01(c.x) * 255.0)),
          static_cast<unsigned char>(std::lround(clamp01(c.y) * 255.0)),
          static_cast<unsigned char>(std::lround(clamp01(c.z) * 255.0))};
      os.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  for (const auto& t : mesh.triangles) {
    unsigned char n = 3;
    os.write(reinterpret_cast<const char*>(&n), 1);
    int32_t idx[3] = {t[0], t[1], t[2]};
    os.write(reinterpret_cast<const char*>(idx), 12);
  }
  if (!os) fail("export_ply: write failed for " + path);
}

inline TriMesh import_ply(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("import_ply: cannot open " + path);
  std::string line;
  size_t n_vert = 0, n_face = 0;
  bool colored = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string a, b;
    ls >> a >> b;
    if (a == "element" && b == "vertex") ls >> n_vert;
    if (a == "element" && b == "face") ls >> n_face;
    if (a == "property" && b == "uchar") {
      std::string name;
      ls >> name;
      if (name == "red") colored = true;
    }
    if (a == "end_header") break;
  }
  TriMesh mesh;
  auto get_f32 = [&]() {
    float f;
    is.read(reinterpret_cast<char*>(&f), 4);
    return static_cast<double>(f);
  };
  for (size_t i = 0; i < n_vert; ++i) {
    Vec3 p{get_f32(), get_f32(), get_f32()};
    if (colored) {
      unsigned char rgb[3];
      is.read(reinterpret_cast<char*>(rgb), 3);
      mesh.colors.push_back({rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0});
    }
    mesh.vertices.push_back(p);
  }
  for (size_t i = 0; i < n_face; ++i) {
    unsigned char n;
    is.read(reinterpret_cast<char*>(&n), 1);
    std::vector<int32_t> idx(n);
    is.read(reinterpret_cast<char*>(idx.data()), 4 * n);
    if (n == 3) mesh.triangles.push_back({idx[0], idx[1], idx[2]});
  }
  if (!is) fail("import_ply: truncated " + path);
  return mesh;
}

}  // namespace occufield
