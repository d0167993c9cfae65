// SPDX-License-Identifier: Apache-2.0
//
// Procedural analytic scenes: unions of textured primitives with exact
// occupancy/color/ray oracles, a capsule-person generator, ground-truth view
// rendering, and proxy voxelization.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "occufield/camera.hpp"
#include "occufield/image.hpp"
#include "occufield/math.hpp"
#include "occufield/parallel.hpp"
#include "occufield/proxy.hpp"
#include "occufield/rng.hpp"

namespace occufield {

enum class PrimitiveType { Sphere, Capsule, Box };
enum class TextureKind { Solid, Stripes, Checker };

struct Texture {
  TextureKind kind = TextureKind::Solid;
  Vec3 color_a{0.8, 0.3, 0.3};
  Vec3 color_b{0.2, 0.3, 0.8};
  double frequency = 10.0;  // angular; the pattern period is 2*pi/frequency
  double phase = 0.0;
  int axis = 1;             // local stripe axis
  double back_phase_shift = 0.0;  // extra stripe phase on the local -z half

  Vec3 color_at(const Vec3& local) const {
    switch (kind) {
      case TextureKind::Solid:
        return color_a;
      case TextureKind::Stripes: {
        const double coord = axis == 0 ? local.x : (axis == 1 ? local.y : local.z);
        const double ph = phase + (local.z < 0 ? back_phase_shift : 0.0);
        return std::sin(frequency * coord + ph) >= 0 ? color_a : color_b;
      }
      case TextureKind::Checker: {
        const double s = std::sin(frequency * local.x + phase) *
                         std::sin(frequency * local.y + phase) *
                         std::sin(frequency * local.z + phase);
        return s >= 0 ? color_a : color_b;
      }
    }
    return color_a;
  }
};

struct Primitive {
  PrimitiveType type = PrimitiveType::Sphere;
  Vec3 center{0, 0, 0};
  Mat3 rotation;             // world -> local
  double radius = 0.3;       // sphere, capsule
  double half_length = 0.2;  // capsule axis half-length (local y)
  Vec3 half_extents{0.2, 0.2, 0.2};  // box
  Texture texture;

  Vec3 to_local(const Vec3& p) const { return rotation * (p - center); }
  Vec3 to_world(const Vec3& q) const { return center + rotation.transposed() * q; }

  double sdf(const Vec3& p) const {
    const Vec3 q = to_local(p);
    switch (type) {
      case PrimitiveType::Sphere:
        return norm(q) - radius;
      case PrimitiveType::Capsule: {
        const double cy = std::clamp(q.y, -half_length, half_length);
        return norm(Vec3{q.x, q.y - cy, q.z}) - radius;
      }
      case PrimitiveType::Box: {
        const Vec3 d{std::abs(q.x) - half_extents.x, std::abs(q.y) - half_extents.y,
                     std::abs(q.z) - half_extents.z};
        const Vec3 outside = cwise_max(d, Vec3{0, 0, 0});
        const double inside = std::min(0.0, std::max({d.x, d.y, d.z}));
        return norm(outside) + inside;
      }
    }
    return 1e9;
  }

  // Closest point on the surface, in local coordinates.
  Vec3 closest_surface_local(const Vec3& q) const {
    switch (type) {
      case PrimitiveType::Sphere: {
        const double n = norm(q);
        if (n < 1e-12) return {radius, 0, 0};
        return q * (radius / n);
      }
      case PrimitiveType::Capsule: {
        const Vec3 a{0, std::clamp(q.y, -half_length, half_length), 0};
        Vec3 n = q - a;
        const double len = norm(n);
        if (len < 1e-12) n = {radius, 0, 0};
        else n = n * (radius / len);
        return a + n;
      }
      case PrimitiveType::Box: {
        const Vec3 d{std::abs(q.x) - half_extents.x, std::abs(q.y) - half_extents.y,
                     std::abs(q.z) - half_extents.z};
        if (d.x > 0 || d.y > 0 || d.z > 0) {
          return {std::clamp(q.x, -half_extents.x, half_extents.x),
                  std::clamp(q.y, -half_extents.y, half_extents.y),
                  std::clamp(q.z, -half_extents.z, half_extents.z)};
        }
        // inside: push to the nearest face
        Vec3 s = q;
        if (d.x >= d.y && d.x >= d.z)
          s.x = q.x >= 0 ? half_extents.x : -half_extents.x;
        else if (d.y >= d.z)
          s.y = q.y >= 0 ? half_extents.y : -half_extents.y;
        else
          s.z = q.z >= 0 ? half_extents.z : -half_extents.z;
        return s;
      }
    }
    return q;
  }

  Vec3 surface_color(const Vec3& p) const {
    return texture.color_at(closest_surface_local(to_local(p)));
  }

  // Closest intersection with the ray o + t*d for t in [tmin, tmax].
  bool ray_hit(const Vec3& o, const Vec3& d, double tmin, double tmax, double* t_hit) const {
    const Vec3 ol = to_local(o);
    const Vec3 dl = rotation * d;
    auto sphere_hit = [&](const Vec3& c, double r, double& t) {
      const Vec3 oc = ol - c;
      const double b = dot(oc, dl);
      const double disc = b * b - (norm2(oc) - r * r);
      if (disc < 0) return false;
      const double sq = std::sqrt(disc);
      double t0 = -b - sq, t1 = -b + sq;
      if (t0 >= tmin && t0 <= tmax) { t = t0; return true; }
      if (t1 >= tmin && t1 <= tmax) { t = t1; return true; }
      return false;
    };
    switch (type) {
      case PrimitiveType::Sphere: {
        double t;
        if (!sphere_hit({0, 0, 0}, radius, t)) return false;
        *t_hit = t;
        return true;
      }
      case PrimitiveType::Capsule: {
        double best = tmax + 1;
        // infinite cylinder on (x,z)
        const double a = dl.x * dl.x + dl.z * dl.z;
        if (a > 1e-14) {
          const double b = ol.x * dl.x + ol.z * dl.z;
          const double c = ol.x * ol.x + ol.z * ol.z - radius * radius;
          const double disc = b * b - a * c;
          if (disc >= 0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / a, (-b + sq) / a}) {
              if (t < tmin || t > tmax || t >= best) continue;
              const double y = ol.y + t * dl.y;
              if (std::abs(y) <= half_length) best = t;
            }
          }
        }
        for (double cy : {half_length, -half_length}) {
          double t;
          if (sphere_hit({0, cy, 0}, radius, t) && t < best) {
            const double y = ol.y + t * dl.y;
            if (cy > 0 ? y >= half_length : y <= -half_length) best = t;
          }
        }
        if (best > tmax) return false;
        *t_hit = best;
        return true;
      }
      case PrimitiveType::Box: {
        double t0 = tmin, t1 = tmax;
        const double oo[3] = {ol.x, ol.y, ol.z};
        const double dd[3] = {dl.x, dl.y, dl.z};
        const double he[3] = {half_extents.x, half_extents.y, half_extents.z};
        for (int i = 0; i < 3; ++i) {
          if (std::abs(dd[i]) < 1e-14) {
            if (std::abs(oo[i]) > he[i]) return false;
            continue;
          }
          double ta = (-he[i] - oo[i]) / dd[i];
          double tb = (he[i] - oo[i]) / dd[i];
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
          if (t0 > t1) return false;
        }
        *t_hit = t0;
        return true;
      }
    }
    return false;
  }

  double surface_area() const {
    switch (type) {
      case PrimitiveType::Sphere:
        return 4.0 * M_PI * radius * radius;
      case PrimitiveType::Capsule:
        return 2.0 * M_PI * radius * (2.0 * half_length) + 4.0 * M_PI * radius * radius;
      case PrimitiveType::Box:
        return 8.0 * (half_extents.x * half_extents.y + half_extents.y * half_extents.z +
                      half_extents.z * half_extents.x);
    }
    return 0;
  }

  // Area-uniform surface sample in local coordinates.
  Vec3 sample_surface_local(RngStream& rng) const {
    switch (type) {
      case PrimitiveType::Sphere: {
        const double z = rng.uniform(-1, 1);
        const double phi = rng.uniform(0, 2 * M_PI);
        const double r = std::sqrt(std::max(0.0, 1 - z * z));
        return Vec3{r * std::cos(phi), z, r * std::sin(phi)} * radius;
      }
      case PrimitiveType::Capsule: {
        const double cyl = 2.0 * M_PI * radius * (2.0 * half_length);
        const double caps = 4.0 * M_PI * radius * radius;
        if (rng.uniform() * (cyl + caps) < cyl) {
          const double y = rng.uniform(-half_length, half_length);
          const double phi = rng.uniform(0, 2 * M_PI);
          return {radius * std::cos(phi), y, radius * std::sin(phi)};
        }
        const double z = rng.uniform(-1, 1);
        const double phi = rng.uniform(0, 2 * M_PI);
        const double r = std::sqrt(std::max(0.0, 1 - z * z));
        Vec3 s = Vec3{r * std::cos(phi), z, r * std::sin(phi)} * radius;
        s.y += s.y >= 0 ? half_length : -half_length;
        return s;
      }
      case PrimitiveType::Box: {
        const double ax = half_extents.y * half_extents.z;
        const double ay = half_extents.x * half_extents.z;
        const double az = half_extents.x * half_extents.y;
        const double pick = rng.uniform() * (ax + ay + az);
        const double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
        Vec3 s{rng.uniform(-half_extents.x, half_extents.x),
               rng.uniform(-half_extents.y, half_extents.y),
               rng.uniform(-half_extents.z, half_extents.z)};
        if (pick < ax) s.x = sgn * half_extents.x;
        else if (pick < ax + ay) s.y = sgn * half_extents.y;
        else s.z = sgn * half_extents.z;
        return s;
      }
    }
    return {};
  }

  // Conservative bound of farthest surface point from the origin.
  double max_reach() const {
    switch (type) {
      case PrimitiveType::Sphere:
        return norm(center) + radius;
      case PrimitiveType::Capsule:
        return norm(center) + half_length + radius;
      case PrimitiveType::Box:
        return norm(center) + norm(half_extents);
    }
    return 0;
  }
};

struct SceneHit {
  double t = 0;
  int primitive = -1;
};

// Union of textured primitives; occupancy and color are pure functions of p.
struct AnalyticScene {
  std::vector<Primitive> primitives;
  uint64_t seed = 0;

  double occupancy(const Vec3& p) const {
    for (const auto& prim : primitives)
      if (prim.sdf(p) <= 0) return 1.0;
    return 0.0;
  }

  // Exact distance to the union outside it; a lower bound inside.
  double signed_distance(const Vec3& p) const {
    double d = 1e9;
    for (const auto& prim : primitives) d = std::min(d, prim.sdf(p));
    return d;
  }

  // Texture of the closest primitive surface.
  Vec3 color(const Vec3& p) const {
    if (primitives.empty()) return {0, 0, 0};
    double best = 1e18;
    const Primitive* who = &primitives[0];
    for (const auto& prim : primitives) {
      const double d = std::abs(prim.sdf(p));
      if (d < best) {
        best = d;
        who = &prim;
      }
    }
    return who->surface_color(p);
  }

  bool ray_closest_hit(const Vec3& o, const Vec3& d, double tmin, double tmax,
                       SceneHit* hit) const {
    double best = tmax + 1;
    int idx = -1;
    for (size_t i = 0; i < primitives.size(); ++i) {
      double t;
      if (primitives[i].ray_hit(o, d, tmin, tmax, &t) && t < best) {
        best = t;
        idx = static_cast<int>(i);
      }
    }
    if (idx < 0) return false;
    hit->t = best;
    hit->primitive = idx;
    return true;
  }

  // Area-weighted sample of the union boundary (interior-covered points rejected).
  Vec3 sample_surface(RngStream& rng) const {
    std::vector<double> cum;
    double total = 0;
    for (const auto& prim : primitives) {
      total += prim.surface_area();
      cum.push_back(total);
    }
    for (int attempt = 0; attempt < 256; ++attempt) {
      const double pick = rng.uniform() * total;
      size_t idx = static_cast<size_t>(std::lower_bound(cum.begin(), cum.end(), pick) -
                                       cum.begin());
      if (idx >= primitives.size()) idx = primitives.size() - 1;
      const Vec3 p = primitives[idx].to_world(primitives[idx].sample_surface_local(rng));
      bool covered = false;
      for (size_t j = 0; j < primitives.size(); ++j)
        if (j != idx && primitives[j].sdf(p) < -1e-9) { covered = true; break; }
      if (!covered) return p;
    }
    return primitives.empty() ? Vec3{} : primitives[0].to_world(
        primitives[0].sample_surface_local(rng));
  }

  bool inside_bounds(double bound = 0.9) const {
    for (const auto& prim : primitives)
      if (prim.max_reach() > bound) return false;
    return true;
  }
};

inline double analytic_occupancy(const AnalyticScene& scene, const Vec3& p) {
  return scene.occupancy(p);
}
inline Vec3 analytic_color(const AnalyticScene& scene, const Vec3& p) { return scene.color(p); }

// ---------------------------------------------------------------------------
// Ground-truth rendering (exact ray casting, flat shading)
// ---------------------------------------------------------------------------

struct GtView {
  Image rgb;
  Image mask;  // single channel {0,1}
};

inline GtView render_gt(const AnalyticScene& scene, const Camera& cam) {
  GtView view;
  view.rgb = Image::create(cam.width, cam.height, 3);
  view.mask = Image::create(cam.width, cam.height, 1);
  const Vec3 dir = cam.ray_direction();
  parallel_for(cam.height, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Vec2 uv = cam.pixel_to_ndc(x, static_cast<double>(y));
        const Vec3 origin = cam.unproject(uv.x, uv.y) - dir * 3.0;
        SceneHit hit;
        if (scene.ray_closest_hit(origin, dir, 0.0, 6.0, &hit)) {
          const Vec3 p = origin + dir * hit.t;
          view.rgb.set_rgb(static_cast<int>(y), x,
                           scene.primitives[static_cast<size_t>(hit.primitive)].surface_color(p));
          view.mask.at(0, static_cast<int>(y), x) = 1.0;
        }
      }
  }, /*grain=*/1);
  return view;
}

// ---------------------------------------------------------------------------
// Proxy voxelization (coarse inflated prior, SMPL-stand-in)
// ---------------------------------------------------------------------------

inline ProxyVolume voxelize_proxy(const AnalyticScene& scene, int res,
                                  double inflate_radius = 0.06) {
  if (res < 8) fail("voxelize_proxy: resolution must be >= 8");
  ProxyVolume vol = ProxyVolume::create(res);
  parallel_for(res, [&](int64_t z0, int64_t z1) {
    for (int64_t iz = z0; iz < z1; ++iz)
      for (int iy = 0; iy < res; ++iy)
        for (int ix = 0; ix < res; ++ix) {
          const Vec3 c = vol.voxel_center(ix, iy, static_cast<int>(iz));
          if (scene.signed_distance(c) <= inflate_radius)
            vol.set(ix, iy, static_cast<int>(iz), 1);
        }
  }, /*grain=*/1);
  if (vol.count() == 0) fail("voxelize_proxy: scene produced an empty proxy volume");
  return vol;
}

// ---------------------------------------------------------------------------
// Capsule-person generator
// ---------------------------------------------------------------------------

// Torso box (always primitive 0), head sphere, four limb capsules. Textures
// are seeded with guaranteed left/right asymmetry so front and back views
// are distinguishable. Stripe frequencies are multiples of pi, which puts a
// whole number of cycles across the [-1,1] cube span.
inline AnalyticScene capsule_person(uint64_t seed) {
  RngStream rng(seed);
  RngStream jit = rng.child("jitter");
  RngStream tex = rng.child("texture");
  AnalyticScene scene;
  scene.seed = seed;

  auto jitter = [&](double base, double amp) { return base + jit.uniform(-amp, amp); };
  auto pick_color = [&](double hue_lo, double hue_hi) {
    return Vec3{tex.uniform(hue_lo, hue_hi), tex.uniform(0.15, 0.9), tex.uniform(0.15, 0.9)};
  };

  // torso
  Primitive torso;
  torso.type = PrimitiveType::Box;
  torso.center = {jitter(0.0, 0.02), jitter(0.08, 0.02), jitter(0.0, 0.02)};
  torso.half_extents = {jitter(0.26, 0.03), jitter(0.36, 0.03), jitter(0.15, 0.02)};
  torso.texture.kind = TextureKind::Stripes;
  torso.texture.axis = 1;
  torso.texture.frequency = M_PI * static_cast<double>(8 + 2 * tex.uniform_int(3));  // 8,10,12
  torso.texture.phase = tex.uniform(0, 2 * M_PI);
  torso.texture.back_phase_shift = tex.uniform(M_PI / 2, 3 * M_PI / 2);
  torso.texture.color_a = pick_color(0.55, 0.95);
  torso.texture.color_b = pick_color(0.05, 0.45);
  scene.primitives.push_back(torso);

  // head
  Primitive head;
  head.type = PrimitiveType::Sphere;
  head.center = {torso.center.x, torso.center.y + torso.half_extents.y + jitter(0.16, 0.015), torso.center.z};
  head.radius = jitter(0.13, 0.015);
  head.texture.kind = TextureKind::Checker;
  head.texture.frequency = M_PI * 10.0;
  head.texture.phase = tex.uniform(0, 2 * M_PI);
  head.texture.color_a = pick_color(0.6, 0.95);
  head.texture.color_b = pick_color(0.1, 0.4);
  scene.primitives.push_back(head);

  // limbs: arms then legs; left (negative x) and right textures differ.
  auto limb = [&](double cx, double cy, double half_len, double r, double tilt,
                  const Vec3& ca, const Vec3& cb, double freq) {
    Primitive p;
    p.type = PrimitiveType::Capsule;
    p.center = {cx, cy, jitter(0.0, 0.015)};
    p.rotation = Mat3::rotation_z(tilt);
    p.half_length = half_len;
    p.radius = r;
    p.texture.kind = TextureKind::Stripes;
    p.texture.axis = 1;
    p.texture.frequency = freq;
    p.texture.phase = tex.uniform(0, 2 * M_PI);
    p.texture.back_phase_shift = tex.uniform(M_PI / 2, 3 * M_PI / 2);
    p.texture.color_a = ca;
    p.texture.color_b = cb;
    return p;
  };
  const Vec3 left_a = pick_color(0.55, 0.95), left_b = pick_color(0.05, 0.40);
  const Vec3 right_a = pick_color(0.05, 0.40), right_b = pick_color(0.55, 0.95);
  const double arm_freq = M_PI * static_cast<double>(10 + 2 * tex.uniform_int(3));
  const double leg_freq = M_PI * static_cast<double>(8 + 2 * tex.uniform_int(3));

  scene.primitives.push_back(limb(-(torso.half_extents.x + jitter(0.09, 0.01)),
                                  jitter(0.14, 0.02), jitter(0.20, 0.02), jitter(0.065, 0.008),
                                  jitter(0.0, 0.2), left_a, left_b, arm_freq));
  scene.primitives.push_back(limb(torso.half_extents.x + jitter(0.09, 0.01), jitter(0.14, 0.02),
                                  jitter(0.20, 0.02), jitter(0.065, 0.008), jitter(0.0, 0.2),
                                  right_a, right_b, arm_freq));
  scene.primitives.push_back(limb(jitter(-0.13, 0.015), jitter(-0.46, 0.02),
                                  jitter(0.26, 0.02), jitter(0.085, 0.008), jitter(0.0, 0.12),
                                  left_a, left_b, leg_freq));
  scene.primitives.push_back(limb(jitter(0.13, 0.015), jitter(-0.46, 0.02), jitter(0.26, 0.02),
                                  jitter(0.085, 0.008), jitter(0.0, 0.12), right_a, right_b,
                                  leg_freq));

  if (!scene.inside_bounds(0.9)) fail("capsule_person: generated scene escapes bounds");
  return scene;
}

// Single-primitive helpers used across tests and tools.
inline AnalyticScene sphere_scene(double radius, const Vec3& color = {0.8, 0.2, 0.2}) {
  AnalyticScene scene;
  Primitive s;
  s.type = PrimitiveType::Sphere;
  s.radius = radius;
  s.texture.color_a = color;
  scene.primitives.push_back(s);
  return scene;
}

}  // namespace occufield
