// SPDX-License-Identifier: Apache-2.0
//
// Run-directory dataset: per scene a set of ring-camera views with masks,
// a proxy occupancy volume, precomputed point samples, and a plain-text
// meta file that fully reconstructs the analytic scene and cameras.

#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "occufield/camera.hpp"
#include "occufield/image.hpp"
#include "occufield/losses.hpp"
#include "occufield/proxy.hpp"
#include "occufield/synth.hpp"

namespace occufield {

struct DatasetConfig {
  std::string out_dir;
  int n_scenes = 15;
  int views = 8;
  int resolution = 128;
  uint64_t seed = 1;
  int proxy_res = 32;
  double inflate_radius = 0.06;
  int points_occ = 1024;
  int points_color = 1024;
  double sigma = 0.05;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string fmt_vec3(const Vec3& v) {
  return fmt_double(v.x) + "," + fmt_double(v.y) + "," + fmt_double(v.z);
}
inline std::string fmt_mat3(const Mat3& m) {
  std::string s;
  for (int i = 0; i < 9; ++i) s += (i ? "," : "") + fmt_double(m.m[static_cast<size_t>(i)]);
  return s;
}
inline Vec3 parse_vec3(const std::string& s) {
  Vec3 v;
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &v.x, &v.y, &v.z) != 3)
    fail("dataset: bad vec3 '" + s + "'");
  return v;
}
inline Mat3 parse_mat3(const std::string& s) {
  Mat3 m;
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &m.m[0], &m.m[1], &m.m[2],
                  &m.m[3], &m.m[4], &m.m[5], &m.m[6], &m.m[7], &m.m[8]) != 9)
    fail("dataset: bad mat3 '" + s + "'");
  return m;
}

}  // namespace detail

struct SceneRecord {
  std::string dir;
  AnalyticScene scene;
  std::vector<double> azimuths;  // radians
  int resolution = 128;
  uint64_t scene_seed = 0;

  std::string view_path(int k) const { return dir + "/view_" + std::to_string(k) + ".png"; }
  std::string mask_path(int k) const { return dir + "/mask_" + std::to_string(k) + ".png"; }
  std::string proxy_path() const { return dir + "/proxy.vox"; }
  std::string points_path() const { return dir + "/points.bin"; }
  std::string meta_path() const { return dir + "/meta.txt"; }

  Camera camera(int view) const {
    return Camera::azimuth(azimuths[static_cast<size_t>(view)], resolution, resolution);
  }
  int backside_view(int view) const {
    return (view + static_cast<int>(azimuths.size()) / 2) % static_cast<int>(azimuths.size());
  }
  Image load_view(int k) const { return load_image(view_path(k)); }
  Image load_mask(int k) const { return load_image(mask_path(k)); }
  ProxyVolume load_proxy() const { return load_vox(proxy_path()); }
};

struct SceneDataset {
  std::string dir;
  std::vector<SceneRecord> scenes;
  int views = 0;
  int resolution = 0;
};

inline void save_points_bin(const PointSampleSet& set, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("dataset: cannot write " + path);
  os.write("PTS1", 4);
  auto put_u64 = [&](uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  };
  auto put_f64 = [&](double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(v);
  };
  put_u64(set.occ_points.size());
  for (size_t i = 0; i < set.occ_points.size(); ++i) {
    put_f64(set.occ_points[i].x);
    put_f64(set.occ_points[i].y);
    put_f64(set.occ_points[i].z);
    put_f64(set.occ_targets[i]);
  }
  put_u64(set.color_points.size());
  for (size_t i = 0; i < set.color_points.size(); ++i) {
    put_f64(set.color_points[i].x);
    put_f64(set.color_points[i].y);
    put_f64(set.color_points[i].z);
    put_f64(set.color_targets[i].x);
    put_f64(set.color_targets[i].y);
    put_f64(set.color_targets[i].z);
  }
}

inline PointSampleSet load_points_bin(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("dataset: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::string(magic, 4) != "PTS1") fail("dataset: unknown points magic in " + path);
  auto get_u64 = [&]() {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  };
  auto get_f64 = [&]() {
    uint64_t v = get_u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  };
  PointSampleSet set;
  const uint64_t n_occ = get_u64();
  for (uint64_t i = 0; i < n_occ; ++i) {
    Vec3 p{get_f64(), get_f64(), get_f64()};
    set.occ_points.push_back(p);
    set.occ_targets.push_back(get_f64());
  }
  const uint64_t n_col = get_u64();
  for (uint64_t i = 0; i < n_col; ++i) {
    Vec3 p{get_f64(), get_f64(), get_f64()};
    set.color_points.push_back(p);
    set.color_targets.push_back({get_f64(), get_f64(), get_f64()});
  }
  if (!is) fail("dataset: truncated " + path);
  return set;
}

inline void write_scene_meta(const SceneRecord& rec, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("dataset: cannot write " + path);
  os << "scene_seed=" << rec.scene_seed << "\n";
  os << "resolution=" << rec.resolution << "\n";
  os << "views=" << rec.azimuths.size() << "\n";
  os << "half_extent=1\n";
  std::string az;
  for (size_t i = 0; i < rec.azimuths.size(); ++i)
    az += (i ? "," : "") + detail::fmt_double(rec.azimuths[i]);
  os << "azimuths=" << az << "\n";
  os << "prim_count=" << rec.scene.primitives.size() << "\n";
  for (size_t i = 0; i < rec.scene.primitives.size(); ++i) {
    const Primitive& p = rec.scene.primitives[i];
    const std::string key = "prim" + std::to_string(i) + ".";
    const char* type = p.type == PrimitiveType::Sphere
                           ? "sphere"
                           : (p.type == PrimitiveType::Capsule ? "capsule" : "box");
    os << key << "type=" << type << "\n";
    os << key << "center=" << detail::fmt_vec3(p.center) << "\n";
    os << key << "rot=" << detail::fmt_mat3(p.rotation) << "\n";
    os << key << "radius=" << detail::fmt_double(p.radius) << "\n";
    os << key << "half_length=" << detail::fmt_double(p.half_length) << "\n";
    os << key << "half_extents=" << detail::fmt_vec3(p.half_extents) << "\n";
    const char* kind = p.texture.kind == TextureKind::Solid
                           ? "solid"
                           : (p.texture.kind == TextureKind::Stripes ? "stripes" : "checker");
    os << key << "tex.kind=" << kind << "\n";
    os << key << "tex.color_a=" << detail::fmt_vec3(p.texture.color_a) << "\n";
    os << key << "tex.color_b=" << detail::fmt_vec3(p.texture.color_b) << "\n";
    os << key << "tex.freq=" << detail::fmt_double(p.texture.frequency) << "\n";
    os << key << "tex.phase=" << detail::fmt_double(p.texture.phase) << "\n";
    os << key << "tex.axis=" << p.texture.axis << "\n";
    os << key << "tex.back_shift=" << detail::fmt_double(p.texture.back_phase_shift) << "\n";
  }
}

inline SceneRecord read_scene_meta(const std::string& dir) {
  std::ifstream is(dir + "/meta.txt");
  if (!is) fail("dataset: cannot open " + dir + "/meta.txt");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail("dataset: bad meta line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) fail("dataset: meta missing key '" + k + "'");
    return it->second;
  };
  SceneRecord rec;
  rec.dir = dir;
  rec.scene_seed = std::stoull(need("scene_seed"));
  rec.resolution = std::stoi(need("resolution"));
  const int views = std::stoi(need("views"));
  {
    std::istringstream az(need("azimuths"));
    std::string tok;
    while (std::getline(az, tok, ',')) rec.azimuths.push_back(std::stod(tok));
    if (static_cast<int>(rec.azimuths.size()) != views)
      fail("dataset: azimuth count mismatch in " + dir);
  }
  rec.scene.seed = rec.scene_seed;
  const int prim_count = std::stoi(need("prim_count"));
  for (int i = 0; i < prim_count; ++i) {
    const std::string key = "prim" + std::to_string(i) + ".";
    Primitive p;
    const std::string type = need(key + "type");
    p.type = type == "sphere" ? PrimitiveType::Sphere
                              : (type == "capsule" ? PrimitiveType::Capsule : PrimitiveType::Box);
    p.center = detail::parse_vec3(need(key + "center"));
    p.rotation = detail::parse_mat3(need(key + "rot"));
    p.radius = std::stod(need(key + "radius"));
    p.half_length = std::stod(need(key + "half_length"));
    p.half_extents = detail::parse_vec3(need(key + "half_extents"));
    const std::string kind = need(key + "tex.kind");
    p.texture.kind = kind == "solid" ? TextureKind::Solid
                                     : (kind == "stripes" ? TextureKind::Stripes
                                                          : TextureKind::Checker);
    p.texture.color_a = detail::parse_vec3(need(key + "tex.color_a"));
    p.texture.color_b = detail::parse_vec3(need(key + "tex.color_b"));
    p.texture.frequency = std::stod(need(key + "tex.freq"));
    p.texture.phase = std::stod(need(key + "tex.phase"));
    p.texture.axis = std::stoi(need(key + "tex.axis"));
    auto back_it = kv.find(key + "tex.back_shift");
    if (back_it != kv.end()) p.texture.back_phase_shift = std::stod(back_it->second);
    rec.scene.primitives.push_back(p);
  }
  return rec;
}

// Generates scenes, renders the azimuth ring, voxelizes proxies, samples
// points, and writes everything under cfg.out_dir/scenes/<id>/.
inline void make_dataset(const DatasetConfig& cfg, bool force = false) {
  namespace fs = std::filesystem;
  if (cfg.n_scenes < 1) fail("make_dataset: need at least one scene");
  if (cfg.views < 2 || cfg.views % 2 != 0)
    fail("make_dataset: view count must be even and >= 2 so front/back pairs exist");
  const fs::path root(cfg.out_dir);
  if (fs::exists(root / "scenes")) {
    if (!force)
      fail("make_dataset: output '" + cfg.out_dir + "' already holds a dataset (use --force)");
    fs::remove_all(root / "scenes");
  }
  fs::create_directories(root / "scenes");

  RngStream rng(cfg.seed);
  for (int s = 0; s < cfg.n_scenes; ++s) {
    SceneRecord rec;
    rec.scene_seed = rng.child("scene", static_cast<uint64_t>(s)).next_u64();
    rec.scene = capsule_person(rec.scene_seed);
    rec.resolution = cfg.resolution;
    char name[32];
    std::snprintf(name, sizeof name, "%03d", s);
    rec.dir = (root / "scenes" / name).string();
    fs::create_directories(rec.dir);
    for (int k = 0; k < cfg.views; ++k)
      rec.azimuths.push_back(2.0 * M_PI * k / cfg.views);

    for (int k = 0; k < cfg.views; ++k) {
      const GtView view = render_gt(rec.scene, rec.camera(k));
      save_image(view.rgb, rec.view_path(k));
      save_image(view.mask, rec.mask_path(k));
    }
    save_vox(voxelize_proxy(rec.scene, cfg.proxy_res, cfg.inflate_radius), rec.proxy_path());
    PointSampleSet points =
        sample_points(rec.scene, cfg.points_occ, cfg.points_color, cfg.sigma,
                      RngStream(rec.scene_seed).child("dataset_points"));
    save_points_bin(points, rec.points_path());
    write_scene_meta(rec, rec.meta_path());
  }
}

inline SceneDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  SceneDataset ds;
  ds.dir = dir;
  const fs::path scenes = fs::path(dir) / "scenes";
  if (!fs::exists(scenes)) fail("load_dataset: no scenes under " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(scenes))
    if (entry.is_directory()) names.push_back(entry.path().string());
  std::sort(names.begin(), names.end());
  for (const auto& name : names) ds.scenes.push_back(read_scene_meta(name));
  if (ds.scenes.empty()) fail("load_dataset: empty dataset " + dir);
  ds.views = static_cast<int>(ds.scenes[0].azimuths.size());
  ds.resolution = ds.scenes[0].resolution;
  return ds;
}

}  // namespace occufield
