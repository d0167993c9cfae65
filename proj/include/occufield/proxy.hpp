// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "occufield/math.hpp"
#include "occufield/tensor.hpp"

namespace occufield {

// Binary occupancy grid over the [-1,1]^3 bounding cube, cell-centered,
// x fastest then y then z.
struct ProxyVolume {
  int res = 32;
  std::vector<uint8_t> voxels;

  static ProxyVolume create(int res) {
    ProxyVolume v;
    v.res = res;
    v.voxels.assign(static_cast<size_t>(res) * res * res, 0);
    return v;
  }

  uint8_t at(int ix, int iy, int iz) const {
    return voxels[(static_cast<size_t>(iz) * res + iy) * res + ix];
  }
  void set(int ix, int iy, int iz, uint8_t v) {
    voxels[(static_cast<size_t>(iz) * res + iy) * res + ix] = v;
  }
  Vec3 voxel_center(int ix, int iy, int iz) const {
    const double step = 2.0 / res;
    return {-1.0 + (ix + 0.5) * step, -1.0 + (iy + 0.5) * step, -1.0 + (iz + 0.5) * step};
  }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t v : voxels) n += v;
    return n;
  }
  // [1,D,H,W] with D=z, H=y, W=x, matching the trilinear sampler's axes.
  Tensor to_tensor() const {
    std::vector<double> data(voxels.begin(), voxels.end());
    return Tensor::from_data({1, res, res, res}, std::move(data));
  }
};

inline constexpr char kVoxMagic[] = "VOX1";

inline void save_vox(const ProxyVolume& v, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("save_vox: cannot write " + path);
  os.write(kVoxMagic, 4);
  uint32_t res = static_cast<uint32_t>(v.res);
  unsigned char r[4] = {static_cast<unsigned char>(res), static_cast<unsigned char>(res >> 8),
                        static_cast<unsigned char>(res >> 16),
                        static_cast<unsigned char>(res >> 24)};
  os.write(reinterpret_cast<const char*>(r), 4);
  const size_t n = v.voxels.size();
  std::vector<uint8_t> packed((n + 7) / 8, 0);
  for (size_t i = 0; i < n; ++i)
    if (v.voxels[i]) packed[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  os.write(reinterpret_cast<const char*>(packed.data()),
           static_cast<std::streamsize>(packed.size()));
}

inline ProxyVolume load_vox(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("load_vox: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != kVoxMagic)
    fail("load_vox: unknown magic in " + path);
  unsigned char r[4];
  is.read(reinterpret_cast<char*>(r), 4);
  const int res = static_cast<int>(r[0] | (r[1] << 8) | (r[2] << 16) | (r[3] << 24));
  if (res < 1 || res > 1024) fail("load_vox: bad resolution in " + path);
  ProxyVolume v = ProxyVolume::create(res);
  const size_t n = v.voxels.size();
  std::vector<uint8_t> packed((n + 7) / 8);
  is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  if (!is) fail("load_vox: truncated " + path);
  for (size_t i = 0; i < n; ++i) v.voxels[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return v;
}

}  // namespace occufield
