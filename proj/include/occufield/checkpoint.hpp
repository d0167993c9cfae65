// SPDX-License-Identifier: Apache-2.0
//
// Flat binary checkpoint: magic "OCCF1", then per-parameter records of
// (u64 name length, UTF-8 name, u64 rank, u64 dims..., f64 data...), all
// little-endian.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "occufield/tensor.hpp"

namespace occufield {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}
inline void put_f64(std::ostream& os, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}
inline double get_f64(std::istream& is) {
  uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "OCCF1";

inline void save_checkpoint(const std::string& path, const NamedTensors& items) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("checkpoint: cannot write " + path);
  os.write(kCheckpointMagic, 5);
  for (const auto& [name, t] : items) {
    detail::put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, static_cast<uint64_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) detail::put_u64(os, static_cast<uint64_t>(t.dim(d)));
    for (int64_t i = 0; i < t.numel(); ++i) detail::put_f64(os, t.data()[i]);
  }
  if (!os) fail("checkpoint: write failed for " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("checkpoint: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (is.gcount() != 5 || std::memcmp(magic, kCheckpointMagic, 5) != 0)
    fail("checkpoint: unknown magic in " + path);
  NamedTensors items;
  while (true) {
    uint64_t name_len = detail::get_u64(is);
    if (!is) break;  // clean EOF
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    uint64_t rank = detail::get_u64(is);
    if (rank > 8) fail("checkpoint: corrupt record in " + path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(detail::get_u64(is));
    int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& v : data) v = detail::get_f64(is);
    if (!is) fail("checkpoint: truncated record '" + name + "' in " + path);
    items.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return items;
}

inline const Tensor* find_tensor(const NamedTensors& items, const std::string& name) {
  for (const auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

inline Tensor require_tensor(const NamedTensors& items, const std::string& name) {
  const Tensor* t = find_tensor(items, name);
  if (!t) fail("checkpoint: missing tensor '" + name + "'");
  return *t;
}

}  // namespace occufield
