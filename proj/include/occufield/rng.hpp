// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace occufield {

namespace detail {

inline uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based splittable stream: the n-th draw is a pure function of
// (key, n), so streams can be forked by key derivation and replayed from a
// (seed, tag, index) triple without carrying state across stages.
class RngStream {
 public:
  RngStream() : key_(detail::mix64(0)) {}
  explicit RngStream(uint64_t seed) : key_(detail::mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

  RngStream child(std::string_view tag) const {
    RngStream s;
    s.key_ = detail::mix64(key_ ^ (detail::fnv1a(tag) * 0x9e3779b97f4a7c15ULL));
    return s;
  }
  RngStream child(uint64_t index) const {
    RngStream s;
    s.key_ = detail::mix64(key_ + 0x9e3779b97f4a7c15ULL * (index + 1));
    return s;
  }
  RngStream child(std::string_view tag, uint64_t index) const { return child(tag).child(index); }

  uint64_t next_u64() {
    uint64_t v = detail::mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
    return v;
  }

  // [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes two draws per value, never caches.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // [0,n)
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
  }

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }

 private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace occufield
