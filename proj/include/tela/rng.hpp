#pragma once

#include <cmath>
#include <cstdint>

#include "tela/math.hpp"

namespace tela {

// splitmix64 finalizer; used to derive independent stream seeds from
// (seed, iteration, pixel, ...) tuples so results never depend on the order
// rays are evaluated in.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b), c); }

// PCG32. Small state, cheap seeding, reproducible across platforms; the usual
// choice for per-ray random streams.
struct Rng {
  uint64_t state = 0x853c49e6748fea9bULL;
  uint64_t inc = 0xda3e39cb94b95bdbULL;

  Rng() = default;
  explicit Rng(uint64_t seed, uint64_t seq = 0) {
    state = 0;
    inc = (seq << 1u) | 1u;
    next_u32();
    state += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state;
    state = old * 6364136223846793005ULL + inc;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // uniform in [0,1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (one value per call, two uniforms consumed)
  double normal() {
    double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1.0p-32;  // (0,1]
    double u2 = static_cast<double>(next_u32()) * 0x1.0p-32;          // [0,1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  Vec3 uniform_vec3(double lo, double hi) {
    double a = uniform(lo, hi), b = uniform(lo, hi), c = uniform(lo, hi);
    return {a, b, c};
  }
  Vec3 uniform_vec3(const Vec3& lo, const Vec3& hi) {
    double a = uniform(lo.x, hi.x), b = uniform(lo.y, hi.y), c = uniform(lo.z, hi.z);
    return {a, b, c};
  }
};

}  // namespace tela
