#include <doctest.h>

#include <cmath>
#include <set>

#include "tela/math.hpp"
#include "tela/rng.hpp"

using namespace tela;

TEST_CASE("vec3 arithmetic identities") {
  Vec3 a{1.5, -2.0, 0.25}, b{-0.5, 3.0, 4.0};
  CHECK((a + b).x == doctest::Approx(1.0));
  CHECK((a - b).y == doctest::Approx(-5.0));
  CHECK(dot(a, b) == doctest::Approx(1.5 * -0.5 + -2.0 * 3.0 + 0.25 * 4.0));
  Vec3 c = cross(a, b);
  // cross product is orthogonal to both inputs
  CHECK(dot(c, a) == doctest::Approx(0.0));
  CHECK(dot(c, b) == doctest::Approx(0.0));
  CHECK(cross(Vec3{1, 0, 0}, Vec3{0, 1, 0}).z == doctest::Approx(1.0));
  CHECK(a.normalized().norm() == doctest::Approx(1.0));
  CHECK((2.0 * a).x == doctest::Approx(3.0));
  CHECK(a.cwise_mul(b).z == doctest::Approx(1.0));
  CHECK(a[0] == 1.5);
  CHECK(a[2] == 0.25);
}

TEST_CASE("mat3 multiply, transpose, orthonormality") {
  Mat3 id = Mat3::identity();
  CHECK(id.orthonormality_error() == doctest::Approx(0.0));
  Vec3 v{1, 2, 3};
  Vec3 iv = id * v;
  CHECK(iv.x == 1.0);
  CHECK(iv.y == 2.0);
  CHECK(iv.z == 3.0);

  // 90 degree rotation about z
  Mat3 r = Mat3::from_rows({0, -1, 0}, {1, 0, 0}, {0, 0, 1});
  CHECK(r.orthonormality_error() < 1e-15);
  Vec3 rv = r * Vec3{1, 0, 0};
  CHECK(rv.x == doctest::Approx(0.0));
  CHECK(rv.y == doctest::Approx(1.0));
  // R^T undoes R
  Vec3 back = r.transposed() * rv;
  CHECK(back.x == doctest::Approx(1.0));
  CHECK(back.y == doctest::Approx(0.0));

  // matrix product agrees with applying twice
  Vec3 twice = (r * r) * Vec3{1, 0, 0};
  CHECK(twice.x == doctest::Approx(-1.0));
  CHECK(twice.y == doctest::Approx(0.0));
}

TEST_CASE("aabb predicates") {
  Aabb box{{-1, -1, -1}, {1, 1, 1}};
  CHECK(box.valid());
  CHECK(box.contains({0, 0, 0}));
  CHECK(box.contains({1, 1, 1}));  // boundary inclusive
  CHECK(!box.contains({1.0001, 0, 0}));
  CHECK(!Aabb{{1, 0, 0}, {0, 1, 1}}.valid());
  CHECK(box.intersects(Aabb{{0.5, 0.5, 0.5}, {2, 2, 2}}));
  CHECK(!box.intersects(Aabb{{1.5, 1.5, 1.5}, {2, 2, 2}}));
  CHECK(box.extent().x == 2.0);
  CHECK(box.center().x == 0.0);
  CHECK(box.dilated(0.25).hi.z == doctest::Approx(1.25));
}

TEST_CASE("exp_neg clamps the exponent") {
  CHECK(exp_neg(0.0) == 1.0);
  CHECK(exp_neg(1.0) == doctest::Approx(std::exp(-1.0)));
  CHECK(exp_neg(200.0) == exp_neg(80.0));
  CHECK(exp_neg(200.0) > 0.0);
}

TEST_CASE("mix64 separates nearby keys") {
  // tuple streams must differ in every component
  std::set<uint64_t> seen;
  for (uint64_t s = 0; s < 8; ++s)
    for (uint64_t i = 0; i < 8; ++i)
      for (uint64_t p = 0; p < 8; ++p) seen.insert(mix64(s, i, p));
  CHECK(seen.size() == 8 * 8 * 8);
  // argument order matters
  CHECK(mix64(1, 2) != mix64(2, 1));
  CHECK(mix64(1, 2, 3) != mix64(3, 2, 1));
}

TEST_CASE("pcg32 streams are reproducible and seed-sensitive") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    uint32_t va = a.next_u32();
    CHECK(va == b.next_u32());
  }
  int differs = 0;
  Rng a2(42);
  for (int i = 0; i < 100; ++i) differs += a2.next_u32() != c.next_u32();
  CHECK(differs > 90);
}

TEST_CASE("pcg32 uniform range and moments") {
  Rng rng(7);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(0.02));

  double lo = 3.0, hi = 9.0;
  for (int i = 0; i < 1000; ++i) {
    double u = rng.uniform(lo, hi);
    REQUIRE(u >= lo);
    REQUIRE(u < hi);
  }
}

TEST_CASE("pcg32 normal moments") {
  Rng rng(11);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double g = rng.normal();
    sum += g;
    sq += g * g;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("uniform_vec3 respects per-axis bounds") {
  Rng rng(3);
  Vec3 lo{-1, 0, 2}, hi{1, 0.5, 3};
  for (int i = 0; i < 1000; ++i) {
    Vec3 p = rng.uniform_vec3(lo, hi);
    REQUIRE(p.x >= lo.x);
    REQUIRE(p.x < hi.x);
    REQUIRE(p.y >= lo.y);
    REQUIRE(p.y < hi.y);
    REQUIRE(p.z >= lo.z);
    REQUIRE(p.z < hi.z);
  }
}
