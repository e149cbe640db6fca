#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ptsynth/rng.hpp"

using namespace ptsynth;

// Known-answer vectors published with Random123 (kat_vectors, philox4x32_10).
TEST_CASE("philox4x32-10 known answers") {
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
        PhiloxCounter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        PhiloxCounter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        PhiloxCounter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("splitmix64 reference values") {
  // First two outputs of the reference splitmix64 generator seeded with 0.
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
  CHECK(splitmix64(0x9e3779b97f4a7c15ULL) == 0x6e789e6aa1b965f4ULL);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("streams are reproducible and distinct") {
  KeyedStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  std::vector<std::uint64_t> va, vb, vc, vd;
  for (int i = 0; i < 64; ++i) {
    va.push_back(a.next_u64());
    vb.push_back(b.next_u64());
    vc.push_back(c.next_u64());
    vd.push_back(d.next_u64());
  }
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va != vd);
  CHECK(stream_key(1, "img_1") == stream_key(1, "img_1"));
  CHECK(stream_key(1, "img_1") != stream_key(1, "img_2"));
  CHECK(stream_key(1, "img_1") != stream_key(2, "img_1"));
}

TEST_CASE("uniform draws lie in [0, 1) with the right mean") {
  KeyedStream s(1, 0);
  double sum = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // 6 sigma of the sample mean: sqrt(1/12/n).
  CHECK(std::abs(sum / n - 0.5) < 6 * std::sqrt(1.0 / 12 / n));
}

TEST_CASE("normal draws have unit moments") {
  KeyedStream s(2, 0);
  const int n = 200000;
  double sum = 0, sq = 0, quart = 0;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    sum += z;
    sq += z * z;
    quart += z * z * z * z;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 6 / std::sqrt(double(n)));
  CHECK(std::abs(var - 1.0) < 6 * std::sqrt(2.0 / n));
  CHECK(std::abs(quart / n - 3.0) < 0.1);
}

TEST_CASE("below is bounded and covers its range") {
  KeyedStream s(3, 1);
  for (std::uint64_t bound : {1ULL, 2ULL, 3ULL, 7ULL, 1000ULL}) {
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 20000; ++i) {
      const auto v = s.below(bound);
      REQUIRE(v < bound);
      seen.insert(v);
    }
    CHECK(seen.size() == bound);
  }
  // Roughly uniform over 3 buckets.
  int counts[3] = {};
  for (int i = 0; i < 30000; ++i) ++counts[s.below(3)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 600);
}
