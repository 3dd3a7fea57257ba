#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "hscm/random.hpp"

using namespace hscm;

// Known answers for Philox4x64-10, cross-checked against numpy.random.Philox
// (which advances its counter once before the first block).
TEST_CASE("philox4x64-10 known answers") {
  const PhiloxCounter zero_key_1 = philox4x64({1, 0, 0, 0}, {0, 0});
  CHECK(zero_key_1 == PhiloxCounter{0x02f4ba6408e4d89bULL, 0x3dd62b0b9ca8c5b2ULL,
                                    0x1c8667a55d902e79ULL, 0x907d7a052fd5b4dcULL});
  const PhiloxCounter zero_key_2 = philox4x64({2, 0, 0, 0}, {0, 0});
  CHECK(zero_key_2 == PhiloxCounter{0x809bf322883987c3ULL, 0x471128b9e807f7ddULL,
                                    0xf250ba0dbec065b7ULL, 0xfc6ed66767a457bcULL});
  const PhiloxKey key{0x0123456789abcdefULL, 0xfedcba9876543210ULL};
  CHECK(philox4x64({2, 2, 3, 4}, key) == PhiloxCounter{0x88e941281d6fe907ULL, 0x5823687dd5272472ULL,
                                                       0x246fd1b93a04f59dULL, 0x5f18e9daf3d87de6ULL});
  CHECK(philox4x64({3, 2, 3, 4}, key) == PhiloxCounter{0xa0177786c22eeb8aULL, 0x03d98f3fd166e544ULL,
                                                       0xaaaf3beb62510fa6ULL, 0x235db640e2fc64ceULL});
}

TEST_CASE("stream walks consecutive blocks") {
  CounterStream s(0, 0);
  s();
  s();
  s();
  s();
  // Second block of the stream is counter (1,0,0,0).
  CHECK(s() == 0x02f4ba6408e4d89bULL);
}

TEST_CASE("streams are reproducible and coordinate-separated") {
  CounterStream a(7, stream_tag::kNoise, 1, 2, 3);
  CounterStream b(7, stream_tag::kNoise, 1, 2, 3);
  CounterStream c(7, stream_tag::kNoise, 1, 2, 4);
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    CHECK(x == b());
    any_diff |= x != c();
  }
  CHECK(any_diff);
}

TEST_CASE("uniform and normal moments") {
  CounterStream s(11, stream_tag::kTests);
  const int n = 200000;
  double su = 0.0, sn = 0.0, sn2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    const double z = s.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(std::abs(su / n - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(sn / n) < 5.0 / std::sqrt(n));
  CHECK(std::abs(sn2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
}

TEST_CASE("below covers its range evenly") {
  CounterStream s(3, stream_tag::kTests);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto v = s.below(7);
    REQUIRE(v < 7);
    ++counts[v];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  CHECK(chi2 < 22.5);  // 0.999 quantile of chi-square with 6 df
  CHECK(s.below(1) == 0);
}

TEST_CASE("derived seeds differ per index") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(42, 5) == derive_seed(42, 5));
  CHECK(derive_seed(42, 5) != derive_seed(43, 5));
}
