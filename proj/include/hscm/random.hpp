#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace hscm {

/// Philox4x64-10 counter-based block function (Salmon et al., SC'11).
/// Maps a 256-bit counter and a 128-bit key to 256 pseudo-random bits.
using PhiloxCounter = std::array<std::uint64_t, 4>;
using PhiloxKey = std::array<std::uint64_t, 2>;
PhiloxCounter philox4x64(PhiloxCounter counter, PhiloxKey key);

/// Sequential random stream over Philox4x64-10.
///
/// The key is (seed, tag) and three of the four counter words are fixed
/// coordinates (a, b, c); the remaining word enumerates blocks. Two streams with
/// different coordinates never share output, so each simulated quantity can own
/// a stream and its draws do not depend on the order in which other quantities
/// are sampled.
///
/// All conversions to real numbers are defined here rather than through
/// <random> distributions, whose algorithms differ between standard libraries.
class CounterStream {
 public:
  using result_type = std::uint64_t;

  CounterStream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                std::uint64_t b = 0, std::uint64_t c = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

 private:
  PhiloxKey key_;
  PhiloxCounter counter_;
  PhiloxCounter block_{};
  int position_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stream tags. Distinct purposes never share a key.
namespace stream_tag {
inline constexpr std::uint64_t kGraph = 0x6772617068ULL;
inline constexpr std::uint64_t kFunctions = 0x66756e6373ULL;
inline constexpr std::uint64_t kNoise = 0x6e6f697365ULL;
inline constexpr std::uint64_t kIntervene = 0x696e7476ULL;
inline constexpr std::uint64_t kReplicate = 0x7265706cULL;
inline constexpr std::uint64_t kTests = 0x74657374ULL;
}  // namespace stream_tag

/// Derives a child seed from a master seed and an index (e.g. a replicate number).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace hscm
