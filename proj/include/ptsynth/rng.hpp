#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace ptsynth {

// Philox4x32-10 block function (Salmon et al., SC'11). Pure function of
// (counter, key), which is what makes keyed streams schedule-independent.
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

// Derives a stream key from a run seed and a string identity (image id).
std::uint64_t stream_key(std::uint64_t seed, std::string_view identity);

// Random stream addressed by (key, stream). Draw b of a stream is
// philox(counter = {b_lo, b_hi, stream_lo, stream_hi}, key), so any two
// (key, stream) pairs give independent sequences and no state is shared.
class KeyedStream {
 public:
  KeyedStream(std::uint64_t key, std::uint64_t stream) noexcept;

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via Box-Muller; both outputs of each pair are used.
  double normal();
  // Uniform integer in [0, bound), bound >= 1. Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t bound);

 private:
  void refill();

  PhiloxKey key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ptsynth
