#pragma once

// Counter-based random streams (Philox4x32-10). Every Monte Carlo replicate
// owns the stream keyed by (master_seed, replicate_index), so results do not
// depend on how replicates are scheduled across workers.

#include <cmath>
#include <cstdint>

namespace gfftree {

namespace detail {

inline void philox_mulhilo(std::uint32_t a, std::uint32_t b,
                           std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

struct PhiloxBlock {
  std::uint32_t v[4];
};

// One 128-bit block of Philox4x32-10.
inline PhiloxBlock philox4x32(std::uint32_t c0, std::uint32_t c1,
                              std::uint32_t c2, std::uint32_t c3,
                              std::uint32_t k0, std::uint32_t k1) {
  constexpr std::uint32_t m0 = 0xD2511F53u;
  constexpr std::uint32_t m1 = 0xCD9E8D57u;
  constexpr std::uint32_t b0 = 0x9E3779B9u;
  constexpr std::uint32_t b1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    philox_mulhilo(m0, c0, hi0, lo0);
    philox_mulhilo(m1, c2, hi1, lo1);
    const std::uint32_t n0 = hi1 ^ c1 ^ k0;
    const std::uint32_t n1 = lo1;
    const std::uint32_t n2 = hi0 ^ c3 ^ k1;
    const std::uint32_t n3 = lo0;
    c0 = n0; c1 = n1; c2 = n2; c3 = n3;
    k0 += b0; k1 += b1;
  }
  return PhiloxBlock{{c0, c1, c2, c3}};
}

}  // namespace detail

// A deterministic stream of uniforms/Gaussians. The block counter advances
// within the stream; (seed, stream) select the keyed sequence.
class RandomStream {
 public:
  RandomStream(std::uint64_t master_seed, std::uint64_t stream_index)
      : seed_(master_seed), stream_(stream_index) {}

  std::uint64_t next_u64() {
    if (have_ == 0) refill();
    --have_;
    const std::uint64_t r = buf_[have_];
    return r;
  }

  // Uniform on (0,1]: never returns 0, so log() stays finite.
  double next_unit() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Uniform on [0,n).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(next_unit() * static_cast<double>(n)) % n;
  }

  double next_gaussian() {
    if (have_gauss_) {
      have_gauss_ = false;
      return gauss_;
    }
    const double u1 = next_unit();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    gauss_ = r * std::sin(a);
    have_gauss_ = true;
    return r * std::cos(a);
  }

 private:
  void refill() {
    const auto b = detail::philox4x32(
        static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32),
        static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32));
    ++block_;
    buf_[0] = (static_cast<std::uint64_t>(b.v[0]) << 32) | b.v[1];
    buf_[1] = (static_cast<std::uint64_t>(b.v[2]) << 32) | b.v[3];
    have_ = 2;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::uint64_t buf_[2] = {0, 0};
  int have_ = 0;
  bool have_gauss_ = false;
  double gauss_ = 0.0;
};

}  // namespace gfftree
