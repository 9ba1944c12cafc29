#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every draw is
// a pure function of (key, counter), so a sample can be regenerated anywhere
// without replaying a sequential state.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace feedcap {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Independent named streams of standard normals addressed by
/// (stream, sample, step, component).
class GaussianStreams {
 public:
  enum class Stream : std::uint32_t { InitialState = 1, Driver = 2, Dither = 3 };

  explicit GaussianStreams(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  double normal(Stream stream, std::uint32_t sample, std::uint32_t step,
                std::uint32_t component) const {
    const auto out = Philox4x32::generate(
        {component / 2u, step, sample, static_cast<std::uint32_t>(stream)}, key_);
    const double u1 = to_open_unit(out[0], out[1]);
    const double u2 = to_open_unit(out[2], out[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return (component % 2u == 0u) ? radius * std::cos(angle) : radius * std::sin(angle);
  }

 private:
  // 53-bit uniform on (0, 1).
  static double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  Philox4x32::Key key_;
};

}  // namespace feedcap
