#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace attnflow {

/// Philox4x32-10 block function (Salmon et al., Random123). Maps a 128-bit
/// counter and a 64-bit key to 128 pseudo-random bits.
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key) noexcept;

/// Stable 32-bit tag for a purpose string ("init", "data", ...). FNV-1a.
std::uint32_t purpose_tag(std::string_view purpose) noexcept;

/// A named, independently addressable random stream.
///
/// The key is (seed, purpose tag); the counter holds the experiment id and a
/// running block index. Two streams that differ in any of (experiment, seed,
/// purpose) never share blocks, so reordering draws in one stream cannot shift
/// the values seen by another. A stream is a plain value: copying it forks an
/// identical replay, and one instance must not be shared between threads.
class SeedStream {
 public:
  SeedStream(std::uint64_t seed, std::string_view purpose, std::uint32_t experiment = 0) noexcept;

  /// Derive a sub-stream, e.g. one per Monte Carlo worker.
  [[nodiscard]] SeedStream substream(std::uint32_t index) const noexcept;

  std::uint32_t next_u32() noexcept;
  /// Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept;

  [[nodiscard]] std::uint64_t blocks_consumed() const noexcept { return block_; }

 private:
  PhiloxKey key_{};
  std::uint32_t experiment_ = 0;
  std::uint32_t sub_ = 0;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int buffered_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace attnflow
