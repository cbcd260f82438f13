#pragma once

#include <cstdint>

namespace liftuq {

/// Counter-based random stream (Philox4x32-10).
///
/// The seed is the Philox key, the stream id occupies the upper half of the
/// 128-bit counter and the draw index the lower half, so value number k of
/// stream (seed, id) is a pure function of (seed, id, k). Forking derives a
/// child key from the parent's (seed, id) and never touches the parent.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t draws() const { return counter_; }

  /// Child stream keyed by (seed, stream_id) of this stream and `child_id`.
  RngStream fork(std::uint64_t child_id) const;

  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller (two uniforms per draw).
  double normal();
  bool bernoulli(double prob_true) { return uniform() < prob_true; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_ = 0;
};

inline RngStream rng_fork(const RngStream& parent, std::uint64_t stream_id) {
  return parent.fork(stream_id);
}

/// Philox4x32-10 block function, exposed for tests.
void philox4x32(const std::uint32_t counter[4], const std::uint32_t key[2], std::uint32_t out[4]);

}  // namespace liftuq
