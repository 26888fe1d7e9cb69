#pragma once

#include <cstdint>

namespace dukf {

/// What a random stream is used for.  Each (purpose, run, step, node/link)
/// combination gets its own statistically independent stream, so the draw
/// order inside one consumer can never perturb another consumer.  That is
/// what makes runs byte-for-byte reproducible regardless of thread count,
/// and what lets different filter variants share the same noise realization.
enum class Purpose : std::uint64_t {
  Placement = 1,
  ProcessNoise = 2,
  MeasNoise = 3,
  AddNoise = 4,
  FadingTheta = 5,
  FadingEps = 6,
  LinkGamma = 7,
  LinkGammaPlus = 8,
  LinkQ = 9,
};

/// Identifies one logical stream.  Node-scoped draws set `a` to the node id;
/// link-scoped draws set `a` to the source and `b` to the destination.
struct StreamId {
  std::uint64_t run = 0;
  std::uint64_t step = 0;
  std::uint64_t a = 0;
  std::uint64_t b = 0;
  Purpose purpose = Purpose::Placement;
};

namespace detail {

// splitmix64 finalizer (Stafford mix 13).  Bijective on 64-bit words, so
// distinct absorbed key sequences cannot collide into the same state unless
// the full 64-bit sum wraps identically, which the golden-ratio stride makes
// astronomically unlikely for the small ids used here.
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

}  // namespace detail

/// Counter-based deterministic random stream.  The state is derived by
/// absorbing (seed, run, step, a, b, purpose) through a 64-bit mixer; draws
/// then walk a splitmix64 sequence.  No global state, trivially copyable.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, const StreamId& id) {
    std::uint64_t s = detail::mix64(master_seed + 0x9e3779b97f4a7c15ULL);
    s = detail::mix64(s ^ detail::mix64(id.run + 0x243f6a8885a308d3ULL));
    s = detail::mix64(s ^ detail::mix64(id.step + 0x13198a2e03707344ULL));
    s = detail::mix64(s ^ detail::mix64(id.a + 0xa4093822299f31d0ULL));
    s = detail::mix64(s ^ detail::mix64(id.b + 0x082efa98ec4e6c89ULL));
    s = detail::mix64(s ^ detail::mix64(static_cast<std::uint64_t>(id.purpose) +
                                        0x452821e638d01377ULL));
    state_ = s;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::mix64(state_);
  }

  /// Uniform draw strictly inside (0, 1); both endpoints are unreachable, so
  /// the result is always safe to pass through log() or a quantile function.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::uint64_t state_;
};

/// Hands out streams for one Monte-Carlo run.  All consumers go through this
/// so the key layout lives in exactly one place.
class StreamFactory {
 public:
  StreamFactory(std::uint64_t master_seed, std::uint64_t run)
      : seed_(master_seed), run_(run) {}

  RngStream node_stream(Purpose p, std::uint64_t step, std::uint64_t node) const {
    return RngStream(seed_, StreamId{run_, step, node, 0, p});
  }

  /// Link streams are keyed by (source, destination), i.e. direction matters.
  RngStream link_stream(Purpose p, std::uint64_t step, std::uint64_t src,
                        std::uint64_t dst) const {
    return RngStream(seed_, StreamId{run_, step, src, dst, p});
  }

  RngStream run_stream(Purpose p) const {
    return RngStream(seed_, StreamId{run_, 0, 0, 0, p});
  }

  std::uint64_t run() const { return run_; }

 private:
  std::uint64_t seed_;
  std::uint64_t run_;
};

}  // namespace dukf
