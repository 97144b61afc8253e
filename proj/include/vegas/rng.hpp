#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace vegas {

/// Identifies one independent random stream: which stage, which optimizer
/// step, which sample inside the step.
struct StreamKey {
  std::uint64_t stage = 0;
  std::uint64_t step = 0;
  std::uint64_t sample = 0;
};

/// Counter-based generator. Draw i of a stream is a pure function of
/// (seed, key, i), so results never depend on thread scheduling or on how
/// many draws other streams consumed.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamKey key);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal via Box-Muller; uses only next_u64 so it is portable.
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  /// Independent stream derived from this stream's key and `index`.
  RngStream child(std::uint64_t index) const;

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      auto j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

  /// Sorted k-subset of {0, ..., n-1}.
  std::vector<int> choose(int n, int k);

  std::uint64_t seed() const noexcept { return seed_; }
  const StreamKey& key() const noexcept { return key_; }

 private:
  RngStream(std::uint64_t seed, StreamKey key, std::uint64_t base);

  std::uint64_t seed_;
  StreamKey key_;
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace vegas
