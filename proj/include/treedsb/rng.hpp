#pragma once

#include <cstdint>
#include <limits>

namespace treedsb {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mixes a run seed with (stream, counter) coordinates into one key.
inline std::uint64_t substream_key(std::uint64_t seed, std::uint64_t stream,
                                   std::uint64_t counter) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (stream * 0xd1b54a32d192ed03ULL));
  h = splitmix64(h ^ (counter * 0xabc98388fb8fac03ULL));
  return h;
}

// Counter-based uniform bit generator: output i is splitmix64(key + i).
// Usable with <random> distributions.
class CounterEngine {
 public:
  using result_type = std::uint64_t;

  explicit CounterEngine(std::uint64_t key) : key_(key) {}
  CounterEngine(std::uint64_t seed, std::uint64_t stream,
                std::uint64_t counter)
      : key_(substream_key(seed, stream, counter)) {}

  static constexpr result_type min() {
    return 0;
  }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() {
    return splitmix64(key_ + 0x632be59bd9b4e019ULL * (++count_));
  }

 private:
  std::uint64_t key_;
  std::uint64_t count_ = 0;
};

}  // namespace treedsb
