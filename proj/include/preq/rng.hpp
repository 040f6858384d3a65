#pragma once

#include <cstdint>
#include <random>

namespace preq {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

// Stream tags for derive_seed, so unrelated consumers of one base seed never collide.
namespace seed_tag {
inline constexpr std::uint64_t train_split = 0x7472;
inline constexpr std::uint64_t eval_split = 0x6576;
inline constexpr std::uint64_t frequencies = 0x6672;
inline constexpr std::uint64_t hmm_banks = 0x686d;
inline constexpr std::uint64_t hmm_split = 0x6873;
inline constexpr std::uint64_t init = 0x696e;
inline constexpr std::uint64_t batching = 0x6261;
inline constexpr std::uint64_t queries = 0x7175;
}  // namespace seed_tag

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>{}(rng); }
inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>{lo, hi}(rng);
}
inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>{lo, hi}(rng);
}

}  // namespace preq
