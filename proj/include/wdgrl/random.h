#ifndef WDGRL_RANDOM_H_
#define WDGRL_RANDOM_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace wdgrl {

using Rng = std::mt19937_64;

// Seed for a named sub-stream ("init.critic", "batching", ...). Streams
// derived from one master seed are independent of each other and of the
// order in which they are requested.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(derive_seed(seed, stream));
}

}  // namespace wdgrl

#endif  // WDGRL_RANDOM_H_
