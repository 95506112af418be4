#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace arnet {

// Scalar type of activations and weights.  Chosen per build: the shipping
// library uses float, the gradient-check build uses double.  Metric code is
// always double regardless of this.
using Real = ARNET_REAL;

// Thrown for malformed inputs: bad files, bad label vectors, bad configs.
// The CLI maps these to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DataError(msg);
}

// FNV-1a, used for dataset/vocabulary fingerprints and golden image hashes.
// The raw-memory form has its own name: with an overload, a string literal
// plus a seed silently picks the pointer signature and the seed becomes a
// byte count.
inline std::uint64_t fnv1a_bytes(const void* data, std::size_t n,
                                 std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t h = 1469598103934665603ull) {
  return fnv1a_bytes(s.data(), s.size(), h);
}

std::string to_hex(std::uint64_t v);

// Splits one master seed into independent stream seeds (splitmix64).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace arnet
