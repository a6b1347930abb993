#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pev {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::uint16_t rd16(ByteView b, std::size_t off);
std::uint32_t rd32(ByteView b, std::size_t off);
void wr16(std::uint8_t* p, std::uint16_t v);
void wr32(std::uint8_t* p, std::uint32_t v);

// 64-bit FNV-1a. Used for sample ids, memo-cache keys and bank digests.
std::uint64_t fnv1a64(ByteView b, std::uint64_t basis = 0xcbf29ce484222325ULL);

// zero-padded 16-char lower-case hex
std::string hex_u64(std::uint64_t v);

// Derive an independent stream seed from two seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Deterministic generator (splitmix64 core). All randomness in the toolkit
// flows through this type so results do not depend on stdlib distribution
// implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  std::uint64_t below(std::uint64_t n); // uniform in [0, n), n >= 1
  double unit();                        // uniform in [0, 1)
  double normal();                      // standard normal (Box-Muller)
  double gamma(double shape);           // shape > 0, unit scale
  void fill(std::uint8_t* dst, std::size_t n);

private:
  double unit_pos(); // uniform in (0, 1]

  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

} // namespace pev
