#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "peevader/bytes.hpp"
#include "peevader/errors.hpp"

namespace pev {

struct BankName {
  std::array<std::uint8_t, 8> name{};
  std::uint32_t count = 0;
};

struct BankBlock {
  std::array<std::uint8_t, 8> source{}; // section the bytes came from
  Bytes data;
};

// Benign byte blocks and section names harvested from a goodware directory.
// Immutable after build; sampling is a pure function of (bank, rng stream).
class ContentBank {
public:
  // Harvests names and up to 8 blocks of 4 KiB per section, files visited in
  // sorted-name order. Throws EmptyBank when nothing parses.
  static ContentBank build(const std::filesystem::path& dir);

  static ContentBank load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  static ContentBank from_parts(std::vector<BankName> names, std::vector<BankBlock> blocks);
  static ContentBank none() { return ContentBank(); }

  // Exactly len bytes assembled from rng-chosen blocks; a block longer than
  // the remainder contributes a random contiguous sub-range.
  Bytes sample_block(std::uint64_t len, Rng& rng) const;

  // Name drawn weighted by occurrence count.
  std::array<std::uint8_t, 8> sample_name(Rng& rng) const;

  bool has_blocks() const { return !blocks_.empty(); }
  bool has_names() const { return !names_.empty(); }
  const std::vector<BankName>& names() const { return names_; }
  const std::vector<BankBlock>& blocks() const { return blocks_; }
  std::uint64_t seed_digest() const { return digest_; }

private:
  ContentBank() = default;
  void refresh_digest();
  Bytes serialize() const;

  std::vector<BankName> names_;
  std::vector<BankBlock> blocks_;
  std::uint64_t digest_ = 0;
};

inline constexpr char kBankMagic[8] = {'P', 'E', 'B', 'A', 'N', 'K', '0', '1'};
inline constexpr std::uint64_t kBankBlockSize = 4096;
inline constexpr std::uint64_t kBankBlocksPerSection = 8;
inline constexpr std::uint64_t kBankMaxBlockSize = 64 * 1024;

} // namespace pev
