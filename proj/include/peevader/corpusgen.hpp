#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "peevader/bytes.hpp"
#include "peevader/pe_model.hpp"

namespace pev {

enum class EntropyProfile { Low, High };

struct GenSection {
  std::string name; // up to 8 chars
  std::uint32_t virtual_size = 0;
  std::uint32_t raw_size = 0; // multiple of 0x200
  std::uint32_t characteristics = kScnInitializedData | kScnMemRead;
  EntropyProfile entropy = EntropyProfile::Low;
};

// Deterministic synthetic PE description. Generated files use
// file_alignment 0x200, section_alignment 0x1000, PE32+ headers.
struct GenSpec {
  std::vector<GenSection> sections;
  std::optional<Bytes> custom_stub; // nullopt = canonical 0x80-byte DOS region
  std::uint32_t overlay_len = 0;
  std::uint32_t header_room = 0; // free bytes guaranteed after the section table
  std::uint64_t seed = 0;
};

inline constexpr std::uint32_t kGenFileAlignment = 0x200;
inline constexpr std::uint32_t kGenSectionAlignment = 0x1000;

// Emits a parseable PE matching the spec; throws InvalidSpec.
Bytes generate(const GenSpec& spec);

enum class Profile { Benign, Malicious, MaliciousNoHeaderRoom };

std::string to_string(Profile p);
std::optional<Profile> profile_from_string(std::string_view s);

// n distinct files, every one on the profile's side of the 0.5 builtin
// threshold (verified; InvalidSpec on violation). Malicious files carry
// header room, section slack with NOP runs, and a non-canonical stub;
// the no-header-room sub-profile leaves under 40 bytes after the table.
std::vector<Bytes> generate_suite(std::size_t n, Profile profile, std::uint64_t seed);

// Writes a suite as <prefix>_<index>.exe files into dir.
std::vector<std::filesystem::path> write_suite(const std::filesystem::path& dir, std::size_t n,
                                               Profile profile, std::uint64_t seed);

} // namespace pev
