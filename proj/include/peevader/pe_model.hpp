#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "peevader/bytes.hpp"
#include "peevader/errors.hpp"

namespace pev {

inline constexpr std::uint64_t kMaxPeFileSize = 256ULL * 1024 * 1024;

// section characteristics bits the toolkit cares about
inline constexpr std::uint32_t kScnCode = 0x00000020;
inline constexpr std::uint32_t kScnInitializedData = 0x00000040;
inline constexpr std::uint32_t kScnMemExecute = 0x20000000;
inline constexpr std::uint32_t kScnMemRead = 0x40000000;
inline constexpr std::uint32_t kScnMemWrite = 0x80000000;

struct DosRegion {
  std::uint32_t e_lfanew = 0; // file offset of the "PE\0\0" signature

  bool operator==(const DosRegion&) const = default;
};

struct CoffHeader {
  std::uint16_t machine = 0;
  std::uint16_t number_of_sections = 0;
  std::uint16_t size_of_optional_header = 0;
  std::uint16_t characteristics = 0;

  bool operator==(const CoffHeader&) const = default;
};

struct OptionalView {
  std::uint16_t magic = 0; // 0x10b = PE32, 0x20b = PE32+
  std::uint32_t size_of_headers = 0;
  std::uint32_t file_alignment = 0;
  std::uint32_t section_alignment = 0;
  std::uint32_t address_of_entry_point = 0;
  std::uint32_t size_of_image = 0;
  std::uint64_t checksum_offset = 0; // file offset of the CheckSum field

  bool operator==(const OptionalView&) const = default;
};

struct SectionRecord {
  std::array<std::uint8_t, 8> name{};
  std::uint32_t virtual_size = 0;
  std::uint32_t virtual_address = 0;
  std::uint32_t raw_size = 0;
  std::uint32_t raw_ptr = 0;
  std::uint32_t characteristics = 0;

  std::string name_str() const; // trailing NULs stripped
  bool executable() const { return (characteristics & (kScnMemExecute | kScnCode)) != 0; }
  std::uint32_t mapped_size() const { return virtual_size < raw_size ? virtual_size : raw_size; }

  bool operator==(const SectionRecord&) const = default;
};

struct SlackRegion {
  std::size_t section_index;
  std::uint64_t offset; // file offset of the first slack byte
  std::uint64_t length;
};

// Parsed, re-serializable view of a PE file. The raw bytes are the source of
// truth; header fields are views into them. Instances are immutable once
// parsed -- transforms patch a copy of the bytes and reparse.
class PeImage {
public:
  const Bytes& bytes() const { return raw_; }
  std::uint64_t size() const { return raw_.size(); }

  const DosRegion& dos() const { return dos_; }
  const CoffHeader& coff() const { return coff_; }
  const OptionalView& opt() const { return opt_; }
  const std::vector<SectionRecord>& sections() const { return sections_; }

  // first byte past the last section's raw extent (end of file when no
  // section has raw data)
  std::uint64_t overlay_offset() const { return overlay_offset_; }
  std::uint64_t overlay_length() const { return raw_.size() - overlay_offset_; }

  // nonzero security data-directory entry seen at parse
  bool is_signed() const { return signed_; }

  std::uint64_t section_table_offset() const { return section_table_offset_; }
  // file offset of the security directory entry, 0 when the image has no slot for it
  std::uint64_t security_dir_offset() const { return security_dir_offset_; }

  // everything a DOS attack may touch: raw[2, e_lfanew)
  ByteView stub_bytes() const;

  friend bool operator==(const PeImage& a, const PeImage& b) { return a.raw_ == b.raw_; }

private:
  friend PeImage parse_pe(ByteView bytes);
  friend Bytes serialize_pe(const PeImage& img);
  PeImage() = default;

  Bytes raw_;
  DosRegion dos_;
  CoffHeader coff_;
  OptionalView opt_;
  std::vector<SectionRecord> sections_;
  std::uint64_t overlay_offset_ = 0;
  bool signed_ = false;
  std::uint64_t section_table_offset_ = 0;
  std::uint64_t security_dir_offset_ = 0;
};

// Throws MalformedPe on anything the toolkit does not accept.
PeImage parse_pe(ByteView bytes);

// Returns the raw bytes after re-checking that they still parse to the same
// view; throws InconsistentModel otherwise.
Bytes serialize_pe(const PeImage& img);

// Writable ranges past each section's mapped bytes, in section order.
std::vector<SlackRegion> locate_slack(const PeImage& img);

// Zeroes the optional header CheckSum field.
PeImage update_checksum(const PeImage& img);

// Line-oriented header dump, one `name = hex-value` per line.
std::string inspect_pe(const PeImage& img);

// The 128-byte DOS region (header + classic stub, e_lfanew = 0x80) that
// canonical-stub generated files start with and the builtin scorer tests against.
ByteView canonical_dos_region();

std::uint64_t align_up(std::uint64_t v, std::uint64_t a);

} // namespace pev
