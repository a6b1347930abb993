#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "peevader/bytes.hpp"
#include "peevader/corpusgen.hpp"

namespace testsupport {

// Self-deleting scratch directory.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("pev_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline void write_file(const std::filesystem::path& p, const pev::Bytes& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
}

inline pev::Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return pev::Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Independent little-endian readers -- the "hex dump" route, kept separate
// from the library's parser on purpose.
inline std::uint16_t raw16(const pev::Bytes& b, std::size_t off) {
  return static_cast<std::uint16_t>(b.at(off) | (b.at(off + 1) << 8));
}
inline std::uint32_t raw32(const pev::Bytes& b, std::size_t off) {
  return static_cast<std::uint32_t>(b.at(off)) | (static_cast<std::uint32_t>(b.at(off + 1)) << 8) |
         (static_cast<std::uint32_t>(b.at(off + 2)) << 16) |
         (static_cast<std::uint32_t>(b.at(off + 3)) << 24);
}

// Independent Shannon entropy (bits per byte).
inline double entropy_bits(const std::uint8_t* p, std::size_t n) {
  if (n == 0) return 0.0;
  std::vector<std::uint64_t> counts(256, 0);
  for (std::size_t i = 0; i < n; ++i) ++counts[p[i]];
  double h = 0.0;
  for (std::uint64_t c : counts) {
    if (!c) continue;
    const double prob = static_cast<double>(c) / static_cast<double>(n);
    h -= prob * std::log2(prob);
  }
  return h;
}

// A small malicious-profile image with known layout, handy across suites.
inline pev::GenSpec basic_malicious_spec(std::uint64_t seed) {
  pev::GenSpec spec;
  spec.seed = seed;
  spec.custom_stub = pev::Bytes(0xc0, 0xaa); // e_lfanew = 0x100
  spec.sections.push_back({"xcode", 0xe00, 0x1000,
                           pev::kScnCode | pev::kScnMemExecute | pev::kScnMemRead,
                           pev::EntropyProfile::High});
  spec.sections.push_back({"ydata", 0x5f0, 0x600,
                           pev::kScnInitializedData | pev::kScnMemRead,
                           pev::EntropyProfile::High});
  spec.header_room = 0x80;
  spec.overlay_len = 0x100;
  return spec;
}

} // namespace testsupport
