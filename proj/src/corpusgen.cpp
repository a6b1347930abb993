#include "peevader/corpusgen.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "peevader/oracle.hpp"

namespace pev {

namespace {

constexpr std::uint32_t kExecChars = kScnCode | kScnMemExecute | kScnMemRead;
constexpr std::uint32_t kDataChars = kScnInitializedData | kScnMemRead;
constexpr std::uint32_t kRwDataChars = kScnInitializedData | kScnMemRead | kScnMemWrite;

const char* kPhrases[] = {
    "Copyright (c) Contoso Software Corporation. All rights reserved. ",
    "The quick brown fox jumps over the lazy dog while the band plays on. ",
    "Licensed for distribution under standard commercial terms and conditions. ",
    "Initialization complete; background service entering its steady state. ",
};

void fill_low_entropy(std::uint8_t* dst, std::size_t n, Rng& rng) {
  const char* phrase = kPhrases[rng.below(std::size(kPhrases))];
  const std::size_t plen = std::strlen(phrase);
  std::size_t src = rng.below(plen);
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = static_cast<std::uint8_t>(phrase[src]);
    src = (src + 1) % plen;
  }
}

} // namespace

std::string to_string(Profile p) {
  switch (p) {
    case Profile::Benign: return "benign";
    case Profile::Malicious: return "malicious";
    case Profile::MaliciousNoHeaderRoom: return "malicious-nohdr";
  }
  return "unknown";
}

std::optional<Profile> profile_from_string(std::string_view s) {
  if (s == "benign") return Profile::Benign;
  if (s == "malicious") return Profile::Malicious;
  if (s == "malicious-nohdr") return Profile::MaliciousNoHeaderRoom;
  return std::nullopt;
}

Bytes generate(const GenSpec& spec) {
  const std::uint32_t fa = kGenFileAlignment;
  const std::uint32_t sa = kGenSectionAlignment;

  for (const auto& s : spec.sections) {
    if (s.name.size() > 8) throw InvalidSpec("section name longer than 8 chars");
    if (s.raw_size % fa != 0) throw InvalidSpec("raw_size must be a multiple of 0x200");
  }

  std::uint32_t e_lfanew = 0x80;
  if (spec.custom_stub) {
    if (0x40 + spec.custom_stub->size() > 0x10000) throw InvalidSpec("stub too long");
    e_lfanew = static_cast<std::uint32_t>(0x40 + spec.custom_stub->size());
  }

  const std::size_t nsec = spec.sections.size();
  const std::uint32_t opt_size = 240; // PE32+, 16 data directories
  const std::uint64_t table_off = std::uint64_t(e_lfanew) + 24 + opt_size;
  const std::uint64_t table_end = table_off + 40 * nsec;
  const std::uint64_t soh = align_up(table_end + spec.header_room, fa);

  // sequential raw layout; zero-size sections keep raw_ptr 0
  std::vector<std::uint32_t> raw_ptrs(nsec, 0);
  std::uint64_t raw_cursor = soh;
  for (std::size_t i = 0; i < nsec; ++i) {
    if (spec.sections[i].raw_size == 0) continue;
    raw_ptrs[i] = static_cast<std::uint32_t>(raw_cursor);
    raw_cursor += spec.sections[i].raw_size;
  }

  std::vector<std::uint32_t> vas(nsec, 0);
  std::uint64_t va_cursor = align_up(soh, sa);
  for (std::size_t i = 0; i < nsec; ++i) {
    vas[i] = static_cast<std::uint32_t>(va_cursor);
    const std::uint32_t vs = spec.sections[i].virtual_size;
    va_cursor = align_up(va_cursor + (vs ? vs : 1), sa);
  }
  const std::uint32_t size_of_image =
      static_cast<std::uint32_t>(nsec ? va_cursor : align_up(soh, sa));

  std::uint32_t entry = 0;
  std::uint32_t base_of_code = 0;
  std::uint32_t size_of_code = 0;
  std::uint32_t size_of_data = 0;
  for (std::size_t i = 0; i < nsec; ++i) {
    const auto& s = spec.sections[i];
    const bool exec = (s.characteristics & (kScnMemExecute | kScnCode)) != 0;
    if (exec) {
      size_of_code += s.raw_size;
      if (base_of_code == 0) base_of_code = vas[i];
      if (entry == 0 && s.virtual_size >= 64 && s.raw_size >= 64) entry = vas[i];
    } else {
      size_of_data += s.raw_size;
    }
  }

  Bytes b(raw_cursor + spec.overlay_len, 0);
  Rng rng(spec.seed);

  // DOS region
  if (!spec.custom_stub) {
    const ByteView canon = canonical_dos_region();
    std::memcpy(b.data(), canon.data(), canon.size());
  } else {
    b[0] = 'M';
    b[1] = 'Z';
    rng.fill(b.data() + 2, 0x3c - 2);
    wr32(b.data() + 0x3c, e_lfanew);
    if (!spec.custom_stub->empty())
      std::memcpy(b.data() + 0x40, spec.custom_stub->data(), spec.custom_stub->size());
  }

  // PE signature + COFF
  std::uint8_t* p = b.data() + e_lfanew;
  p[0] = 'P';
  p[1] = 'E';
  wr16(p + 4, 0x8664); // machine: x64
  wr16(p + 6, static_cast<std::uint16_t>(nsec));
  wr16(p + 20, static_cast<std::uint16_t>(opt_size));
  wr16(p + 22, 0x0022); // EXECUTABLE_IMAGE | LARGE_ADDRESS_AWARE

  // optional header (PE32+)
  std::uint8_t* o = p + 24;
  wr16(o + 0, 0x20b);
  o[2] = 14; // linker version
  o[3] = 0;
  wr32(o + 4, size_of_code);
  wr32(o + 8, size_of_data);
  wr32(o + 16, entry);
  wr32(o + 20, base_of_code);
  wr32(o + 24, 0x40000000); // ImageBase = 0x1'4000'0000
  wr32(o + 28, 0x00000001);
  wr32(o + 32, sa);
  wr32(o + 36, fa);
  wr16(o + 40, 6); // OS version 6.0
  wr16(o + 48, 6); // subsystem version 6.0
  wr32(o + 56, size_of_image);
  wr32(o + 60, static_cast<std::uint32_t>(soh));
  wr32(o + 64, 0); // CheckSum
  wr16(o + 68, 3); // console subsystem
  wr32(o + 72, 0x00100000); // stack reserve
  wr32(o + 80, 0x00001000); // stack commit
  wr32(o + 88, 0x00100000); // heap reserve
  wr32(o + 96, 0x00001000); // heap commit
  wr32(o + 108, 16); // NumberOfRvaAndSizes; directories stay zero

  // section table
  for (std::size_t i = 0; i < nsec; ++i) {
    const auto& s = spec.sections[i];
    std::uint8_t* e = b.data() + table_off + 40 * i;
    std::memcpy(e, s.name.data(), s.name.size());
    wr32(e + 8, s.virtual_size);
    wr32(e + 12, vas[i]);
    wr32(e + 16, s.raw_size);
    wr32(e + 20, raw_ptrs[i]);
    wr32(e + 36, s.characteristics);
  }

  // section contents: mapped bytes per entropy profile, slack = NOP run for
  // executable sections, zero otherwise
  for (std::size_t i = 0; i < nsec; ++i) {
    const auto& s = spec.sections[i];
    if (s.raw_size == 0) continue;
    const std::uint32_t mapped = std::min(s.virtual_size, s.raw_size);
    std::uint8_t* dst = b.data() + raw_ptrs[i];
    if (s.entropy == EntropyProfile::High)
      rng.fill(dst, mapped);
    else
      fill_low_entropy(dst, mapped, rng);
    const bool exec = (s.characteristics & (kScnMemExecute | kScnCode)) != 0;
    if (exec && mapped < s.raw_size) std::memset(dst + mapped, 0x90, s.raw_size - mapped);
  }

  if (spec.overlay_len > 0) rng.fill(b.data() + raw_cursor, spec.overlay_len);
  return b;
}

namespace {

std::string random_lowercase_name(Rng& rng, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  std::string s(len, 'a');
  for (auto& c : s) c = static_cast<char>('a' + rng.below(26));
  return s;
}

GenSpec benign_spec(Rng& rng) {
  GenSpec spec;
  spec.seed = rng.next();
  const std::size_t nsec = 2 + rng.below(2);
  const char* names[] = {".text", ".rdata", ".data"};
  for (std::size_t i = 0; i < nsec; ++i) {
    GenSection s;
    s.name = names[i];
    s.raw_size = static_cast<std::uint32_t>((2 + rng.below(7)) * kGenFileAlignment);
    s.virtual_size = s.raw_size - static_cast<std::uint32_t>(rng.below(0x80));
    s.characteristics = i == 0 ? kExecChars : (i == 1 ? kDataChars : kRwDataChars);
    s.entropy = EntropyProfile::Low;
    spec.sections.push_back(s);
  }
  spec.header_room = 0x40 + static_cast<std::uint32_t>(rng.below(0x40));
  spec.overlay_len = 0;
  return spec;
}

GenSpec malicious_spec(Rng& rng, bool header_room) {
  GenSpec spec;
  spec.seed = rng.next();
  const std::size_t nsec = 2 + rng.below(3);
  for (std::size_t i = 0; i < nsec; ++i) {
    GenSection s;
    s.name = random_lowercase_name(rng, 4, 8);
    if (i == 0) {
      s.raw_size = static_cast<std::uint32_t>((4 + rng.below(13)) * kGenFileAlignment);
      // leave 0x80..0x200 bytes of NOP slack for SectionAppend / CodeRandomize
      s.virtual_size = s.raw_size - static_cast<std::uint32_t>(0x80 + rng.below(0x181));
      s.characteristics = kExecChars;
    } else {
      s.raw_size = static_cast<std::uint32_t>((2 + rng.below(7)) * kGenFileAlignment);
      s.virtual_size = s.raw_size - static_cast<std::uint32_t>(rng.below(0x40));
      s.characteristics = i == 1 ? kDataChars : kRwDataChars;
    }
    s.entropy = EntropyProfile::High;
    spec.sections.push_back(s);
  }
  if (header_room) {
    spec.header_room = 0x80 + static_cast<std::uint32_t>(rng.below(0x40));
    const std::uint32_t stub_len = 0x80 + static_cast<std::uint32_t>(rng.below(0x300));
    spec.custom_stub = Bytes(stub_len);
    Rng stub_rng(rng.next());
    stub_rng.fill(spec.custom_stub->data(), spec.custom_stub->size());
  } else {
    // pick the stub length so the section table ends 32 bytes short of the
    // aligned size_of_headers: no room for one more 40-byte entry
    spec.header_room = 0;
    const std::uint64_t base = 264 + 40 * nsec; // e_lfanew + base == table_end
    std::uint32_t e_lfanew = static_cast<std::uint32_t>((480 + 512 * 4 - base) % 512);
    while (e_lfanew < 0x48) e_lfanew += 512;
    spec.custom_stub = Bytes(e_lfanew - 0x40);
    Rng stub_rng(rng.next());
    stub_rng.fill(spec.custom_stub->data(), spec.custom_stub->size());
  }
  spec.overlay_len = rng.below(3) == 0 ? static_cast<std::uint32_t>(rng.below(0x400)) : 0;
  return spec;
}

} // namespace

std::vector<Bytes> generate_suite(std::size_t n, Profile profile, std::uint64_t seed) {
  if (n == 0) throw InvalidSpec("suite size must be >= 1");
  std::vector<Bytes> files;
  files.reserve(n);
  std::set<std::uint64_t> digests;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    GenSpec spec;
    switch (profile) {
      case Profile::Benign: spec = benign_spec(rng); break;
      case Profile::Malicious: spec = malicious_spec(rng, true); break;
      case Profile::MaliciousNoHeaderRoom: spec = malicious_spec(rng, false); break;
    }
    Bytes data = generate(spec);
    const PeImage img = parse_pe(data);
    const double score = builtin_score(img);
    const bool want_malicious = profile != Profile::Benign;
    if (want_malicious != (score >= 0.5))
      throw InvalidSpec("generated file landed on the wrong side of the threshold (score " +
                        std::to_string(score) + ")");
    if (!digests.insert(fnv1a64(data)).second)
      throw InvalidSpec("duplicate file in generated suite");
    files.push_back(std::move(data));
  }
  return files;
}

std::vector<std::filesystem::path> write_suite(const std::filesystem::path& dir, std::size_t n,
                                               Profile profile, std::uint64_t seed) {
  const auto files = generate_suite(n, profile, seed);
  std::filesystem::create_directories(dir);
  const char* prefix = profile == Profile::Benign
                           ? "ben"
                           : (profile == Profile::Malicious ? "mal" : "malnh");
  std::vector<std::filesystem::path> paths;
  paths.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%s_%04zu.exe", prefix, i);
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(files[i].data()),
              static_cast<std::streamsize>(files[i].size()));
    paths.push_back(path);
  }
  return paths;
}

} // namespace pev
