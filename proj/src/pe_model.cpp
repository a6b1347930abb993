#include "peevader/pe_model.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace pev {

namespace {

[[noreturn]] void fail(const char* reason) { throw MalformedPe(reason); }

bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

} // namespace

std::string SectionRecord::name_str() const {
  std::size_t len = name.size();
  while (len > 0 && name[len - 1] == 0) --len;
  return std::string(reinterpret_cast<const char*>(name.data()), len);
}

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) {
  if (a == 0) return v;
  const std::uint64_t r = v % a;
  return r == 0 ? v : v + (a - r);
}

ByteView PeImage::stub_bytes() const {
  return ByteView(raw_.data() + 2, dos_.e_lfanew - 2);
}

PeImage parse_pe(ByteView b) {
  if (b.empty()) fail("empty input");
  if (b.size() > kMaxPeFileSize) fail("file larger than 256 MiB");
  if (b.size() < 0x40) fail("shorter than a DOS header");
  if (b[0] != 'M' || b[1] != 'Z') fail("missing MZ magic");

  DosRegion dos;
  dos.e_lfanew = rd32(b, 0x3c);
  if (dos.e_lfanew < 0x40) fail("e_lfanew below 0x40");
  if (static_cast<std::uint64_t>(dos.e_lfanew) + 4 > b.size()) fail("e_lfanew out of range");
  if (b[dos.e_lfanew] != 'P' || b[dos.e_lfanew + 1] != 'E' || b[dos.e_lfanew + 2] != 0 ||
      b[dos.e_lfanew + 3] != 0)
    fail("missing PE signature");

  const std::uint64_t coff_off = dos.e_lfanew + 4;
  if (coff_off + 20 > b.size()) fail("truncated COFF header");
  CoffHeader coff;
  coff.machine = rd16(b, coff_off);
  coff.number_of_sections = rd16(b, coff_off + 2);
  coff.size_of_optional_header = rd16(b, coff_off + 16);
  coff.characteristics = rd16(b, coff_off + 18);

  const std::uint64_t opt_off = coff_off + 20;
  // we need everything up to and including the CheckSum field
  if (coff.size_of_optional_header < 0x44) fail("optional header too small");
  const std::uint64_t opt_end = opt_off + coff.size_of_optional_header;
  if (opt_end > b.size()) fail("truncated optional header");

  OptionalView opt;
  opt.magic = rd16(b, opt_off);
  if (opt.magic != 0x10b && opt.magic != 0x20b) fail("unknown optional header magic");
  opt.address_of_entry_point = rd32(b, opt_off + 16);
  opt.section_alignment = rd32(b, opt_off + 32);
  opt.file_alignment = rd32(b, opt_off + 36);
  opt.size_of_image = rd32(b, opt_off + 56);
  opt.size_of_headers = rd32(b, opt_off + 60);
  opt.checksum_offset = opt_off + 64;
  if (!is_pow2(opt.file_alignment) || !is_pow2(opt.section_alignment))
    fail("alignment not a power of two");
  if (opt.section_alignment < opt.file_alignment)
    fail("section alignment below file alignment");
  if (opt.size_of_headers % opt.file_alignment != 0) fail("size_of_headers not aligned");
  if (opt.size_of_headers > b.size()) fail("size_of_headers exceeds file");

  // security data directory (index 4), carried opaquely except for the flag
  std::uint64_t security_off = 0;
  bool signed_flag = false;
  const std::uint64_t ndirs_off = opt_off + (opt.magic == 0x10b ? 92 : 108);
  if (ndirs_off + 4 <= opt_end) {
    const std::uint32_t ndirs = rd32(b, ndirs_off);
    if (ndirs > 4 && ndirs_off + 4 + 5 * 8 <= opt_end) {
      security_off = ndirs_off + 4 + 4 * 8;
      signed_flag = rd32(b, security_off) != 0 || rd32(b, security_off + 4) != 0;
    }
  }

  const std::uint64_t table_off = opt_end;
  const std::uint64_t table_end = table_off + 40ULL * coff.number_of_sections;
  if (table_end > b.size()) fail("truncated section table");
  if (table_end > opt.size_of_headers) fail("section table overruns size_of_headers");

  std::vector<SectionRecord> sections;
  sections.reserve(coff.number_of_sections);
  for (std::uint32_t i = 0; i < coff.number_of_sections; ++i) {
    const std::uint64_t e = table_off + 40ULL * i;
    SectionRecord s;
    std::memcpy(s.name.data(), b.data() + e, 8);
    s.virtual_size = rd32(b, e + 8);
    s.virtual_address = rd32(b, e + 12);
    s.raw_size = rd32(b, e + 16);
    s.raw_ptr = rd32(b, e + 20);
    s.characteristics = rd32(b, e + 36);
    if (s.raw_size > 0) {
      if (s.raw_ptr % opt.file_alignment != 0) fail("section raw pointer unaligned");
      if (s.raw_ptr < opt.size_of_headers) fail("section data overlaps headers");
      if (static_cast<std::uint64_t>(s.raw_ptr) + s.raw_size > b.size())
        fail("section data out of range");
    } else if (s.raw_ptr != 0) {
      fail("zero-size section with nonzero raw pointer");
    }
    sections.push_back(s);
  }

  // raw extents must not overlap
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const auto& s : sections)
    if (s.raw_size > 0) extents.emplace_back(s.raw_ptr, std::uint64_t(s.raw_ptr) + s.raw_size);
  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i)
    if (extents[i].first < extents[i - 1].second) fail("overlapping sections");

  std::uint64_t overlay = b.size();
  if (!extents.empty()) overlay = extents.back().second;

  PeImage img;
  img.raw_.assign(b.begin(), b.end());
  img.dos_ = dos;
  img.coff_ = coff;
  img.opt_ = opt;
  img.sections_ = std::move(sections);
  img.overlay_offset_ = overlay;
  img.signed_ = signed_flag;
  img.section_table_offset_ = table_off;
  img.security_dir_offset_ = security_off;
  return img;
}

Bytes serialize_pe(const PeImage& img) {
  PeImage check;
  try {
    check = parse_pe(img.raw_);
  } catch (const MalformedPe& e) {
    throw InconsistentModel(std::string("image no longer parses: ") + e.what());
  }
  const bool same = check.dos_ == img.dos_ && check.coff_ == img.coff_ &&
                    check.opt_ == img.opt_ && check.sections_ == img.sections_ &&
                    check.overlay_offset_ == img.overlay_offset_ &&
                    check.signed_ == img.signed_ &&
                    check.section_table_offset_ == img.section_table_offset_ &&
                    check.security_dir_offset_ == img.security_dir_offset_;
  if (!same) throw InconsistentModel("parsed view does not match stored view");
  return img.raw_;
}

std::vector<SlackRegion> locate_slack(const PeImage& img) {
  std::vector<SlackRegion> out;
  const auto& secs = img.sections();
  for (std::size_t i = 0; i < secs.size(); ++i) {
    const auto& s = secs[i];
    if (s.raw_size == 0) continue;
    const std::uint64_t mapped = s.mapped_size();
    if (mapped >= s.raw_size) continue;
    out.push_back({i, s.raw_ptr + mapped, s.raw_size - mapped});
  }
  return out;
}

PeImage update_checksum(const PeImage& img) {
  Bytes b = img.bytes();
  wr32(b.data() + img.opt().checksum_offset, 0);
  return parse_pe(b);
}

std::string inspect_pe(const PeImage& img) {
  std::ostringstream os;
  auto line = [&os](const char* name, std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
    os << name << " = " << buf << "\n";
  };
  line("file_size", img.size());
  line("e_lfanew", img.dos().e_lfanew);
  line("machine", img.coff().machine);
  line("number_of_sections", img.coff().number_of_sections);
  line("size_of_optional_header", img.coff().size_of_optional_header);
  line("coff_characteristics", img.coff().characteristics);
  line("magic", img.opt().magic);
  line("address_of_entry_point", img.opt().address_of_entry_point);
  line("section_alignment", img.opt().section_alignment);
  line("file_alignment", img.opt().file_alignment);
  line("size_of_image", img.opt().size_of_image);
  line("size_of_headers", img.opt().size_of_headers);
  line("checksum_offset", img.opt().checksum_offset);
  line("signed", img.is_signed() ? 1 : 0);
  line("overlay_offset", img.overlay_offset());
  line("overlay_length", img.overlay_length());
  const auto& secs = img.sections();
  for (std::size_t i = 0; i < secs.size(); ++i) {
    const auto& s = secs[i];
    std::uint64_t name_bits = 0;
    for (int k = 0; k < 8; ++k) name_bits = (name_bits << 8) | s.name[k];
    char field[48];
    auto sec_line = [&](const char* suffix, std::uint64_t v) {
      std::snprintf(field, sizeof field, "section.%zu.%s", i, suffix);
      line(field, v);
    };
    sec_line("name", name_bits);
    sec_line("virtual_size", s.virtual_size);
    sec_line("virtual_address", s.virtual_address);
    sec_line("raw_size", s.raw_size);
    sec_line("raw_ptr", s.raw_ptr);
    sec_line("characteristics", s.characteristics);
  }
  return os.str();
}

ByteView canonical_dos_region() {
  static const Bytes region = [] {
    Bytes r(0x80, 0);
    r[0] = 'M';
    r[1] = 'Z';
    // classic DOS header field values
    wr16(r.data() + 0x02, 0x0090); // bytes on last page
    wr16(r.data() + 0x04, 0x0003); // pages
    wr16(r.data() + 0x08, 0x0004); // header paragraphs
    wr16(r.data() + 0x0a, 0x0000);
    wr16(r.data() + 0x0c, 0xffff); // max alloc
    wr16(r.data() + 0x10, 0x00b8); // initial SP
    wr16(r.data() + 0x18, 0x0040); // relocation table offset
    wr32(r.data() + 0x3c, 0x80);   // e_lfanew
    static const std::uint8_t stub_code[] = {0x0e, 0x1f, 0xba, 0x0e, 0x00, 0xb4, 0x09,
                                             0xcd, 0x21, 0xb8, 0x01, 0x4c, 0xcd, 0x21};
    std::memcpy(r.data() + 0x40, stub_code, sizeof stub_code);
    static const char msg[] = "This program cannot be run in DOS mode.\r\r\n$";
    std::memcpy(r.data() + 0x40 + sizeof stub_code, msg, sizeof msg - 1);
    return r;
  }();
  return ByteView(region.data(), region.size());
}

} // namespace pev
