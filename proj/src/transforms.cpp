#include "peevader/transforms.hpp"

#include <algorithm>
#include <cstring>

namespace pev {

namespace {

// salts for the per-spec derived streams
constexpr std::uint64_t kContentSalt = 0xc0;
constexpr std::uint64_t kNameSalt = 0xa7;
constexpr std::uint64_t kTargetSalt = 0x5e;

Rng spec_rng(const ActionSpec& spec, std::uint64_t salt) {
  return Rng(mix_seed(spec.seed, salt));
}

void require_kind(const ActionSpec& spec, ActionKind kind) {
  if (spec.kind != kind) throw InvalidSpec("spec kind does not match operation");
}

void require_positive_size(const ActionSpec& spec) {
  if (spec.size == 0) throw InvalidSpec("size must be positive for " + to_string(spec.kind));
}

Bytes make_content(std::uint64_t len, const ActionSpec& spec, const ContentBank& bank) {
  Rng rng = spec_rng(spec, kContentSalt);
  if (spec.content_source.kind == ContentSource::Kind::GoodwareBlock && bank.has_blocks()) {
    const auto& blocks = bank.blocks();
    const BankBlock& first = blocks[spec.content_source.block_id % blocks.size()];
    Bytes out;
    out.reserve(len);
    if (first.data.size() >= len) {
      const std::uint64_t off = rng.below(first.data.size() - len + 1);
      out.assign(first.data.begin() + off, first.data.begin() + off + len);
    } else {
      out.assign(first.data.begin(), first.data.end());
      const Bytes rest = bank.sample_block(len - out.size(), rng);
      out.insert(out.end(), rest.begin(), rest.end());
    }
    return out;
  }
  Bytes out(len);
  rng.fill(out.data(), out.size());
  return out;
}

std::array<std::uint8_t, 8> make_name(const ActionSpec& spec, const ContentBank& bank) {
  Rng rng = spec_rng(spec, kNameSalt);
  if (spec.content_source.kind == ContentSource::Kind::GoodwareBlock && bank.has_names())
    return bank.sample_name(rng);
  std::array<std::uint8_t, 8> name;
  for (auto& c : name) c = static_cast<std::uint8_t>('a' + rng.below(26));
  return name;
}

// Recommended multi-byte NOP encodings (lengths 1..9).
const std::uint8_t* nop_encoding(std::size_t len) {
  static const std::uint8_t t1[] = {0x90};
  static const std::uint8_t t2[] = {0x66, 0x90};
  static const std::uint8_t t3[] = {0x0f, 0x1f, 0x00};
  static const std::uint8_t t4[] = {0x0f, 0x1f, 0x40, 0x00};
  static const std::uint8_t t5[] = {0x0f, 0x1f, 0x44, 0x00, 0x00};
  static const std::uint8_t t6[] = {0x66, 0x0f, 0x1f, 0x44, 0x00, 0x00};
  static const std::uint8_t t7[] = {0x0f, 0x1f, 0x80, 0x00, 0x00, 0x00, 0x00};
  static const std::uint8_t t8[] = {0x0f, 0x1f, 0x84, 0x00, 0x00, 0x00, 0x00, 0x00};
  static const std::uint8_t t9[] = {0x66, 0x0f, 0x1f, 0x84, 0x00, 0x00, 0x00, 0x00, 0x00};
  static const std::uint8_t* table[] = {t1, t2, t3, t4, t5, t6, t7, t8, t9};
  return table[len - 1];
}

void write_nop_run(std::uint8_t* dst, std::uint64_t len) {
  while (len > 0) {
    const std::size_t chunk = static_cast<std::size_t>(std::min<std::uint64_t>(len, 9));
    std::memcpy(dst, nop_encoding(chunk), chunk);
    dst += chunk;
    len -= chunk;
  }
}

} // namespace

std::string to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::EditDos: return "editdos";
    case ActionKind::ExtendDos: return "extenddos";
    case ActionKind::SectionAppend: return "sectionappend";
    case ActionKind::SectionAdd: return "sectionadd";
    case ActionKind::SectionRename: return "sectionrename";
    case ActionKind::Padding: return "padding";
    case ActionKind::CodeRandomize: return "coderandomize";
  }
  return "unknown";
}

std::optional<ActionKind> action_kind_from_string(std::string_view s) {
  for (ActionKind k : kAllActionKinds)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

std::string ContentSource::label() const {
  if (kind == Kind::RandomBytes) return "rand";
  return "gw" + std::to_string(block_id);
}

std::string ActionSpec::label() const {
  return to_string(kind) + ":" + std::to_string(size) + ":" + content_source.label();
}

std::vector<std::uint64_t> size_menu(ActionKind kind) {
  switch (kind) {
    case ActionKind::Padding:
    case ActionKind::SectionAppend:
    case ActionKind::SectionAdd: return {512, 2048, 8192};
    case ActionKind::ExtendDos: return {1, 2, 4}; // x file_alignment
    case ActionKind::EditDos:
    case ActionKind::SectionRename:
    case ActionKind::CodeRandomize: return {1};
  }
  return {1};
}

PeImage edit_dos(const PeImage& img, const ActionSpec& spec, const ContentBank& bank) {
  require_kind(spec, ActionKind::EditDos);
  require_positive_size(spec);
  const std::uint32_t e_lfanew = img.dos().e_lfanew;
  if (e_lfanew <= 0x40) throw NotApplicable("DOS stub has no writable bytes");

  // one content stream across [2,0x3c) and [0x40,e_lfanew); e_magic and
  // e_lfanew stay put
  const std::uint64_t n1 = 0x3c - 2;
  const std::uint64_t n2 = e_lfanew - 0x40;
  const Bytes content = make_content(n1 + n2, spec, bank);
  Bytes b = img.bytes();
  std::memcpy(b.data() + 2, content.data(), n1);
  std::memcpy(b.data() + 0x40, content.data() + n1, n2);
  return parse_pe(b);
}

PeImage extend_dos(const PeImage& img, const ActionSpec& spec, const ContentBank& bank) {
  require_kind(spec, ActionKind::ExtendDos);
  require_positive_size(spec);
  const std::uint32_t fa = img.opt().file_alignment;
  if (spec.size % fa != 0) throw InvalidSpec("shift must be a multiple of file_alignment");

  const std::uint32_t e_lfanew = img.dos().e_lfanew;
  for (const auto& s : img.sections())
    if (s.raw_size > 0 && s.raw_ptr < e_lfanew)
      throw NotApplicable("section data precedes the PE header");

  const std::uint64_t new_soh = std::uint64_t(img.opt().size_of_headers) + spec.size;
  for (const auto& s : img.sections())
    if (new_soh > s.virtual_address)
      throw NotApplicable("extended headers would overlap mapped sections");
  if (new_soh > 0xffffffffULL || std::uint64_t(e_lfanew) + spec.size + 4 > 0xffffffffULL)
    throw NotApplicable("shift overflows header fields");

  const Bytes content = make_content(spec.size, spec, bank);
  Bytes b;
  b.reserve(img.size() + spec.size);
  b.insert(b.end(), img.bytes().begin(), img.bytes().begin() + e_lfanew);
  b.insert(b.end(), content.begin(), content.end());
  b.insert(b.end(), img.bytes().begin() + e_lfanew, img.bytes().end());

  wr32(b.data() + 0x3c, static_cast<std::uint32_t>(e_lfanew + spec.size));
  const std::uint64_t opt_off = std::uint64_t(e_lfanew) + spec.size + 24;
  wr32(b.data() + opt_off + 60, static_cast<std::uint32_t>(new_soh));
  const std::uint64_t table_off = img.section_table_offset() + spec.size;
  const auto& secs = img.sections();
  for (std::size_t i = 0; i < secs.size(); ++i) {
    if (secs[i].raw_size == 0) continue;
    wr32(b.data() + table_off + 40 * i + 20,
         static_cast<std::uint32_t>(secs[i].raw_ptr + spec.size));
  }
  if (img.security_dir_offset() != 0) {
    const std::uint64_t soff = img.security_dir_offset() + spec.size;
    const std::uint32_t va = rd32(b, soff);
    if (va != 0) wr32(b.data() + soff, static_cast<std::uint32_t>(va + spec.size));
  }
  return parse_pe(b);
}

PeImage section_append(const PeImage& img, const ActionSpec& spec, const ContentBank& bank) {
  require_kind(spec, ActionKind::SectionAppend);
  require_positive_size(spec);
  const auto slack = locate_slack(img);
  if (slack.empty()) throw NotApplicable("no section has slack");

  const SlackRegion* region = nullptr;
  if (spec.target) {
    for (const auto& r : slack)
      if (r.section_index == *spec.target) region = &r;
    if (!region) throw NotApplicable("target section has no slack");
  } else {
    Rng rng = spec_rng(spec, kTargetSalt);
    region = &slack[rng.below(slack.size())];
  }

  const std::uint64_t n = std::min(spec.size, region->length);
  const Bytes content = make_content(n, spec, bank);
  Bytes b = img.bytes();
  std::memcpy(b.data() + region->offset, content.data(), n);
  return parse_pe(b);
}

PeImage section_add(const PeImage& img, const ActionSpec& spec, const ContentBank& bank) {
  require_kind(spec, ActionKind::SectionAdd);
  require_positive_size(spec);
  const std::uint64_t table_end =
      img.section_table_offset() + 40ULL * img.coff().number_of_sections;
  if (table_end + 40 > img.opt().size_of_headers)
    throw NoHeaderRoom("section table cannot grow within size_of_headers");
  if (img.coff().number_of_sections == 0xffff) throw NoHeaderRoom("section table full");

  const std::uint32_t fa = img.opt().file_alignment;
  const std::uint32_t sa = img.opt().section_alignment;
  const std::uint64_t insert_at = img.overlay_offset();
  if (insert_at % fa != 0) throw NotApplicable("unaligned section layout");

  const std::uint64_t raw_len = align_up(spec.size, fa);
  std::uint64_t prev_end = img.opt().size_of_headers;
  for (const auto& s : img.sections())
    prev_end = std::max(prev_end, std::uint64_t(s.virtual_address) + s.virtual_size);
  const std::uint64_t va = align_up(prev_end, sa);
  if (va + spec.size > 0xffffffffULL || raw_len > 0xffffffffULL || spec.size > 0xffffffffULL)
    throw NotApplicable("section too large");

  Bytes content = make_content(spec.size, spec, bank);
  content.resize(raw_len, 0);
  const std::array<std::uint8_t, 8> name = make_name(spec, bank);

  Bytes b;
  b.reserve(img.size() + raw_len);
  b.insert(b.end(), img.bytes().begin(), img.bytes().begin() + insert_at);
  b.insert(b.end(), content.begin(), content.end());
  b.insert(b.end(), img.bytes().begin() + insert_at, img.bytes().end());

  std::uint8_t* e = b.data() + table_end;
  std::memset(e, 0, 40);
  std::memcpy(e, name.data(), 8);
  wr32(e + 8, static_cast<std::uint32_t>(spec.size));    // VirtualSize
  wr32(e + 12, static_cast<std::uint32_t>(va));          // VirtualAddress
  wr32(e + 16, static_cast<std::uint32_t>(raw_len));     // SizeOfRawData
  wr32(e + 20, static_cast<std::uint32_t>(insert_at));   // PointerToRawData
  wr32(e + 36, kScnInitializedData | kScnMemRead);

  const std::uint64_t coff_off = std::uint64_t(img.dos().e_lfanew) + 4;
  wr16(b.data() + coff_off + 2,
       static_cast<std::uint16_t>(img.coff().number_of_sections + 1));
  wr32(b.data() + img.dos().e_lfanew + 24 + 56,
       static_cast<std::uint32_t>(align_up(va + spec.size, sa))); // SizeOfImage
  return parse_pe(b);
}

PeImage section_rename(const PeImage& img, const ActionSpec& spec, const ContentBank& bank) {
  require_kind(spec, ActionKind::SectionRename);
  if (img.sections().empty()) throw NotApplicable("image has no sections");

  std::size_t idx;
  if (spec.target) {
    idx = *spec.target;
    if (idx >= img.sections().size()) throw NotApplicable("target section out of range");
  } else {
    Rng rng = spec_rng(spec, kTargetSalt);
    idx = rng.below(img.sections().size());
  }
  const std::array<std::uint8_t, 8> name = make_name(spec, bank);
  Bytes b = img.bytes();
  std::memcpy(b.data() + img.section_table_offset() + 40 * idx, name.data(), 8);
  return parse_pe(b);
}

PeImage padding(const PeImage& img, const ActionSpec& spec, const ContentBank& bank) {
  require_kind(spec, ActionKind::Padding);
  require_positive_size(spec);
  const Bytes content = make_content(spec.size, spec, bank);
  Bytes b = img.bytes();
  b.insert(b.end(), content.begin(), content.end());
  return parse_pe(b);
}

PeImage code_randomize(const PeImage& img, const ActionSpec& spec) {
  require_kind(spec, ActionKind::CodeRandomize);
  bool any_exec = false;
  for (const auto& s : img.sections()) any_exec = any_exec || s.executable();
  if (!any_exec) throw NotApplicable("no executable section");

  // Only padding runs in the unmapped slack of executable sections qualify:
  // rewriting there is provably behavior-preserving (the loader never maps
  // those bytes) and keeps check_equivalence exact.
  Bytes b = img.bytes();
  bool rewrote = false;
  for (const auto& s : img.sections()) {
    if (!s.executable() || s.raw_size == 0) continue;
    const std::uint64_t begin = std::uint64_t(s.raw_ptr) + s.mapped_size();
    const std::uint64_t end = std::uint64_t(s.raw_ptr) + s.raw_size;
    std::uint64_t i = begin;
    while (i < end) {
      const std::uint8_t c = b[i];
      if (c != 0x90 && c != 0xcc) {
        ++i;
        continue;
      }
      std::uint64_t j = i + 1;
      while (j < end && b[j] == c) ++j;
      if (j - i >= 2) {
        write_nop_run(b.data() + i, j - i);
        rewrote = true;
      }
      i = j;
    }
  }
  if (!rewrote) throw NotApplicable("no padding run to rewrite");
  return parse_pe(b);
}

PeImage apply(const PeImage& img, const ActionSpec& spec, const ContentBank& bank) {
  PeImage out = [&] {
    switch (spec.kind) {
      case ActionKind::EditDos: return edit_dos(img, spec, bank);
      case ActionKind::ExtendDos: return extend_dos(img, spec, bank);
      case ActionKind::SectionAppend: return section_append(img, spec, bank);
      case ActionKind::SectionAdd: return section_add(img, spec, bank);
      case ActionKind::SectionRename: return section_rename(img, spec, bank);
      case ActionKind::Padding: return padding(img, spec, bank);
      case ActionKind::CodeRandomize: return code_randomize(img, spec);
    }
    throw InvalidSpec("unknown action kind");
  }();
  return update_checksum(out);
}

ActionSpec resolve_spec(const PeImage& img, ActionSpec spec, const ContentBank& bank) {
  if (spec.content_source.kind == ContentSource::Kind::GoodwareBlock && !bank.has_blocks())
    spec.content_source = ContentSource::random();
  if (!spec.target) {
    if (spec.kind == ActionKind::SectionAppend) {
      const auto slack = locate_slack(img);
      if (!slack.empty()) {
        Rng rng = spec_rng(spec, kTargetSalt);
        spec.target = slack[rng.below(slack.size())].section_index;
      }
    } else if (spec.kind == ActionKind::SectionRename) {
      if (!img.sections().empty()) {
        Rng rng = spec_rng(spec, kTargetSalt);
        spec.target = static_cast<std::size_t>(rng.below(img.sections().size()));
      }
    }
  }
  return spec;
}

namespace {

// file offset of the entry point's first byte, or nullopt when the entry RVA
// does not fall inside any section's mapped bytes
std::optional<std::uint64_t> entry_file_offset(const PeImage& img) {
  const std::uint32_t entry = img.opt().address_of_entry_point;
  if (entry == 0) return std::nullopt;
  for (const auto& s : img.sections()) {
    if (entry >= s.virtual_address && entry < std::uint64_t(s.virtual_address) + s.mapped_size())
      return std::uint64_t(s.raw_ptr) + (entry - s.virtual_address);
  }
  return std::nullopt;
}

} // namespace

EquivalenceReport check_equivalence(const PeImage& original, const PeImage& modified) {
  EquivalenceReport rep;
  const auto& os = original.sections();
  const auto& ms = modified.sections();
  rep.section_count_delta = static_cast<int>(ms.size()) - static_cast<int>(os.size());

  rep.mapped_bytes_identical = true;
  for (std::size_t i = 0; i < os.size(); ++i) {
    if (i >= ms.size()) {
      rep.mapped_bytes_identical = false;
      rep.notes.push_back("section " + std::to_string(i) + " removed");
      break;
    }
    const std::uint64_t len = os[i].mapped_size();
    if (len == 0) continue;
    if (ms[i].mapped_size() < len ||
        std::uint64_t(ms[i].raw_ptr) + len > modified.size()) {
      rep.mapped_bytes_identical = false;
      rep.notes.push_back("section " + std::to_string(i) + " mapped bytes shrunk");
      continue;
    }
    if (std::memcmp(original.bytes().data() + os[i].raw_ptr,
                    modified.bytes().data() + ms[i].raw_ptr, len) != 0) {
      rep.mapped_bytes_identical = false;
      rep.notes.push_back("section " + std::to_string(i) + " mapped bytes differ");
    }
  }

  const auto off_o = entry_file_offset(original);
  const auto off_m = entry_file_offset(modified);
  if (!off_o && !off_m) {
    rep.entry_bytes_identical = true;
    rep.notes.push_back("entry point not mapped");
  } else if (!off_o || !off_m) {
    rep.entry_bytes_identical = false;
    rep.notes.push_back("entry point mapped on one side only");
  } else {
    const std::uint64_t want = 64;
    const std::uint64_t avail_o = std::min(want, original.size() - *off_o);
    const std::uint64_t avail_m = std::min(want, modified.size() - *off_m);
    if (avail_m < avail_o) {
      rep.entry_bytes_identical = false;
      rep.notes.push_back("entry bytes truncated");
    } else {
      rep.entry_bytes_identical =
          std::memcmp(original.bytes().data() + *off_o, modified.bytes().data() + *off_m,
                      avail_o) == 0;
      if (!rep.entry_bytes_identical) rep.notes.push_back("entry bytes differ");
    }
  }

  rep.ok = rep.mapped_bytes_identical && rep.entry_bytes_identical &&
           rep.section_count_delta >= 0;
  return rep;
}

} // namespace pev
