#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "peevader/content_bank.hpp"
#include "peevader/pe_model.hpp"

namespace pev {

enum class ActionKind {
  EditDos,
  ExtendDos,
  SectionAppend,
  SectionAdd,
  SectionRename,
  Padding,
  CodeRandomize,
};

inline constexpr std::array<ActionKind, 7> kAllActionKinds = {
    ActionKind::EditDos,    ActionKind::ExtendDos,     ActionKind::SectionAppend,
    ActionKind::SectionAdd, ActionKind::SectionRename, ActionKind::Padding,
    ActionKind::CodeRandomize,
};

std::string to_string(ActionKind kind);
std::optional<ActionKind> action_kind_from_string(std::string_view s);

struct ContentSource {
  enum class Kind { GoodwareBlock, RandomBytes };

  Kind kind = Kind::RandomBytes;
  std::uint32_t block_id = 0; // meaningful for GoodwareBlock

  static ContentSource random() { return {Kind::RandomBytes, 0}; }
  static ContentSource goodware(std::uint32_t id) { return {Kind::GoodwareBlock, id}; }

  std::string label() const; // "rand" or "gw<id>"
  bool operator==(const ContentSource&) const = default;
};

// One concrete transformation instance. size is the content length for
// injecting kinds and the shift amount for ExtendDos; it must be positive for
// EditDos/ExtendDos/SectionAppend/SectionAdd/Padding.
struct ActionSpec {
  ActionKind kind = ActionKind::Padding;
  std::uint64_t size = 0;
  ContentSource content_source = ContentSource::random();
  std::optional<std::size_t> target; // section index for SectionAppend/SectionRename
  std::uint64_t seed = 0;

  std::string label() const; // "kind:size:src"
};

struct EquivalenceReport {
  bool ok = false;
  bool mapped_bytes_identical = false;
  bool entry_bytes_identical = false;
  int section_count_delta = 0;
  std::vector<std::string> notes;
};

// The Table-1 action catalogue. Each operation is a pure function: same
// (image, spec, bank) gives bit-identical output. Failures are typed
// (NotApplicable / NoHeaderRoom / InvalidSpec); no operation ever emits bytes
// that fail to reparse.
PeImage edit_dos(const PeImage& img, const ActionSpec& spec, const ContentBank& bank);
PeImage extend_dos(const PeImage& img, const ActionSpec& spec, const ContentBank& bank);
PeImage section_append(const PeImage& img, const ActionSpec& spec, const ContentBank& bank);
PeImage section_add(const PeImage& img, const ActionSpec& spec, const ContentBank& bank);
PeImage section_rename(const PeImage& img, const ActionSpec& spec, const ContentBank& bank);
PeImage padding(const PeImage& img, const ActionSpec& spec, const ContentBank& bank);
PeImage code_randomize(const PeImage& img, const ActionSpec& spec);

// Dispatch over the catalogue followed by update_checksum.
PeImage apply(const PeImage& img, const ActionSpec& spec, const ContentBank& bank);

// Pins the parts of a spec that depend on the image or the bank: goodware
// content falls back to random bytes when the bank has no blocks, and an
// unset target is fixed from the seed so the trace records the concrete
// section. apply() accepts unresolved specs too.
ActionSpec resolve_spec(const PeImage& img, ActionSpec spec, const ContentBank& bank);

// Static functional-equivalence check: mapped section bytes and the 64 bytes
// at the entry point must be identical (at possibly shifted file offsets),
// and no original section may be removed.
EquivalenceReport check_equivalence(const PeImage& original, const PeImage& modified);

// Size menu an arm draws from when the caller does not specify one.
// ExtendDos buckets are multiples of file_alignment, resolved at apply time.
std::vector<std::uint64_t> size_menu(ActionKind kind);

} // namespace pev
