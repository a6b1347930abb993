#include <doctest.h>

#include "peevader/corpusgen.hpp"
#include "peevader/pe_model.hpp"
#include "support/helpers.hpp"

using namespace pev;
using namespace testsupport;

TEST_SUITE("pe_model") {

TEST_CASE("parses a minimal generated PE and matches an independent field read") {
  GenSpec spec;
  spec.seed = 7;
  spec.sections.push_back({".text", 0x3f0, 0x400, kScnCode | kScnMemExecute | kScnMemRead,
                           EntropyProfile::Low});
  const Bytes data = generate(spec);
  const PeImage img = parse_pe(data);

  // independent route: read the fields straight from the byte offsets
  const std::uint32_t e_lfanew = raw32(data, 0x3c);
  CHECK(img.dos().e_lfanew == e_lfanew);
  CHECK(e_lfanew == 0x80); // canonical stub
  CHECK(img.coff().number_of_sections == 1);
  CHECK(img.coff().number_of_sections == raw16(data, e_lfanew + 4 + 2));
  CHECK(img.coff().machine == raw16(data, e_lfanew + 4));
  CHECK(img.opt().file_alignment == raw32(data, e_lfanew + 24 + 36));
  CHECK(img.opt().section_alignment == raw32(data, e_lfanew + 24 + 32));
  CHECK(img.opt().size_of_headers == raw32(data, e_lfanew + 24 + 60));
  CHECK(img.sections().size() == 1);
  const std::uint64_t table = e_lfanew + 24 + img.coff().size_of_optional_header;
  CHECK(img.section_table_offset() == table);
  CHECK(img.sections()[0].name_str() == ".text");
  CHECK(img.sections()[0].raw_size == raw32(data, table + 16));
  CHECK(img.sections()[0].raw_ptr == raw32(data, table + 20));
  CHECK(!img.is_signed());
}

TEST_CASE("rejects degenerate inputs") {
  CHECK_THROWS_AS(parse_pe(Bytes{}), MalformedPe);

  // "MZ" with e_lfanew pointing at the end of the file
  Bytes b(0x100, 0);
  b[0] = 'M';
  b[1] = 'Z';
  wr32(b.data() + 0x3c, static_cast<std::uint32_t>(b.size()));
  CHECK_THROWS_AS(parse_pe(b), MalformedPe);

  wr32(b.data() + 0x3c, 0x20); // below 0x40
  CHECK_THROWS_AS(parse_pe(b), MalformedPe);

  Bytes no_mz(0x100, 0);
  CHECK_THROWS_AS(parse_pe(no_mz), MalformedPe);
}

TEST_CASE("rejects a truncated section table and overlapping sections") {
  const Bytes good = generate(basic_malicious_spec(3));
  const PeImage img = parse_pe(good);

  // bump the section count without providing table bytes within size_of_headers
  Bytes more_sections = good;
  wr16(more_sections.data() + img.dos().e_lfanew + 4 + 2, 200);
  CHECK_THROWS_AS(parse_pe(more_sections), MalformedPe);

  // make section 1 raw extent collide with section 0
  Bytes overlap = good;
  const std::uint64_t table = img.section_table_offset();
  wr32(overlap.data() + table + 40 + 20, img.sections()[0].raw_ptr);
  CHECK_THROWS_AS(parse_pe(overlap), MalformedPe);
}

TEST_CASE("round-trips generated corpora byte-exactly") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    for (Profile p : {Profile::Benign, Profile::Malicious, Profile::MaliciousNoHeaderRoom}) {
      for (const Bytes& data : generate_suite(5, p, seed)) {
        const PeImage img = parse_pe(data);
        CHECK(serialize_pe(img) == data);
      }
    }
  }
}

TEST_CASE("mutation fuzzing never breaks the parser contract") {
  const Bytes base = generate(basic_malicious_spec(11));
  Rng rng(99);
  int accepted = 0;
  for (int i = 0; i < 400; ++i) {
    Bytes mutated = base;
    const int flips = 1 + static_cast<int>(rng.below(8));
    for (int f = 0; f < flips; ++f) {
      const std::size_t pos = rng.below(mutated.size());
      mutated[pos] = static_cast<std::uint8_t>(rng.next());
    }
    try {
      const PeImage img = parse_pe(mutated);
      ++accepted;
      // anything accepted must round-trip and satisfy the model invariants
      CHECK(serialize_pe(img) == mutated);
      std::uint64_t max_end = 0;
      for (const auto& s : img.sections()) {
        if (s.raw_size == 0) continue;
        CHECK(std::uint64_t(s.raw_ptr) + s.raw_size <= img.size());
        CHECK(s.raw_ptr % img.opt().file_alignment == 0);
        max_end = std::max(max_end, std::uint64_t(s.raw_ptr) + s.raw_size);
      }
      CHECK(img.overlay_offset() >= max_end);
    } catch (const MalformedPe&) {
      // rejection is fine; crashing or OOB reads are not
    }
  }
  CHECK(accepted > 0); // flips outside headers usually keep the file parseable
}

TEST_CASE("locate_slack") {
  SUBCASE("no slack when virtual_size == raw_size") {
    GenSpec spec;
    spec.seed = 5;
    spec.sections.push_back({".text", 0x400, 0x400, kScnCode | kScnMemExecute | kScnMemRead,
                             EntropyProfile::Low});
    const PeImage img = parse_pe(generate(spec));
    CHECK(locate_slack(img).empty());
  }

  SUBCASE("virtual_size 0x10, raw_size 0x200 gives slack 0x1f0") {
    GenSpec spec;
    spec.seed = 5;
    spec.sections.push_back({".text", 0x10, 0x200, kScnCode | kScnMemExecute | kScnMemRead,
                             EntropyProfile::Low});
    const PeImage img = parse_pe(generate(spec));
    const auto slack = locate_slack(img);
    REQUIRE(slack.size() == 1);
    CHECK(slack[0].section_index == 0);
    CHECK(slack[0].offset == img.sections()[0].raw_ptr + 0x10);
    CHECK(slack[0].length == 0x1f0);
  }

  SUBCASE("two-section image: exact ranges computed by hand from the generator spec") {
    GenSpec spec;
    spec.seed = 5;
    spec.sections.push_back({".text", 0x380, 0x400, kScnCode | kScnMemExecute | kScnMemRead,
                             EntropyProfile::Low});
    spec.sections.push_back({".data", 0x500, 0x600, kScnInitializedData | kScnMemRead,
                             EntropyProfile::Low});
    const Bytes data = generate(spec);
    const PeImage img = parse_pe(data);
    // canonical stub: e_lfanew 0x80, optional header 240 bytes, two entries
    const std::uint64_t table_end = 0x80 + 24 + 240 + 2 * 40;
    const std::uint64_t soh = align_up(table_end, 0x200);
    const auto slack = locate_slack(img);
    REQUIRE(slack.size() == 2);
    CHECK(slack[0].offset == soh + 0x380);
    CHECK(slack[0].length == 0x400 - 0x380);
    CHECK(slack[1].offset == soh + 0x400 + 0x500);
    CHECK(slack[1].length == 0x600 - 0x500);
    // slack never intersects mapped bytes
    for (const auto& r : slack) {
      const auto& s = img.sections()[r.section_index];
      CHECK(r.offset >= s.raw_ptr + s.mapped_size());
      CHECK(r.offset + r.length <= std::uint64_t(s.raw_ptr) + s.raw_size);
    }
  }
}

TEST_CASE("update_checksum zeroes the field and is idempotent") {
  const Bytes base = generate(basic_malicious_spec(17));
  PeImage img = parse_pe(base);

  // plant a nonzero checksum
  Bytes with_sum = base;
  wr32(with_sum.data() + img.opt().checksum_offset, 0xdeadbeef);
  const PeImage dirty = parse_pe(with_sum);

  const PeImage cleaned = update_checksum(dirty);
  CHECK(rd32(cleaned.bytes(), cleaned.opt().checksum_offset) == 0);
  CHECK(cleaned.bytes() == base); // only those 4 bytes differed

  const PeImage again = update_checksum(cleaned);
  CHECK(again.bytes() == cleaned.bytes());
}

TEST_CASE("inspect output is line-oriented name = hex") {
  const PeImage img = parse_pe(generate(basic_malicious_spec(23)));
  const std::string dump = inspect_pe(img);
  CHECK(dump.find("e_lfanew = 0x100\n") != std::string::npos);
  CHECK(dump.find("machine = 0x8664\n") != std::string::npos);
  CHECK(dump.find("number_of_sections = 0x2\n") != std::string::npos);
  CHECK(dump.find("section.0.raw_size = 0x1000\n") != std::string::npos);
  // every line has the `name = value` shape
  std::stringstream ss(dump);
  std::string line;
  while (std::getline(ss, line)) {
    CHECK(line.find(" = 0x") != std::string::npos);
  }
}

TEST_CASE("parse flags signed images") {
  const Bytes base = generate(basic_malicious_spec(29));
  PeImage img = parse_pe(base);
  REQUIRE(img.security_dir_offset() != 0);
  CHECK(!img.is_signed());

  Bytes signed_bytes = base;
  // point the security entry at the overlay
  wr32(signed_bytes.data() + img.security_dir_offset(),
       static_cast<std::uint32_t>(img.overlay_offset()));
  wr32(signed_bytes.data() + img.security_dir_offset() + 4, 0x100);
  CHECK(parse_pe(signed_bytes).is_signed());
}

} // TEST_SUITE
