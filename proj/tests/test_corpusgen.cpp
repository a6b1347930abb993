#include <doctest.h>

#include "peevader/corpusgen.hpp"
#include "peevader/oracle.hpp"
#include "peevader/transforms.hpp"
#include "support/helpers.hpp"

using namespace pev;
using namespace testsupport;

TEST_SUITE("corpusgen") {

TEST_CASE("same seed, same bytes") {
  const GenSpec spec = basic_malicious_spec(41);
  CHECK(generate(spec) == generate(spec));
  CHECK(generate_suite(4, Profile::Malicious, 9) == generate_suite(4, Profile::Malicious, 9));
}

TEST_CASE("benign profile scores below 0.5, hand-evaluated") {
  for (const Bytes& data : generate_suite(10, Profile::Benign, 31)) {
    const PeImage img = parse_pe(data);

    // independent route: recompute every feature here and evaluate the
    // documented logistic by hand
    double exec_entropy = 0.0;
    int exec_count = 0;
    int nonstd = 0;
    for (const auto& s : img.sections()) {
      if (s.executable() && s.raw_size > 0) {
        exec_entropy += entropy_bits(data.data() + s.raw_ptr, s.raw_size) / 8.0;
        ++exec_count;
      }
      const std::string n = s.name_str();
      if (n != ".text" && n != ".rdata" && n != ".data" && n != ".rsrc" && n != ".reloc")
        ++nonstd;
    }
    const double f1 = exec_count ? exec_entropy / exec_count : 0.0;
    const double f2 = img.sections().empty() ? 0.0 : double(nonstd) / img.sections().size();
    const double f3 = double(img.overlay_length()) / double(img.size());
    double f4 = 1.0;
    if (img.dos().e_lfanew == 0x80) {
      const ByteView canon = canonical_dos_region();
      f4 = (std::equal(data.begin() + 2, data.begin() + 0x3c, canon.begin() + 2) &&
            std::equal(data.begin() + 0x40, data.begin() + 0x80, canon.begin() + 0x40))
               ? 0.0
               : 1.0;
    }
    std::uint64_t printable = 0;
    for (std::uint8_t c : data)
      if ((c >= 0x20 && c <= 0x7e) || c == 0x09 || c == 0x0a || c == 0x0d) ++printable;
    const double f5 = double(printable) / double(data.size());

    const BuiltinWeights& w = builtin_weights();
    const double z = w.exec_entropy * f1 + w.nonstd_name_frac * f2 + w.overlay_frac * f3 +
                     w.stub_modified * f4 + w.printable_frac * f5 + w.bias;
    const double by_hand = 1.0 / (1.0 + std::exp(-z));

    CHECK(builtin_score(img) == doctest::Approx(by_hand).epsilon(1e-12));
    CHECK(by_hand < 0.5);
    CHECK(f4 == 0.0); // canonical stub
    CHECK(f2 == 0.0); // standard names only
    CHECK(f3 == 0.0); // no overlay
  }
}

TEST_CASE("malicious profile scores above 0.5") {
  for (const Bytes& data : generate_suite(10, Profile::Malicious, 32)) {
    const PeImage img = parse_pe(data);
    CHECK(builtin_score(img) > 0.5);
    // exercisable by every action kind: header room and NOP slack
    const std::uint64_t table_end =
        img.section_table_offset() + 40ULL * img.coff().number_of_sections;
    CHECK(table_end + 40 <= img.opt().size_of_headers);
    bool exec_slack_nops = false;
    for (const auto& r : locate_slack(img)) {
      const auto& s = img.sections()[r.section_index];
      if (!s.executable()) continue;
      exec_slack_nops = r.length >= 2 && data[r.offset] == 0x90 && data[r.offset + 1] == 0x90;
    }
    CHECK(exec_slack_nops);
  }
}

TEST_CASE("profile separation is at least 0.2") {
  double min_mal = 1.0, max_ben = 0.0;
  for (const Bytes& data : generate_suite(25, Profile::Malicious, 33))
    min_mal = std::min(min_mal, builtin_score(parse_pe(data)));
  for (const Bytes& data : generate_suite(25, Profile::Benign, 34))
    max_ben = std::max(max_ben, builtin_score(parse_pe(data)));
  CHECK(min_mal - max_ben >= 0.2);
}

TEST_CASE("no-header-room sub-profile rejects SectionAdd every time") {
  for (const Bytes& data : generate_suite(8, Profile::MaliciousNoHeaderRoom, 35)) {
    const PeImage img = parse_pe(data);
    CHECK(builtin_score(img) > 0.5);
    const std::uint64_t table_end =
        img.section_table_offset() + 40ULL * img.coff().number_of_sections;
    CHECK(img.opt().size_of_headers - table_end < 40);
    ActionSpec spec;
    spec.kind = ActionKind::SectionAdd;
    spec.size = 512;
    spec.seed = 1;
    CHECK_THROWS_AS(section_add(img, spec, ContentBank::none()), NoHeaderRoom);
  }
}

TEST_CASE("suite sizes") {
  CHECK(generate_suite(1, Profile::Benign, 36).size() == 1);
  CHECK_THROWS_AS(generate_suite(0, Profile::Benign, 36), InvalidSpec);
}

TEST_CASE("generate validates the spec") {
  GenSpec spec;
  spec.sections.push_back({".text", 0x100, 0x123, kScnCode, EntropyProfile::Low});
  CHECK_THROWS_AS(generate(spec), InvalidSpec); // raw_size not 0x200-aligned

  GenSpec long_name;
  long_name.sections.push_back({"waytoolongname", 0x100, 0x200, kScnCode, EntropyProfile::Low});
  CHECK_THROWS_AS(generate(long_name), InvalidSpec);
}

TEST_CASE("write_suite emits files that filter back to the expected side") {
  TempDir dir("corpus");
  write_suite(dir.path, 3, Profile::Benign, 44);
  write_suite(dir.path, 3, Profile::Malicious, 45);
  int detected = 0, total = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir.path)) {
    const PeImage img = parse_pe(read_file(entry.path()));
    detected += builtin_score(img) >= 0.5 ? 1 : 0;
    ++total;
  }
  CHECK(total == 6);
  CHECK(detected == 3);
}

} // TEST_SUITE
