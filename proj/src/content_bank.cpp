#include "peevader/content_bank.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "peevader/pe_model.hpp"

namespace pev {

namespace {

Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void put_u32(Bytes& out, std::uint32_t v) {
  out.resize(out.size() + 4);
  wr32(out.data() + out.size() - 4, v);
}

} // namespace

void ContentBank::refresh_digest() {
  const Bytes payload = serialize();
  digest_ = fnv1a64(ByteView(payload.data() + sizeof kBankMagic,
                             payload.size() - sizeof kBankMagic));
}

Bytes ContentBank::serialize() const {
  Bytes out(kBankMagic, kBankMagic + sizeof kBankMagic);
  put_u32(out, static_cast<std::uint32_t>(names_.size()));
  for (const auto& n : names_) {
    put_u32(out, 8);
    out.insert(out.end(), n.name.begin(), n.name.end());
    put_u32(out, n.count);
  }
  put_u32(out, static_cast<std::uint32_t>(blocks_.size()));
  for (const auto& b : blocks_) {
    put_u32(out, 8);
    out.insert(out.end(), b.source.begin(), b.source.end());
    put_u32(out, static_cast<std::uint32_t>(b.data.size()));
    out.insert(out.end(), b.data.begin(), b.data.end());
  }
  return out;
}

ContentBank ContentBank::build(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  ContentBank bank;
  std::size_t parsed = 0;
  for (const auto& path : files) {
    Bytes data;
    try {
      data = read_file(path);
      parse_pe(data);
    } catch (const Error&) {
      continue;
    }
    const PeImage img = parse_pe(data);
    ++parsed;
    for (const auto& s : img.sections()) {
      auto it = std::find_if(bank.names_.begin(), bank.names_.end(),
                             [&](const BankName& n) { return n.name == s.name; });
      if (it == bank.names_.end())
        bank.names_.push_back({s.name, 1});
      else
        ++it->count;
      if (s.raw_size == 0) continue;
      for (std::uint64_t k = 0; k < kBankBlocksPerSection; ++k) {
        const std::uint64_t off = std::uint64_t(s.raw_ptr) + k * kBankBlockSize;
        const std::uint64_t end = std::uint64_t(s.raw_ptr) + s.raw_size;
        if (off >= end) break;
        const std::uint64_t len = std::min(kBankBlockSize, end - off);
        BankBlock block;
        block.source = s.name;
        block.data.assign(img.bytes().begin() + off, img.bytes().begin() + off + len);
        bank.blocks_.push_back(std::move(block));
      }
    }
  }
  if (parsed == 0) throw EmptyBank("no parseable PE in " + dir.string());
  bank.refresh_digest();
  return bank;
}

ContentBank ContentBank::from_parts(std::vector<BankName> names, std::vector<BankBlock> blocks) {
  for (const auto& b : blocks)
    if (b.data.empty() || b.data.size() > kBankMaxBlockSize)
      throw InvalidSpec("bank block size out of range");
  ContentBank bank;
  bank.names_ = std::move(names);
  bank.blocks_ = std::move(blocks);
  bank.refresh_digest();
  return bank;
}

void ContentBank::save(const std::filesystem::path& file) const {
  const Bytes payload = serialize();
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("short write to " + file.string());
}

ContentBank ContentBank::load(const std::filesystem::path& file) {
  const Bytes data = read_file(file);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > data.size()) throw Error("truncated bank file " + file.string());
  };
  need(sizeof kBankMagic);
  if (std::memcmp(data.data(), kBankMagic, sizeof kBankMagic) != 0)
    throw Error("not a bank file: " + file.string());
  pos = sizeof kBankMagic;
  auto take_u32 = [&]() {
    need(4);
    const std::uint32_t v = rd32(data, pos);
    pos += 4;
    return v;
  };

  ContentBank bank;
  const std::uint32_t name_count = take_u32();
  for (std::uint32_t i = 0; i < name_count; ++i) {
    const std::uint32_t len = take_u32();
    if (len != 8) throw Error("bad name record in " + file.string());
    need(8);
    BankName n;
    std::memcpy(n.name.data(), data.data() + pos, 8);
    pos += 8;
    n.count = take_u32();
    bank.names_.push_back(n);
  }
  const std::uint32_t block_count = take_u32();
  for (std::uint32_t i = 0; i < block_count; ++i) {
    const std::uint32_t tag_len = take_u32();
    if (tag_len != 8) throw Error("bad block record in " + file.string());
    need(8);
    BankBlock b;
    std::memcpy(b.source.data(), data.data() + pos, 8);
    pos += 8;
    const std::uint32_t data_len = take_u32();
    if (data_len == 0 || data_len > kBankMaxBlockSize)
      throw Error("bad block length in " + file.string());
    need(data_len);
    b.data.assign(data.begin() + pos, data.begin() + pos + data_len);
    pos += data_len;
    bank.blocks_.push_back(std::move(b));
  }
  if (pos != data.size()) throw Error("trailing bytes in " + file.string());
  bank.refresh_digest();
  return bank;
}

Bytes ContentBank::sample_block(std::uint64_t len, Rng& rng) const {
  if (len == 0) throw InvalidSpec("sample_block needs len >= 1");
  if (blocks_.empty()) throw EmptyBank("bank has no blocks");
  Bytes out;
  out.reserve(len);
  while (out.size() < len) {
    const BankBlock& b = blocks_[rng.below(blocks_.size())];
    const std::uint64_t remaining = len - out.size();
    if (b.data.size() >= remaining) {
      const std::uint64_t off = rng.below(b.data.size() - remaining + 1);
      out.insert(out.end(), b.data.begin() + off, b.data.begin() + off + remaining);
    } else {
      out.insert(out.end(), b.data.begin(), b.data.end());
    }
  }
  return out;
}

std::array<std::uint8_t, 8> ContentBank::sample_name(Rng& rng) const {
  if (names_.empty()) throw EmptyBank("bank has no names");
  std::uint64_t total = 0;
  for (const auto& n : names_) total += n.count;
  if (total == 0) return names_[rng.below(names_.size())].name;
  std::uint64_t x = rng.below(total);
  for (const auto& n : names_) {
    if (x < n.count) return n.name;
    x -= n.count;
  }
  return names_.back().name; // unreachable
}

} // namespace pev
