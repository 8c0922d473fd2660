#include "pcdf/zip.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>

#include "pcdf/error.hpp"

namespace pcdf {
namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEocdSig = 0x06054b50;
constexpr std::uint32_t kZip64LocatorSig = 0x07064b50;
constexpr std::uint32_t kZip64EocdSig = 0x06064b50;

std::uint64_t le(const char* p, int n) {
  std::uint64_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

void put_le(std::string& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

ZipReader::ZipReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open archive " + path.string());
  in_.seekg(0, std::ios::end);
  file_size_ = static_cast<std::uint64_t>(in_.tellg());
  auto read_at = [&](std::uint64_t off, std::size_t n) {
    if (off + n > file_size_) throw FormatError(path_.string() + ": truncated zip");
    std::string buf(n, '\0');
    in_.seekg(static_cast<std::streamoff>(off));
    in_.read(buf.data(), static_cast<std::streamsize>(n));
    return buf;
  };

  const std::size_t tail_len = static_cast<std::size_t>(std::min<std::uint64_t>(file_size_, 22 + 65535));
  if (tail_len < 22) throw FormatError(path_.string() + ": not a zip archive");
  const std::string tail = read_at(file_size_ - tail_len, tail_len);
  std::size_t eocd = std::string::npos;
  for (std::size_t i = tail_len - 22 + 1; i-- > 0;) {
    if (le(tail.data() + i, 4) == kEocdSig) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos) throw FormatError(path_.string() + ": not a zip archive (no end record)");
  const char* e = tail.data() + eocd;
  std::uint64_t total = le(e + 10, 2);
  std::uint64_t cd_size = le(e + 12, 4);
  std::uint64_t cd_offset = le(e + 16, 4);

  const std::uint64_t eocd_abs = file_size_ - tail_len + eocd;
  if ((total == 0xFFFF || cd_size == 0xFFFFFFFF || cd_offset == 0xFFFFFFFF) && eocd_abs >= 20) {
    const std::string loc = read_at(eocd_abs - 20, 20);
    if (le(loc.data(), 4) == kZip64LocatorSig) {
      const std::string z = read_at(le(loc.data() + 8, 8), 56);
      if (le(z.data(), 4) != kZip64EocdSig) throw FormatError(path_.string() + ": bad zip64 end record");
      total = le(z.data() + 32, 8);
      cd_size = le(z.data() + 40, 8);
      cd_offset = le(z.data() + 48, 8);
    }
  }

  const std::string cd = read_at(cd_offset, static_cast<std::size_t>(cd_size));
  std::size_t p = 0;
  for (std::uint64_t n = 0; n < total; ++n) {
    if (p + 46 > cd.size() || le(cd.data() + p, 4) != kCentralSig) {
      throw FormatError(path_.string() + ": corrupt central directory");
    }
    const char* h = cd.data() + p;
    Entry ent;
    ent.method = static_cast<std::uint16_t>(le(h + 10, 2));
    ent.crc32 = static_cast<std::uint32_t>(le(h + 16, 4));
    ent.compressed_size = le(h + 20, 4);
    ent.uncompressed_size = le(h + 24, 4);
    const auto name_len = le(h + 28, 2);
    const auto extra_len = le(h + 30, 2);
    const auto comment_len = le(h + 32, 2);
    ent.local_header_offset = le(h + 42, 4);
    if (p + 46 + name_len + extra_len + comment_len > cd.size()) {
      throw FormatError(path_.string() + ": corrupt central directory");
    }
    ent.name.assign(h + 46, name_len);
    const char* x = h + 46 + name_len;
    for (std::size_t q = 0; q + 4 <= extra_len;) {
      const auto id = le(x + q, 2);
      const auto sz = le(x + q + 2, 2);
      if (id == 0x0001) {
        std::size_t r = q + 4;
        if (ent.uncompressed_size == 0xFFFFFFFF) { ent.uncompressed_size = le(x + r, 8); r += 8; }
        if (ent.compressed_size == 0xFFFFFFFF) { ent.compressed_size = le(x + r, 8); r += 8; }
        if (ent.local_header_offset == 0xFFFFFFFF) { ent.local_header_offset = le(x + r, 8); }
      }
      q += 4 + sz;
    }
    entries_.push_back(std::move(ent));
    p += 46 + name_len + extra_len + comment_len;
  }
}

const ZipReader::Entry* ZipReader::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string ZipReader::read(const Entry& e) {
  std::string local(30, '\0');
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(e.local_header_offset));
  in_.read(local.data(), 30);
  if (!in_ || le(local.data(), 4) != kLocalSig) {
    throw FormatError(path_.string() + ": bad local header for " + e.name);
  }
  const std::uint64_t data_off = e.local_header_offset + 30 + le(local.data() + 26, 2) + le(local.data() + 28, 2);
  if (data_off + e.compressed_size > file_size_) throw FormatError(path_.string() + ": truncated entry " + e.name);
  std::string raw(static_cast<std::size_t>(e.compressed_size), '\0');
  in_.seekg(static_cast<std::streamoff>(data_off));
  in_.read(raw.data(), static_cast<std::streamsize>(raw.size()));

  std::string out;
  if (e.method == 0) {
    out = std::move(raw);
  } else if (e.method == 8) {
    out.resize(static_cast<std::size_t>(e.uncompressed_size));
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw FormatError("zlib init failed");
    // Feed in chunks: z_stream counters are 32-bit.
    std::size_t in_pos = 0, out_pos = 0;
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
      const std::size_t in_chunk = std::min<std::size_t>(raw.size() - in_pos, 1u << 30);
      const std::size_t out_chunk = std::min<std::size_t>(out.size() - out_pos, 1u << 30);
      zs.next_in = reinterpret_cast<Bytef*>(raw.data() + in_pos);
      zs.avail_in = static_cast<uInt>(in_chunk);
      zs.next_out = reinterpret_cast<Bytef*>(out.data() + out_pos);
      zs.avail_out = static_cast<uInt>(out_chunk);
      rc = inflate(&zs, Z_NO_FLUSH);
      in_pos += in_chunk - zs.avail_in;
      out_pos += out_chunk - zs.avail_out;
      if (rc != Z_OK && rc != Z_STREAM_END) {
        inflateEnd(&zs);
        throw FormatError(path_.string() + ": inflate failed for " + e.name);
      }
      if (rc == Z_OK && zs.avail_in == in_chunk && zs.avail_out == out_chunk) {
        inflateEnd(&zs);
        throw FormatError(path_.string() + ": truncated deflate stream in " + e.name);
      }
    }
    inflateEnd(&zs);
    if (out_pos != out.size()) throw FormatError(path_.string() + ": size mismatch in " + e.name);
  } else {
    throw FormatError(path_.string() + ": unsupported compression method " + std::to_string(e.method));
  }
  uLong crc = crc32(0L, Z_NULL, 0);
  for (std::size_t off = 0; off < out.size(); off += 1u << 30) {
    const auto n = std::min<std::size_t>(out.size() - off, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(out.data() + off), static_cast<uInt>(n));
  }
  if (static_cast<std::uint32_t>(crc) != e.crc32) throw FormatError(path_.string() + ": CRC mismatch in " + e.name);
  return out;
}

void write_stored_zip(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out;
  std::string central;
  for (const auto& [name, data] : entries) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
    const auto offset = out.size();
    put_le(out, kLocalSig, 4);
    put_le(out, 20, 2);
    put_le(out, 0, 2);  // flags
    put_le(out, 0, 2);  // stored
    put_le(out, 0, 4);  // time/date
    put_le(out, crc, 4);
    put_le(out, data.size(), 4);
    put_le(out, data.size(), 4);
    put_le(out, name.size(), 2);
    put_le(out, 0, 2);
    out += name;
    out += data;

    put_le(central, kCentralSig, 4);
    put_le(central, 20, 2);
    put_le(central, 20, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 4);
    put_le(central, crc, 4);
    put_le(central, data.size(), 4);
    put_le(central, data.size(), 4);
    put_le(central, name.size(), 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 4);
    put_le(central, offset, 4);
    central += name;
  }
  const auto cd_offset = out.size();
  out += central;
  put_le(out, kEocdSig, 4);
  put_le(out, 0, 2);
  put_le(out, 0, 2);
  put_le(out, entries.size(), 2);
  put_le(out, entries.size(), 2);
  put_le(out, central.size(), 4);
  put_le(out, cd_offset, 4);
  put_le(out, 0, 2);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace pcdf
