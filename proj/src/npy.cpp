#include "pcdf/npy.hpp"

#include <cstring>
#include <numeric>
#include <string>

#include "pcdf/error.hpp"

namespace pcdf {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::size_t skip_ws(std::string_view s, std::size_t i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n')) ++i;
  return i;
}

// Returns the position just after `'key':` in the header dict.
std::size_t find_key(std::string_view header, std::string_view key) {
  for (const char q : {'\'', '"'}) {
    std::string pat;
    pat += q;
    pat += key;
    pat += q;
    const auto pos = header.find(pat);
    if (pos == std::string_view::npos) continue;
    auto i = skip_ws(header, pos + pat.size());
    if (i >= header.size() || header[i] != ':') break;
    return skip_ws(header, i + 1);
  }
  throw FormatError("npy header missing key '" + std::string(key) + "'");
}

std::string read_quoted(std::string_view s, std::size_t i) {
  if (i >= s.size() || (s[i] != '\'' && s[i] != '"')) throw FormatError("npy header: expected string");
  const char q = s[i];
  const auto end = s.find(q, i + 1);
  if (end == std::string_view::npos) throw FormatError("npy header: unterminated string");
  return std::string(s.substr(i + 1, end - i - 1));
}

std::vector<std::size_t> read_shape(std::string_view s, std::size_t i) {
  if (i >= s.size() || s[i] != '(') throw FormatError("npy header: expected shape tuple");
  const auto end = s.find(')', i);
  if (end == std::string_view::npos) throw FormatError("npy header: unterminated shape");
  std::vector<std::size_t> shape;
  std::size_t j = i + 1;
  while (j < end) {
    j = skip_ws(s, j);
    if (j >= end) break;
    if (s[j] < '0' || s[j] > '9') throw FormatError("npy header: bad shape entry");
    std::size_t v = 0;
    while (j < end && s[j] >= '0' && s[j] <= '9') v = v * 10 + static_cast<std::size_t>(s[j++] - '0');
    shape.push_back(v);
    j = skip_ws(s, j);
    if (j < end && s[j] == ',') ++j;
  }
  return shape;
}

}  // namespace

std::size_t NpyArray::row_size() const {
  if (shape.size() <= 1) return 1;
  return std::accumulate(shape.begin() + 1, shape.end(), std::size_t{1}, std::multiplies<>());
}

NpyArray parse_npy(std::string_view bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw FormatError("npy: missing magic bytes");
  }
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t header_start = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    header_start = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw FormatError("npy: truncated header");
    for (int k = 3; k >= 0; --k) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[8 + k]);
    header_start = 12;
  } else {
    throw FormatError("npy: unsupported format version " + std::to_string(major));
  }
  if (header_start + header_len > bytes.size()) throw FormatError("npy: truncated header");
  const std::string_view header = bytes.substr(header_start, header_len);

  const std::string descr = read_quoted(header, find_key(header, "descr"));
  if (descr != "|u1" && descr != "<u1" && descr != ">u1" && descr != "u1") {
    throw FormatError("npy: unsupported dtype '" + descr + "' (need uint8)");
  }
  const auto fo = find_key(header, "fortran_order");
  if (header.substr(fo, 4) == "True") throw FormatError("npy: Fortran-order arrays are not supported");
  if (header.substr(fo, 5) != "False") throw FormatError("npy header: bad fortran_order");

  NpyArray a;
  a.shape = read_shape(header, find_key(header, "shape"));
  const std::size_t count = std::accumulate(a.shape.begin(), a.shape.end(), std::size_t{1}, std::multiplies<>());
  const std::string_view payload = bytes.substr(header_start + header_len);
  if (payload.size() != count) {
    throw FormatError("npy: payload has " + std::to_string(payload.size()) + " bytes, shape needs " +
                      std::to_string(count));
  }
  a.data.assign(payload.begin(), payload.end());
  return a;
}

std::string write_npy(const NpyArray& a) {
  std::string shape = "(";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    shape += std::to_string(a.shape[i]);
    if (i + 1 < a.shape.size() || a.shape.size() == 1) shape += ",";
    if (i + 1 < a.shape.size()) shape += " ";
  }
  shape += ")";
  std::string header = "{'descr': '|u1', 'fortran_order': False, 'shape': " + shape + ", }";
  // Total header (magic + version + len + dict + newline) is padded to 64 bytes.
  const std::size_t unpadded = kMagicLen + 4 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  std::string out(kMagic, kMagicLen);
  out += '\x01';
  out += '\x00';
  out += static_cast<char>(header.size() & 0xFF);
  out += static_cast<char>((header.size() >> 8) & 0xFF);
  out += header;
  out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size());
  return out;
}

}  // namespace pcdf
