#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace pcdf {

// A decoded NPY array. Only unsigned 8-bit C-order data is supported.
struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> data;

  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t row_size() const;
};

// Parses NPY format versions 1.0 (and 2.0/3.0 header lengths). Throws
// FormatError on bad magic, an unsupported dtype, Fortran order or a payload
// size that disagrees with the header shape.
NpyArray parse_npy(std::string_view bytes);

// Serializes an array as NPY v1.0 with descr '|u1'.
std::string write_npy(const NpyArray& a);

}  // namespace pcdf
