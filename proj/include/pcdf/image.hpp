#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pcdf {

// Interleaved 8-bit RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Grayscale (channels == 1) is replicated to three channels.
Image image_from_pixels(std::span<const std::uint8_t> pixels, int width, int height, int channels);

std::string encode_png(const Image& img);
// Accepts PNG or JPEG bytes; throws FormatError otherwise.
Image decode_image(std::string_view bytes);
bool looks_like_png(std::string_view bytes);

// Nearest-neighbor resize to edge x edge. Images already at least `edge`
// in both dimensions are returned unchanged.
Image upscale_nearest(const Image& img, int edge);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace pcdf
