#include "pcdf/convert.hpp"

#include <array>
#include <fstream>
#include <span>

#include "pcdf/error.hpp"
#include "pcdf/image.hpp"
#include "pcdf/parallel.hpp"
#include "pcdf/zip.hpp"

namespace pcdf {
namespace {

struct ImageGeometry {
  int height = 0;
  int width = 0;
  int channels = 1;
};

ImageGeometry geometry_of(const NpyArray& images) {
  const auto& s = images.shape;
  if (s.size() == 3) return {static_cast<int>(s[1]), static_cast<int>(s[2]), 1};
  if (s.size() == 4 && (s[3] == 1 || s[3] == 3)) {
    return {static_cast<int>(s[1]), static_cast<int>(s[2]), static_cast<int>(s[3])};
  }
  std::string dims;
  for (auto d : s) dims += std::to_string(d) + " ";
  throw FormatError("images array must be N x H x W or N x H x W x {1,3}, got shape [ " + dims + "]");
}

std::string encode_row(const NpyArray& images, const ImageGeometry& g, std::size_t row) {
  const std::size_t stride = images.row_size();
  const std::span<const std::uint8_t> px(images.data.data() + row * stride, stride);
  return encode_png(image_from_pixels(px, g.width, g.height, g.channels));
}

const ZipReader::Entry* find_entry(const ZipReader& zip, const std::string& stem) {
  if (const auto* e = zip.find(stem + ".npy")) return e;
  return zip.find(stem);
}

}  // namespace

std::vector<std::string> encode_rows(const NpyArray& images, int workers) {
  const ImageGeometry g = geometry_of(images);
  std::vector<std::string> out(images.rows());
  parallel_for(out.size(), workers, [&](std::size_t i) { out[i] = encode_row(images, g, i); });
  return out;
}

namespace reference {
std::vector<std::string> encode_rows(const NpyArray& images) {
  const ImageGeometry g = geometry_of(images);
  std::vector<std::string> out(images.rows());
  serial_for(out.size(), [&](std::size_t i) { out[i] = encode_row(images, g, i); });
  return out;
}
}  // namespace reference

std::filesystem::path convert_archive(const std::filesystem::path& archive_path,
                                      const std::filesystem::path& out_dir,
                                      const ClassSet& class_set, const ConvertOptions& opts) {
  ZipReader zip(archive_path);
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> lines;
  bool any = false;
  for (const Split split : {Split::train, Split::val, Split::test}) {
    const std::string name(to_string(split));
    const auto* img_entry = find_entry(zip, name + "_images");
    const auto* lbl_entry = find_entry(zip, name + "_labels");
    if (!img_entry && !lbl_entry) continue;
    if (!img_entry || !lbl_entry) {
      throw FormatError(archive_path.string() + ": split '" + name + "' needs both images and labels");
    }
    any = true;
    NpyArray images;
    NpyArray labels;
    try {
      images = parse_npy(zip.read(*img_entry));
      labels = parse_npy(zip.read(*lbl_entry));
    } catch (const FormatError& e) {
      throw FormatError(archive_path.string() + " [" + name + "]: " + e.what());
    }
    if (labels.shape.empty() || labels.shape.size() > 2 || (labels.shape.size() == 2 && labels.shape[1] != 1)) {
      throw FormatError(archive_path.string() + ": " + name + "_labels must have shape N or N x 1");
    }
    if (images.rows() != labels.rows()) {
      throw FormatError(archive_path.string() + ": " + name + " has " + std::to_string(images.rows()) +
                        " images but " + std::to_string(labels.rows()) + " labels");
    }
    for (std::size_t i = 0; i < labels.rows(); ++i) {
      if (labels.data[i] >= class_set.size()) {
        throw FormatError(archive_path.string() + ": " + name + " label " + std::to_string(labels.data[i]) +
                          " at row " + std::to_string(i) + " is >= class count " + std::to_string(class_set.size()));
      }
    }

    const auto png = encode_rows(images, opts.workers);
    const auto dir = out_dir / "images" / name;
    std::filesystem::create_directories(dir);
    parallel_for(png.size(), opts.workers, [&](std::size_t i) {
      write_file_bytes(dir / (name + "-" + std::to_string(i) + ".png"), png[i]);
    });
    for (std::size_t i = 0; i < png.size(); ++i) {
      Sample s{name + "-" + std::to_string(i), split,
               "images/" + name + "/" + name + "-" + std::to_string(i) + ".png", labels.data[i]};
      lines.push_back(manifest_line(s, class_set));
    }
  }
  if (!any) throw FormatError(archive_path.string() + ": no {split}_images/{split}_labels entries found");

  const auto manifest = out_dir / "manifest.jsonl";
  const auto tmp = out_dir / "manifest.jsonl.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, manifest);
  return manifest;
}

}  // namespace pcdf
