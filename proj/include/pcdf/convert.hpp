#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pcdf/corpus.hpp"
#include "pcdf/npy.hpp"

namespace pcdf {

struct ConvertOptions {
  int workers = 1;
};

// Converts a zip-of-NPY archive with `{split}_images` / `{split}_labels`
// entries into PNG files plus a manifest. Returns the manifest path
// (`out_dir/manifest.jsonl`). Images land in `out_dir/images/{split}/`.
std::filesystem::path convert_archive(const std::filesystem::path& archive_path,
                                      const std::filesystem::path& out_dir,
                                      const ClassSet& class_set,
                                      const ConvertOptions& opts = {});

// PNG-encodes every row of an N x H x W [x C] array. Parallel over rows.
std::vector<std::string> encode_rows(const NpyArray& images, int workers);

namespace reference {
// Serial encoder kept as the baseline for tests and the benchmark.
std::vector<std::string> encode_rows(const NpyArray& images);
}  // namespace reference

}  // namespace pcdf
