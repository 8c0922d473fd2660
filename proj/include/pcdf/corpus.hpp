#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pcdf {

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

// Label space of one dataset. Labels are stored canonicalized; their order is
// the tie-break order everywhere downstream.
class ClassSet {
 public:
  ClassSet() = default;
  // Canonicalizes labels and aliases; throws ConfigError on duplicate labels
  // or aliases that collide across labels. `aliases` is keyed by any surface
  // form of a label.
  ClassSet(std::string dataset_id, const std::vector<std::string>& labels,
           const std::map<std::string, std::vector<std::string>>& aliases = {});

  const std::string& dataset_id() const { return dataset_id_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t index) const { return labels_.at(index); }
  // Raw alias strings per label index, as configured.
  const std::vector<std::string>& aliases(std::size_t index) const { return aliases_.at(index); }
  std::size_t size() const { return labels_.size(); }

  std::optional<std::size_t> find_label(std::string_view s) const;
  std::optional<std::size_t> find_alias(std::string_view s) const;
  // Label first, then alias; both after canonicalization.
  std::optional<std::size_t> resolve(std::string_view s) const;

  // "a, b, c" in label order.
  std::string classes_text() const;

 private:
  std::string dataset_id_;
  std::vector<std::string> labels_;
  std::vector<std::vector<std::string>> aliases_;
};

struct ClassConfig {
  ClassSet class_set;
  // canonical label -> clinical knowledge text
  std::map<std::string, std::string> knowledge;
};

ClassConfig load_class_config(const std::filesystem::path& path);

struct Sample {
  std::string id;
  Split split = Split::train;
  std::string image_ref;
  std::size_t gold_index = 0;
};

struct Corpus {
  ClassSet class_set;
  std::vector<Sample> samples;
  std::filesystem::path root;

  std::filesystem::path image_path(const Sample& s) const { return root / s.image_ref; }
  const Sample* find(std::string_view id) const;
};

// Image refs resolve against the manifest's directory.
Corpus load_manifest(const std::filesystem::path& manifest_path, const ClassSet& class_set);
Corpus load_manifest(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& class_config_path);

std::string manifest_line(const Sample& s, const ClassSet& class_set);

}  // namespace pcdf
