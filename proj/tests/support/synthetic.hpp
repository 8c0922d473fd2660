#pragma once

// Synthetic corpora and scripted backends for tests and benchmarks.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcdf/backends.hpp"
#include "pcdf/corpus.hpp"
#include "pcdf/image.hpp"

namespace pcdf::synthetic {

struct Fixture {
  std::filesystem::path dir;
  std::filesystem::path manifest;
  std::filesystem::path classes;
  ClassConfig class_config;
  Corpus corpus;
};

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pcdf-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

// n samples with gold = i % k, 8x8 grayscale PNGs whose pixels depend on i.
inline Fixture make_corpus(const std::filesystem::path& dir, std::size_t n,
                           const std::vector<std::string>& labels, const std::string& dataset_id = "synthetic",
                           int edge = 8) {
  Fixture f;
  f.dir = dir;
  std::filesystem::create_directories(dir / "images");
  nlohmann::json cls = {{"dataset_id", dataset_id}, {"labels", labels}, {"knowledge", nlohmann::json::object()}};
  for (const auto& l : labels) cls["knowledge"][l] = "Typical findings of " + l + ".";
  f.classes = dir / "classes.json";
  write_text(f.classes, cls.dump(2));
  f.class_config = load_class_config(f.classes);

  std::string manifest;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> px(static_cast<std::size_t>(edge * edge));
    for (std::size_t j = 0; j < px.size(); ++j) px[j] = static_cast<std::uint8_t>((i * 31 + j * 7) & 0xFF);
    const std::string ref = "images/s" + std::to_string(i) + ".png";
    write_file_bytes(dir / ref, encode_png(image_from_pixels(px, edge, edge, 1)));
    const Split split = i % 5 == 4 ? Split::test : Split::train;
    manifest += manifest_line({"s" + std::to_string(i), split, ref, i % labels.size()}, f.class_config.class_set) + "\n";
  }
  f.manifest = dir / "manifest.jsonl";
  write_text(f.manifest, manifest);
  f.corpus = load_manifest(f.manifest, f.class_config.class_set);
  return f;
}

inline std::string keyword_for(const std::string& label) { return "kw" + std::to_string(label.size()) + "x" + label; }

// Doctor: asks a fixed question per turn. Patient: names a symptom keyword
// derived from the hidden label. Diagnoser: maps keywords back to labels,
// otherwise picks a label blind to the image.
inline nlohmann::json doc_backend_json(int latency_ms = 0) {
  return {{"kind", "scripted"},
          {"name", "scripted-doc"},
          {"latency_ms", latency_ms},
          {"rules", {{{"role", "doc"}, {"key", "any"}, {"response", "Question {t}: where does it hurt?"}}}}};
}

inline nlohmann::json patient_backend_json(const std::vector<std::string>& labels, int latency_ms = 0) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& l : labels) {
    rules.push_back({{"role", "patient"}, {"key", "label:" + l}, {"response", "I notice " + keyword_for(l) + " at turn {t}."}});
  }
  return {{"kind", "scripted"}, {"name", "scripted-patient"}, {"latency_ms", latency_ms}, {"rules", rules}};
}

inline nlohmann::json diagnoser_backend_json(const std::vector<std::string>& labels) {
  nlohmann::json rules = nlohmann::json::array();
  std::string blind;
  for (const auto& l : labels) {
    rules.push_back({{"role", "diagnoser"}, {"key", "contains:" + keyword_for(l)}, {"response", l}});
    blind += (blind.empty() ? "" : "|") + l;
  }
  rules.push_back({{"role", "diagnoser"}, {"key", "any"}, {"response", "{choice:" + blind + "}"}});
  return {{"kind", "scripted"}, {"name", "scripted-diagnoser"}, {"rules", rules}};
}

inline BackendConfig backend(const nlohmann::json& j) { return parse_backend_config(j); }

}  // namespace pcdf::synthetic
