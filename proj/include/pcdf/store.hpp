#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcdf/corpus.hpp"
#include "pcdf/dialogue.hpp"
#include "pcdf/prompts.hpp"

namespace pcdf {

// Provenance of a simulated dialogue. Timestamps are only written when the run
// asks for them, so reruns of a deterministic simulation stay byte-identical.
struct SimMeta {
  std::string run_id;
  int T = 0;
  std::string doc_model;
  std::string patient_model;
  std::optional<std::string> started_at;
  std::optional<std::string> finished_at;

  bool operator==(const SimMeta&) const = default;
};

// One (image, dialogue, diagnosis) element of the dialogue-enriched dataset.
struct TripletRecord {
  std::string sample_id;
  std::string image_ref;
  std::string gold_label;
  std::size_t gold_index = 0;
  Dialogue dialogue;
  SimMeta sim_meta;

  bool operator==(const TripletRecord&) const = default;
};

nlohmann::ordered_json to_json(const TripletRecord& r);
// Structural parse; throws FormatError on missing/mistyped fields.
TripletRecord triplet_from_json(const nlohmann::json& j);
// One line, no trailing newline. Key order is fixed, so equal records
// serialize to equal bytes.
std::string serialize(const TripletRecord& r);

// Checks record-internal invariants, and the label/index pairing when a class
// set is supplied. Throws ValidationError.
void validate(const TripletRecord& r, const ClassSet* class_set = nullptr);

std::size_t write_records(const std::vector<TripletRecord>& records, const std::filesystem::path& path,
                          bool append = false);
std::vector<TripletRecord> read_records(const std::filesystem::path& path, const ClassSet* class_set = nullptr);

struct SFTRecord {
  std::string sample_id;
  std::string image_ref;
  std::string user_text;
  std::string assistant_text;
};

SFTRecord make_sft_record(const TripletRecord& t, const ClassSet& class_set, const TemplateStore& templates,
                          bool allow_empty_history = false);

// Writes one chat-format line per triplet and a `<out>.training_suggestion.json`
// sidecar with the reference LoRA settings (never executed here).
std::size_t export_sft(const std::vector<TripletRecord>& triplets, const ClassSet& class_set,
                       const TemplateStore& templates, const std::filesystem::path& out_path,
                       bool allow_empty_history = false);

std::filesystem::path training_suggestion_path(const std::filesystem::path& sft_path);

}  // namespace pcdf
