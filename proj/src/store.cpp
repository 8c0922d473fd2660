#include "pcdf/store.hpp"

#include <fstream>

#include "pcdf/error.hpp"
#include "pcdf/text.hpp"

namespace pcdf {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const TripletRecord& r) {
  ordered_json turns = ordered_json::array();
  for (const auto& t : r.dialogue.turns) {
    ordered_json flags = ordered_json::array();
    for (const auto f : t.flags) flags.push_back(to_string(f));
    turns.push_back({{"t", t.index}, {"question", t.question}, {"answer", t.answer}, {"flags", flags}});
  }
  ordered_json meta = {{"run_id", r.sim_meta.run_id},
                       {"T", r.sim_meta.T},
                       {"doc_model", r.sim_meta.doc_model},
                       {"patient_model", r.sim_meta.patient_model}};
  if (r.sim_meta.started_at || r.sim_meta.finished_at) {
    meta["timestamps"] = {{"started", r.sim_meta.started_at.value_or("")},
                          {"finished", r.sim_meta.finished_at.value_or("")}};
  }
  return {{"sample_id", r.sample_id},
          {"image_ref", r.image_ref},
          {"gold_label", r.gold_label},
          {"gold_index", r.gold_index},
          {"dialogue", {{"sample_id", r.dialogue.sample_id}, {"turns", turns}}},
          {"sim_meta", meta}};
}

TripletRecord triplet_from_json(const json& j) {
  try {
    TripletRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.image_ref = j.at("image_ref").get<std::string>();
    r.gold_label = j.at("gold_label").get<std::string>();
    r.gold_index = j.at("gold_index").get<std::size_t>();
    const auto& d = j.at("dialogue");
    r.dialogue.sample_id = d.at("sample_id").get<std::string>();
    for (const auto& t : d.at("turns")) {
      Turn turn;
      turn.index = t.at("t").get<int>();
      turn.question = t.at("question").get<std::string>();
      turn.answer = t.at("answer").get<std::string>();
      for (const auto& f : t.value("flags", json::array())) turn.flags.insert(parse_turn_flag(f.get<std::string>()));
      r.dialogue.turns.push_back(std::move(turn));
    }
    const auto& m = j.at("sim_meta");
    r.sim_meta.run_id = m.at("run_id").get<std::string>();
    r.sim_meta.T = m.at("T").get<int>();
    r.sim_meta.doc_model = m.at("doc_model").get<std::string>();
    r.sim_meta.patient_model = m.at("patient_model").get<std::string>();
    if (m.contains("timestamps")) {
      r.sim_meta.started_at = m["timestamps"].at("started").get<std::string>();
      r.sim_meta.finished_at = m["timestamps"].at("finished").get<std::string>();
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("triplet record: ") + e.what());
  }
}

std::string serialize(const TripletRecord& r) { return to_json(r).dump(); }

void validate(const TripletRecord& r, const ClassSet* class_set) {
  if (r.dialogue.sample_id != r.sample_id) {
    throw ValidationError("dialogue.sample_id '" + r.dialogue.sample_id + "' != sample_id '" + r.sample_id + "'");
  }
  for (std::size_t i = 0; i < r.dialogue.turns.size(); ++i) {
    const auto& t = r.dialogue.turns[i];
    if (t.index != static_cast<int>(i) + 1) {
      throw ValidationError("turn indices of '" + r.sample_id + "' are not 1..n");
    }
    if (text::trim(t.question).empty() || text::trim(t.answer).empty()) {
      throw ValidationError("empty question or answer at turn " + std::to_string(t.index) + " of '" + r.sample_id + "'");
    }
  }
  if (class_set) {
    if (r.gold_index >= class_set->size()) {
      throw ValidationError("gold_index " + std::to_string(r.gold_index) + " out of range for '" + r.sample_id + "'");
    }
    if (class_set->label(r.gold_index) != r.gold_label) {
      throw ValidationError("gold_label '" + r.gold_label + "' != labels[" + std::to_string(r.gold_index) + "] = '" +
                            class_set->label(r.gold_index) + "' for '" + r.sample_id + "'");
    }
  }
}

std::size_t write_records(const std::vector<TripletRecord>& records, const std::filesystem::path& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::size_t line = 0;
  for (const auto& r : records) {
    ++line;
    out << serialize(r) << '\n';
    if (!out) throw IoError(path.string() + ":" + std::to_string(line) + ": write failed");
  }
  out.flush();
  if (!out) throw IoError(path.string() + ": flush failed");
  return records.size();
}

std::vector<TripletRecord> read_records(const std::filesystem::path& path, const ClassSet* class_set) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TripletRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    TripletRecord r;
    try {
      r = triplet_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
    try {
      validate(r, class_set);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

SFTRecord make_sft_record(const TripletRecord& t, const ClassSet& class_set, const TemplateStore& templates,
                          bool allow_empty_history) {
  if (t.gold_index >= class_set.size()) {
    throw ValidationError("unknown gold_index " + std::to_string(t.gold_index) + " for '" + t.sample_id + "'");
  }
  if (t.dialogue.turns.empty() && !allow_empty_history) {
    throw ValidationError("triplet '" + t.sample_id + "' has an empty dialogue");
  }
  const auto chat = templates.render(TemplateId::docft,
                                     {{"classes", class_set.classes_text()}, {"history", history_slot(t.dialogue)}},
                                     ImagePart{t.image_ref, {}, {}});
  return {t.sample_id, t.image_ref, chat.text(), class_set.label(t.gold_index)};
}

std::filesystem::path training_suggestion_path(const std::filesystem::path& sft_path) {
  return sft_path.string() + ".training_suggestion.json";
}

std::size_t export_sft(const std::vector<TripletRecord>& triplets, const ClassSet& class_set,
                       const TemplateStore& templates, const std::filesystem::path& out_path,
                       bool allow_empty_history) {
  std::vector<SFTRecord> rows;
  rows.reserve(triplets.size());
  for (const auto& t : triplets) rows.push_back(make_sft_record(t, class_set, templates, allow_empty_history));

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + out_path.string() + " for writing");
  std::size_t line = 0;
  for (const auto& r : rows) {
    ++line;
    ordered_json j = {{"sample_id", r.sample_id},
                      {"image_ref", r.image_ref},
                      {"user_text", r.user_text},
                      {"assistant_text", r.assistant_text}};
    out << j.dump() << '\n';
    if (!out) throw IoError(out_path.string() + ":" + std::to_string(line) + ": write failed");
  }

  // Reference finetuning settings for an external trainer.
  ordered_json suggestion = {
      {"method", "lora"},
      {"lora_rank", 16},
      {"lora_alpha", 32},
      {"lora_dropout", 0.05},
      {"epochs", 10},
      {"batch_size", 8},
      {"objective", "next-token cross-entropy on assistant_text tokens"},
      {"records", rows.size()},
      {"dataset_id", class_set.dataset_id()}};
  std::ofstream side(training_suggestion_path(out_path), std::ios::trunc);
  if (!side) throw IoError("cannot write " + training_suggestion_path(out_path).string());
  side << suggestion.dump(2) << '\n';
  return rows.size();
}

}  // namespace pcdf
