#include "pcdf/corpus.hpp"

#include <fstream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "pcdf/error.hpp"
#include "pcdf/text.hpp"

namespace pcdf {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

ClassSet::ClassSet(std::string dataset_id, const std::vector<std::string>& labels,
                   const std::map<std::string, std::vector<std::string>>& aliases)
    : dataset_id_(std::move(dataset_id)) {
  if (labels.size() < 2) throw ConfigError("class set '" + dataset_id_ + "' needs at least 2 labels");
  std::set<std::string> seen;
  for (const auto& raw : labels) {
    std::string c = text::canonicalize(raw);
    if (c.empty()) throw ConfigError("empty label in class set '" + dataset_id_ + "'");
    if (!seen.insert(c).second) throw ConfigError("duplicate label '" + c + "'");
    labels_.push_back(std::move(c));
  }
  aliases_.resize(labels_.size());
  std::map<std::string, std::size_t> owner;
  for (std::size_t i = 0; i < labels_.size(); ++i) owner[labels_[i]] = i;
  for (const auto& [key, list] : aliases) {
    const auto it = std::find(labels_.begin(), labels_.end(), text::canonicalize(key));
    if (it == labels_.end()) throw ConfigError("aliases given for unknown label '" + key + "'");
    const auto idx = static_cast<std::size_t>(it - labels_.begin());
    for (const auto& a : list) {
      const std::string c = text::canonicalize(a);
      if (c.empty()) throw ConfigError("empty alias for label '" + labels_[idx] + "'");
      const auto [pos, inserted] = owner.emplace(c, idx);
      if (!inserted && pos->second != idx) {
        throw ConfigError("alias '" + a + "' collides with label '" + labels_[pos->second] + "'");
      }
      aliases_[idx].push_back(a);
    }
  }
}

std::optional<std::size_t> ClassSet::find_label(std::string_view s) const {
  const std::string c = text::canonicalize(s);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == c) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> ClassSet::find_alias(std::string_view s) const {
  const std::string c = text::canonicalize(s);
  for (std::size_t i = 0; i < aliases_.size(); ++i) {
    for (const auto& a : aliases_[i]) {
      if (text::canonicalize(a) == c) return i;
    }
  }
  return std::nullopt;
}

std::optional<std::size_t> ClassSet::resolve(std::string_view s) const {
  if (auto i = find_label(s)) return i;
  return find_alias(s);
}

std::string ClassSet::classes_text() const { return text::join(labels_, ", "); }

ClassConfig load_class_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open class config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    std::map<std::string, std::vector<std::string>> aliases;
    if (j.contains("aliases")) aliases = j.at("aliases").get<decltype(aliases)>();
    ClassConfig cfg{ClassSet(j.at("dataset_id").get<std::string>(),
                             j.at("labels").get<std::vector<std::string>>(), aliases),
                    {}};
    if (j.contains("knowledge")) {
      for (const auto& [label, body] : j.at("knowledge").items()) {
        const auto idx = cfg.class_set.find_label(label);
        if (!idx) throw ConfigError("knowledge given for unknown label '" + label + "'");
        cfg.knowledge[cfg.class_set.label(*idx)] = body.get<std::string>();
      }
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

const Sample* Corpus::find(std::string_view id) const {
  for (const auto& s : samples) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

Corpus load_manifest(const std::filesystem::path& manifest_path, const ClassSet& class_set) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  Corpus corpus{class_set, {}, manifest_path.parent_path()};
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw IngestError(manifest_path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    Sample s;
    std::string label;
    try {
      s.id = j.at("id").get<std::string>();
      s.split = parse_split(j.at("split").get<std::string>());
      s.image_ref = j.at("image_ref").get<std::string>();
      label = j.at("label").get<std::string>();
    } catch (const json::exception& e) {
      fail(std::string("bad record: ") + e.what());
    } catch (const FormatError& e) {
      fail(e.what());
    }
    const auto idx = class_set.resolve(label);
    if (!idx) fail("unknown label '" + label + "'");
    s.gold_index = *idx;
    if (!ids.insert(s.id).second) fail("duplicate id '" + s.id + "'");
    if (!std::filesystem::is_regular_file(corpus.root / s.image_ref)) {
      fail("missing image file '" + s.image_ref + "'");
    }
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

Corpus load_manifest(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& class_config_path) {
  return load_manifest(manifest_path, load_class_config(class_config_path).class_set);
}

std::string manifest_line(const Sample& s, const ClassSet& class_set) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["split"] = to_string(s.split);
  j["image_ref"] = s.image_ref;
  j["label"] = class_set.label(s.gold_index);
  return j.dump();
}

}  // namespace pcdf
