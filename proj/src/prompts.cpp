#include "pcdf/prompts.hpp"

#include <cstdlib>
#include <fstream>
#include <iterator>

#include "pcdf/error.hpp"
#include "pcdf/log.hpp"
#include "pcdf/text.hpp"

#ifndef PCDF_TEMPLATE_DIR
#define PCDF_TEMPLATE_DIR "templates"
#endif

namespace pcdf {
namespace {

constexpr std::string_view kImageToken = "{image}";

bool is_name_char(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }

}  // namespace

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::doc: return "doc";
    case TemplateId::patient: return "patient";
    case TemplateId::docft: return "docft";
    case TemplateId::zero_shot: return "zero_shot";
    case TemplateId::cot_derma: return "cot_derma";
    case TemplateId::cot_pneumonia: return "cot_pneumonia";
    case TemplateId::cot_retina: return "cot_retina";
    case TemplateId::cot_path: return "cot_path";
    case TemplateId::judge: return "judge";
  }
  return "";
}

TemplateId parse_template_id(std::string_view s) {
  for (auto id : kAllTemplates) {
    if (to_string(id) == s) return id;
  }
  throw TemplateError("unknown template id '" + std::string(s) + "'");
}

const std::set<std::string>& declared_placeholders(TemplateId id) {
  static const std::set<std::string> doc{"image", "history", "classes"};
  static const std::set<std::string> patient{"image", "gold_label", "question"};
  static const std::set<std::string> docft{"image", "classes", "history"};
  static const std::set<std::string> classify{"image", "classes"};
  static const std::set<std::string> judge{"image", "knowledge", "history", "T", "gold_label", "relevance_slots"};
  switch (id) {
    case TemplateId::doc: return doc;
    case TemplateId::patient: return patient;
    case TemplateId::docft: return docft;
    case TemplateId::judge: return judge;
    default: return classify;
  }
}

std::vector<std::string> scan_placeholders(std::string_view body) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < body.size() && is_name_char(body[j])) ++j;
    if (j > i + 1 && j < body.size() && body[j] == '}') {
      names.emplace_back(body.substr(i + 1, j - i - 1));
      i = j;
    }
  }
  return names;
}

std::string RenderedChat::text() const {
  std::string out;
  for (const auto& m : messages) {
    for (const auto& p : m.parts) {
      if (p.kind == ContentPart::Kind::text) out += p.text;
    }
  }
  return out;
}

const ImagePart* RenderedChat::image() const {
  for (const auto& m : messages) {
    for (const auto& p : m.parts) {
      if (p.kind == ContentPart::Kind::image) return &p.image;
    }
  }
  return nullptr;
}

TemplateStore TemplateStore::load(const std::filesystem::path& dir) {
  TemplateStore store;
  for (const auto id : kAllTemplates) {
    const auto path = dir / (std::string(to_string(id)) + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TemplateError("missing template file " + path.string());
    std::string body((std::istreambuf_iterator<char>(in)), {});
    if (!body.empty() && body.back() == '\n') body.pop_back();

    const auto found = scan_placeholders(body);
    const std::set<std::string> found_set(found.begin(), found.end());
    if (found_set != declared_placeholders(id)) {
      throw TemplateError(path.string() + ": placeholders do not match the declared set for '" +
                          std::string(to_string(id)) + "'");
    }
    const auto image_pos = body.find(kImageToken);
    if (image_pos != std::string::npos &&
        (image_pos != 0 || body.size() <= kImageToken.size() || body[kImageToken.size()] != '\n' ||
         body.find(kImageToken, 1) != std::string::npos)) {
      throw TemplateError(path.string() + ": {image} must appear once, alone on the first line");
    }
    store.bodies_[id] = std::move(body);
  }
  return store;
}

std::filesystem::path default_template_dir() {
  if (const char* env = std::getenv("PCDF_TEMPLATES"); env && *env) return env;
  return PCDF_TEMPLATE_DIR;
}

TemplateStore TemplateStore::load_default() { return load(default_template_dir()); }

const std::string& TemplateStore::body(TemplateId id) const {
  const auto it = bodies_.find(id);
  if (it == bodies_.end()) throw TemplateError("template not loaded: " + std::string(to_string(id)));
  return it->second;
}

RenderedChat TemplateStore::render(TemplateId id, const std::map<std::string, std::string>& context,
                                   std::optional<ImagePart> image) const {
  const auto& declared = declared_placeholders(id);
  for (const auto& [key, value] : context) {
    if (key == "image" || !declared.count(key)) {
      throw TemplateError("template '" + std::string(to_string(id)) + "' has no placeholder {" + key + "}");
    }
  }
  for (const auto& name : declared) {
    if (name != "image" && !context.count(name)) {
      throw TemplateError("template '" + std::string(to_string(id)) + "' is missing a value for {" + name + "}");
    }
  }
  const bool uses_image = declared.count("image") > 0;
  if (uses_image && !image) {
    throw TemplateError("template '" + std::string(to_string(id)) + "' needs an image");
  }

  std::string_view src = body(id);
  if (uses_image) src.remove_prefix(kImageToken.size() + 1);

  std::string out;
  out.reserve(src.size() + 256);
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] == '{') {
      std::size_t j = i + 1;
      while (j < src.size() && is_name_char(src[j])) ++j;
      if (j > i + 1 && j < src.size() && src[j] == '}') {
        out += context.at(std::string(src.substr(i + 1, j - i - 1)));
        i = j;
        continue;
      }
    }
    out.push_back(src[i]);
  }

  RenderedChat chat;
  chat.template_id = id;
  chat.bindings = context;
  ChatMessage user{"user", {}};
  if (uses_image) {
    ContentPart img;
    img.kind = ContentPart::Kind::image;
    img.image = std::move(*image);
    user.parts.push_back(std::move(img));
  }
  ContentPart txt;
  txt.text = std::move(out);
  user.parts.push_back(std::move(txt));
  chat.messages.push_back(std::move(user));
  return chat;
}

std::string format_history(const Dialogue& d) {
  std::string out;
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    if (i) out += "\n\n";
    out += "Doctor: " + d.turns[i].question + "\nPatient: " + d.turns[i].answer;
  }
  return out;
}

std::string history_slot(const Dialogue& d) { return d.turns.empty() ? "(none)" : format_history(d); }

TemplateId cot_template_for(std::string_view dataset_id) {
  const std::string id = text::canonicalize(dataset_id);
  if (id == "dermamnist") return TemplateId::cot_derma;
  if (id == "pneumoniamnist") return TemplateId::cot_pneumonia;
  if (id == "retinamnist") return TemplateId::cot_retina;
  if (id == "pathmnist") return TemplateId::cot_path;
  log::warn("no CoT prompt for dataset '" + std::string(dataset_id) + "', falling back to zero_shot");
  return TemplateId::zero_shot;
}

}  // namespace pcdf
