#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pcdf/dialogue.hpp"

namespace pcdf {

enum class TemplateId { doc, patient, docft, zero_shot, cot_derma, cot_pneumonia, cot_retina, cot_path, judge };

inline constexpr std::array kAllTemplates = {
    TemplateId::doc,       TemplateId::patient,       TemplateId::docft,
    TemplateId::zero_shot, TemplateId::cot_derma,     TemplateId::cot_pneumonia,
    TemplateId::cot_retina, TemplateId::cot_path,     TemplateId::judge};

std::string_view to_string(TemplateId id);
TemplateId parse_template_id(std::string_view s);

// Placeholders each template must use, excluding nothing: `image` included.
const std::set<std::string>& declared_placeholders(TemplateId id);

// Names of `{name}` tokens in body order (duplicates kept).
std::vector<std::string> scan_placeholders(std::string_view body);

struct ImagePart {
  std::string ref;              // stable identifier (manifest image_ref or upload id)
  std::filesystem::path path;   // where to load bytes from, if `bytes` is empty
  std::string bytes;            // already-loaded image bytes (PNG)
};

struct ContentPart {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string text;
  ImagePart image;
};

struct ChatMessage {
  std::string role;  // "system" | "user"
  std::vector<ContentPart> parts;
};

struct RenderedChat {
  std::vector<ChatMessage> messages;
  TemplateId template_id = TemplateId::doc;
  // Placeholder values used to render; never sent on the wire. Scripted
  // backends match on these.
  std::map<std::string, std::string> bindings;
  std::optional<int> turn;

  // Concatenated text parts of all messages.
  std::string text() const;
  const ImagePart* image() const;
};

class TemplateStore {
 public:
  // Loads `{dir}/{template_id}.txt` for every template and validates that the
  // scanned placeholder set equals the declared set.
  static TemplateStore load(const std::filesystem::path& dir);
  // PCDF_TEMPLATES env var, else the directory baked in at build time.
  static TemplateStore load_default();

  const std::string& body(TemplateId id) const;

  // Single-pass substitution. `context` must cover every placeholder of the
  // template except `image` and contain nothing else. The image-part comes
  // first, followed by one text part.
  RenderedChat render(TemplateId id, const std::map<std::string, std::string>& context,
                      std::optional<ImagePart> image) const;

 private:
  std::map<TemplateId, std::string> bodies_;
};

std::filesystem::path default_template_dir();

// Empty dialogue -> "". Turns as "Doctor: Q" / "Patient: A", blank line
// between turns.
std::string format_history(const Dialogue& d);
// History as it goes into a prompt slot: "(none)" when there are no turns.
std::string history_slot(const Dialogue& d);

// CoT template for a dataset; unknown ids fall back to zero_shot with a
// warning.
TemplateId cot_template_for(std::string_view dataset_id);

}  // namespace pcdf
