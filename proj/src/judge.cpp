#include "pcdf/judge.hpp"

#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include "pcdf/error.hpp"
#include "pcdf/log.hpp"
#include "pcdf/parallel.hpp"
#include "pcdf/text.hpp"

namespace pcdf {

using nlohmann::json;
using nlohmann::ordered_json;

const std::string& KnowledgeBase::at(const std::string& label) const {
  const auto it = entries_.find(label);
  if (it == entries_.end()) throw ValidationError("knowledge base has no entry for label '" + label + "'");
  return it->second;
}

std::string relevance_slots(std::size_t turns) {
  std::string out;
  for (std::size_t i = 1; i <= turns; ++i) {
    if (i > 1) out += '\n';
    out += std::to_string(i) + ". [YES/NO]";
  }
  return out;
}

RenderedChat render_judge_prompt(const TripletRecord& triplet, const KnowledgeBase& kb, const ClassSet& class_set,
                                 const TemplateStore& templates, ImagePart image) {
  if (triplet.gold_index >= class_set.size() || class_set.label(triplet.gold_index) != triplet.gold_label) {
    throw ValidationError("triplet '" + triplet.sample_id + "' does not match the class set");
  }
  const auto n = triplet.dialogue.turns.size();
  return templates.render(TemplateId::judge,
                          {{"knowledge", kb.at(triplet.gold_label)},
                           {"history", history_slot(triplet.dialogue)},
                           {"T", std::to_string(n)},
                           {"gold_label", triplet.gold_label},
                           {"relevance_slots", relevance_slots(n)}},
                          std::move(image));
}

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

// Strips one pair of surrounding square brackets.
std::string_view unbracket(std::string_view s) {
  s = text::trim(s);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = text::trim(s.substr(1, s.size() - 2));
  return s;
}

int parse_score(std::string_view line, std::string_view label, std::size_t lineno) {
  const std::string up = upper(line);
  if (!up.starts_with(std::string(label) + ":")) {
    throw FormatError("verdict line " + std::to_string(lineno) + ": expected '" + std::string(label) +
                      ": <1-5>', got '" + std::string(line) + "'");
  }
  const std::string_view value = unbracket(line.substr(label.size() + 1));
  int v = 0;
  if (value.empty() || value.size() > 3 ||
      !std::all_of(value.begin(), value.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError("verdict line " + std::to_string(lineno) + ": score is not an integer: '" + std::string(line) + "'");
  }
  v = std::stoi(std::string(value));
  if (v < 1 || v > 5) {
    throw ValidationError("verdict line " + std::to_string(lineno) + ": score " + std::to_string(v) +
                          " out of range 1-5");
  }
  return v;
}

}  // namespace

JudgeVerdict parse_verdict(std::string_view body, std::size_t expected_turns) {
  struct Line {
    std::size_t no;
    std::string_view text;
  };
  std::vector<Line> lines;
  const auto raw = text::split_lines(body);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto t = text::trim(raw[i]);
    if (!t.empty()) lines.push_back({i + 1, t});
  }
  // raw owns the storage; views into it stay valid for this scope.
  std::size_t p = 0;
  auto next = [&](const char* what) -> const Line& {
    if (p >= lines.size()) throw FormatError(std::string("verdict ended early: expected ") + what);
    return lines[p++];
  };

  JudgeVerdict v;
  {
    const auto& l = next("'CLINICAL RELEVANCE:'");
    if (upper(l.text) != "CLINICAL RELEVANCE:") {
      throw FormatError("verdict line " + std::to_string(l.no) + ": expected 'CLINICAL RELEVANCE:', got '" +
                        std::string(l.text) + "'");
    }
  }
  for (std::size_t i = 1; i <= expected_turns; ++i) {
    const auto& l = next("a relevance slot");
    const std::string prefix = std::to_string(i) + ".";
    if (!l.text.starts_with(prefix)) {
      throw FormatError("verdict line " + std::to_string(l.no) + ": expected relevance slot " + std::to_string(i) +
                        ", got '" + std::string(l.text) + "'");
    }
    const std::string answer = upper(unbracket(l.text.substr(prefix.size())));
    if (answer == "YES") {
      v.relevance.push_back(true);
    } else if (answer == "NO") {
      v.relevance.push_back(false);
    } else {
      throw FormatError("verdict line " + std::to_string(l.no) + ": relevance must be YES or NO, got '" +
                        std::string(l.text) + "'");
    }
  }
  {
    const auto& l = next("'DIALOGUE QUALITY:'");
    v.dialogue_quality = parse_score(l.text, "DIALOGUE QUALITY", l.no);
  }
  {
    const auto& l = next("'SYMPTOM COVERAGE:'");
    v.symptom_coverage = parse_score(l.text, "SYMPTOM COVERAGE", l.no);
  }
  if (p < lines.size()) {
    throw FormatError("verdict line " + std::to_string(lines[p].no) + ": unexpected trailing text '" +
                      std::string(lines[p].text) + "'");
  }
  return v;
}

std::string format_verdict(const JudgeVerdict& v) {
  std::string out = "CLINICAL RELEVANCE:\n";
  for (std::size_t i = 0; i < v.relevance.size(); ++i) {
    out += std::to_string(i + 1) + ". " + (v.relevance[i] ? "YES" : "NO") + "\n";
  }
  out += "DIALOGUE QUALITY: " + std::to_string(v.dialogue_quality) + "\n";
  out += "SYMPTOM COVERAGE: " + std::to_string(v.symptom_coverage) + "\n";
  return out;
}

std::vector<LeakageHit> detect_leakage(const Dialogue& dialogue, std::string_view gold_label,
                                       const std::vector<std::string>& aliases) {
  std::vector<std::string> patterns{std::string(gold_label)};
  patterns.insert(patterns.end(), aliases.begin(), aliases.end());

  std::vector<LeakageHit> hits;
  for (const auto& turn : dialogue.turns) {
    const std::string hay = text::case_fold(turn.answer);
    for (const auto& pat : patterns) {
      const std::string needle = text::case_fold(text::trim(pat));
      if (needle.empty()) continue;
      for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
        const bool left_ok = pos == 0 || !text::is_word_byte(static_cast<unsigned char>(hay[pos - 1]));
        const std::size_t end = pos + needle.size();
        const bool right_ok = end == hay.size() || !text::is_word_byte(static_cast<unsigned char>(hay[end]));
        if (left_ok && right_ok) {
          hits.push_back({turn.index, pat});
          break;
        }
      }
    }
  }
  return hits;
}

double round1(double v) { return std::round(v * 10.0) / 10.0; }

JudgeAggregate aggregate(const std::vector<JudgeVerdict>& verdicts, const std::vector<DialogueLeakage>& leakage) {
  if (verdicts.empty()) throw ValidationError("aggregate needs at least one verdict");
  JudgeAggregate a;
  a.dialogues = verdicts.size();
  double sc = 0, dr = 0;
  for (const auto& v : verdicts) {
    a.pairs_total += v.relevance.size();
    a.pairs_relevant += static_cast<std::size_t>(std::count(v.relevance.begin(), v.relevance.end(), true));
    sc += v.symptom_coverage;
    dr += v.dialogue_quality;
  }
  a.pct_relevant = a.pairs_total ? static_cast<double>(a.pairs_relevant) / static_cast<double>(a.pairs_total) : 0.0;
  a.avg_sc = sc / static_cast<double>(verdicts.size());
  a.avg_dr = dr / static_cast<double>(verdicts.size());
  for (const auto& d : leakage) {
    if (d.hits.empty()) continue;
    ++a.leakage_dialogues;
    for (const auto& h : d.hits) a.leakage_turn_refs.push_back(d.sample_id + "#" + std::to_string(h.turn_index));
  }
  return a;
}

ordered_json to_json(const JudgeVerdict& v) {
  return {{"sample_id", v.sample_id}, {"relevance", v.relevance}, {"dr", v.dialogue_quality}, {"sc", v.symptom_coverage}};
}

JudgeVerdict verdict_from_json(const json& j) {
  JudgeVerdict v;
  try {
    v.sample_id = j.at("sample_id").get<std::string>();
    v.relevance = j.at("relevance").get<std::vector<bool>>();
    v.dialogue_quality = j.at("dr").get<int>();
    v.symptom_coverage = j.at("sc").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("verdict record: ") + e.what());
  }
  if (v.dialogue_quality < 1 || v.dialogue_quality > 5 || v.symptom_coverage < 1 || v.symptom_coverage > 5) {
    throw ValidationError("verdict for '" + v.sample_id + "' has a score outside 1-5");
  }
  return v;
}

ordered_json to_json(const JudgeAggregate& a) {
  return {{"dialogues", a.dialogues},
          {"pairs_total", a.pairs_total},
          {"pairs_relevant", a.pairs_relevant},
          {"pct_relevant", round1(a.pct_relevant * 100.0)},
          {"avg_sc", round1(a.avg_sc)},
          {"avg_dr", round1(a.avg_dr)},
          {"leakage_dialogues", a.leakage_dialogues},
          {"leakage_turn_refs", a.leakage_turn_refs}};
}

std::string format_aggregate(const JudgeAggregate& a) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << "Dialogues judged:        " << a.dialogues << "\n"
     << "Clinically relevant:     " << a.pairs_relevant << " / " << a.pairs_total << " (" << a.pct_relevant * 100.0
     << "%)\n"
     << "Not relevant:            " << (a.pairs_total - a.pairs_relevant) << " ("
     << (a.pairs_total ? 100.0 - a.pct_relevant * 100.0 : 0.0) << "%)\n"
     << "Symptom coverage (avg):  " << round1(a.avg_sc) << "\n"
     << "Dialogue realism (avg):  " << round1(a.avg_dr) << "\n"
     << "Dialogues with leakage:  " << a.leakage_dialogues << "\n";
  for (const auto& ref : a.leakage_turn_refs) os << "  leak at " << ref << "\n";
  return os.str();
}

std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<JudgeVerdict> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(verdict_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_verdicts(const std::vector<JudgeVerdict>& verdicts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& v : verdicts) out << to_json(v).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

JudgeRunResult judge_triplets(const std::vector<TripletRecord>& triplets, const KnowledgeBase& kb,
                              const ClassSet& class_set, const TemplateStore& templates, Backend& judge,
                              const std::filesystem::path& image_root, int workers) {
  std::vector<std::optional<JudgeVerdict>> slots(triplets.size());
  std::vector<std::string> errors(triplets.size());
  parallel_for(triplets.size(), workers, [&](std::size_t i) {
    const auto& t = triplets[i];
    try {
      const auto chat = render_judge_prompt(t, kb, class_set, templates, ImagePart{t.image_ref, image_root / t.image_ref, {}});
      const auto result = judge.complete(chat, Role::judge);
      JudgeVerdict v = parse_verdict(result.text, t.dialogue.turns.size());
      v.sample_id = t.sample_id;
      slots[i] = std::move(v);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  JudgeRunResult r;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    if (slots[i]) {
      r.verdicts.push_back(std::move(*slots[i]));
    } else {
      log::error("judge failed for '" + triplets[i].sample_id + "': " + errors[i]);
      r.failed_ids.push_back(triplets[i].sample_id);
    }
  }
  return r;
}

}  // namespace pcdf
