#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcdf/backends.hpp"
#include "pcdf/corpus.hpp"
#include "pcdf/prompts.hpp"
#include "pcdf/store.hpp"

namespace pcdf {

// Per-class clinical knowledge handed to the judge.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  explicit KnowledgeBase(std::map<std::string, std::string> entries) : entries_(std::move(entries)) {}

  // Throws ValidationError naming the label when it has no entry.
  const std::string& at(const std::string& canonical_label) const;
  bool contains(const std::string& canonical_label) const { return entries_.count(canonical_label) > 0; }

 private:
  std::map<std::string, std::string> entries_;
};

// CR per turn, DR ("DIALOGUE QUALITY") and SC, each score in 1..5.
struct JudgeVerdict {
  std::string sample_id;
  std::vector<bool> relevance;
  int dialogue_quality = 0;
  int symptom_coverage = 0;

  bool operator==(const JudgeVerdict&) const = default;
};

struct LeakageHit {
  int turn_index = 0;
  std::string matched;

  bool operator==(const LeakageHit&) const = default;
};

struct JudgeAggregate {
  std::size_t dialogues = 0;
  std::size_t pairs_total = 0;
  std::size_t pairs_relevant = 0;
  double pct_relevant = 0.0;  // fraction in [0, 1]
  double avg_sc = 0.0;
  double avg_dr = 0.0;
  std::size_t leakage_dialogues = 0;
  std::vector<std::string> leakage_turn_refs;  // "sample_id#t"
};

// "1. [YES/NO]" ... "n. [YES/NO]".
std::string relevance_slots(std::size_t turns);

RenderedChat render_judge_prompt(const TripletRecord& triplet, const KnowledgeBase& kb, const ClassSet& class_set,
                                 const TemplateStore& templates, ImagePart image);

// Parses the judge's output block. Case of YES/NO and surrounding whitespace
// are ignored; anything else off-format throws FormatError naming the first
// offending line, out-of-range scores throw ValidationError.
JudgeVerdict parse_verdict(std::string_view text, std::size_t expected_turns);
// Canonical rendering of a verdict in the judge output format.
std::string format_verdict(const JudgeVerdict& v);

// Case-insensitive, word-bounded scan of the patient answers for the gold
// label or any alias. Doctor questions are not scanned.
std::vector<LeakageHit> detect_leakage(const Dialogue& dialogue, std::string_view gold_label,
                                       const std::vector<std::string>& aliases);

struct DialogueLeakage {
  std::string sample_id;
  std::vector<LeakageHit> hits;
};

// Throws ValidationError on an empty verdict list.
JudgeAggregate aggregate(const std::vector<JudgeVerdict>& verdicts, const std::vector<DialogueLeakage>& leakage);

double round1(double v);

nlohmann::ordered_json to_json(const JudgeVerdict& v);
JudgeVerdict verdict_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const JudgeAggregate& a);
std::string format_aggregate(const JudgeAggregate& a);

std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path);
void write_verdicts(const std::vector<JudgeVerdict>& verdicts, const std::filesystem::path& path);

struct JudgeRunResult {
  std::vector<JudgeVerdict> verdicts;
  std::vector<std::string> failed_ids;
};

// Judges every triplet in parallel; order of `verdicts` follows `triplets`
// (failed ones are omitted and listed).
JudgeRunResult judge_triplets(const std::vector<TripletRecord>& triplets, const KnowledgeBase& kb,
                              const ClassSet& class_set, const TemplateStore& templates, Backend& judge,
                              const std::filesystem::path& image_root, int workers);

}  // namespace pcdf
