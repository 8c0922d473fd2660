#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcdf/backends.hpp"
#include "pcdf/corpus.hpp"
#include "pcdf/dialogue.hpp"
#include "pcdf/prompts.hpp"

namespace pcdf {

enum class Mode { zero_shot, cot, pcdf };
enum class MatchMethod { exact, alias, substring, none };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);
std::string_view to_string(MatchMethod m);

struct LabelMatch {
  std::optional<std::size_t> index;  // nullopt = INVALID
  MatchMethod method = MatchMethod::none;
};

// Maps free text to a class: whole-string label match, then whole-string alias
// match, then the earliest label/alias occurrence inside the text (ties go to
// the earlier class), else INVALID. All comparisons are on canonical forms.
LabelMatch match_label(std::string_view raw_text, const ClassSet& class_set);

struct PredictionRecord {
  std::string sample_id;
  Mode mode = Mode::zero_shot;
  std::string raw_text;
  std::optional<std::size_t> matched_index;
  MatchMethod match_method = MatchMethod::none;
};

RenderedChat render_prediction_prompt(Mode mode, const Dialogue* dialogue, const ClassSet& class_set,
                                      const TemplateStore& templates, const ImagePart& image);

// mode == pcdf requires a dialogue; other modes ignore it. Backend errors are
// rethrown with the sample id attached.
PredictionRecord predict(const Sample& sample, const Dialogue* dialogue, Mode mode, Backend& backend,
                         const ClassSet& class_set, const TemplateStore& templates, const ImagePart& image);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct MetricsReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::size_t invalid_count = 0;
};

// INVALID (nullopt) predictions count as wrong and land in invalid_count, not
// in any confusion column. Zero denominators give 0; macro F1 averages all k
// classes.
MetricsReport compute_metrics(const std::vector<std::optional<std::size_t>>& predictions,
                              const std::vector<std::size_t>& golds, std::size_t k);

struct EvalRunResult {
  std::vector<PredictionRecord> predictions;  // corpus order, successful samples only
  std::vector<std::string> failed_ids;
};

// Predicts every sample in parallel. For pcdf, `dialogues` maps sample id to
// its dialogue; samples without one are reported as failures.
EvalRunResult predict_corpus(const Corpus& corpus, Mode mode, Backend& backend, const TemplateStore& templates,
                             const std::map<std::string, Dialogue>& dialogues, int workers);

struct ReportMeta {
  std::string dataset_id;
  Mode mode = Mode::zero_shot;
  std::string model;
  std::optional<int> T;
  std::string source;
};

nlohmann::ordered_json report_json(const MetricsReport& r, const ClassSet& class_set, const ReportMeta& meta);
std::string report_text(const MetricsReport& r, const ClassSet& class_set, const ReportMeta& meta);
nlohmann::ordered_json to_json(const PredictionRecord& p);

// Writes <dir>/report.json, <dir>/report.txt and <dir>/predictions.jsonl.
void write_report(const std::filesystem::path& dir, const MetricsReport& r, const ClassSet& class_set,
                  const ReportMeta& meta, const std::vector<PredictionRecord>& predictions);

}  // namespace pcdf
