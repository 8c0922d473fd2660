#include "pcdf/eval.hpp"

#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include "pcdf/error.hpp"
#include "pcdf/log.hpp"
#include "pcdf/parallel.hpp"
#include "pcdf/text.hpp"

namespace pcdf {

using nlohmann::ordered_json;

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::zero_shot: return "zero_shot";
    case Mode::cot: return "cot";
    case Mode::pcdf: return "pcdf";
  }
  return "";
}

Mode parse_mode(std::string_view s) {
  if (s == "zero_shot") return Mode::zero_shot;
  if (s == "cot") return Mode::cot;
  if (s == "pcdf") return Mode::pcdf;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected zero_shot, cot or pcdf)");
}

std::string_view to_string(MatchMethod m) {
  switch (m) {
    case MatchMethod::exact: return "exact";
    case MatchMethod::alias: return "alias";
    case MatchMethod::substring: return "substring";
    case MatchMethod::none: return "none";
  }
  return "";
}

LabelMatch match_label(std::string_view raw_text, const ClassSet& class_set) {
  const std::string canon = text::canonicalize(raw_text);
  if (canon.empty()) return {};
  if (auto i = class_set.find_label(canon)) return {i, MatchMethod::exact};
  if (auto i = class_set.find_alias(canon)) return {i, MatchMethod::alias};

  std::size_t best_pos = std::string::npos;
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < class_set.size(); ++c) {
    std::vector<std::string> needles{class_set.label(c)};
    for (const auto& a : class_set.aliases(c)) needles.push_back(text::canonicalize(a));
    for (const auto& needle : needles) {
      const auto pos = canon.find(needle);
      // Strict < keeps the earlier class on position ties.
      if (pos != std::string::npos && pos < best_pos) {
        best_pos = pos;
        best = c;
      }
    }
  }
  if (best) return {best, MatchMethod::substring};
  return {};
}

RenderedChat render_prediction_prompt(Mode mode, const Dialogue* dialogue, const ClassSet& class_set,
                                      const TemplateStore& templates, const ImagePart& image) {
  switch (mode) {
    case Mode::zero_shot:
      return templates.render(TemplateId::zero_shot, {{"classes", class_set.classes_text()}}, image);
    case Mode::cot:
      return templates.render(cot_template_for(class_set.dataset_id()), {{"classes", class_set.classes_text()}}, image);
    case Mode::pcdf:
      if (!dialogue) throw ValidationError("pcdf mode needs a dialogue");
      return templates.render(TemplateId::docft,
                              {{"classes", class_set.classes_text()}, {"history", history_slot(*dialogue)}}, image);
  }
  throw ConfigError("bad mode");
}

PredictionRecord predict(const Sample& sample, const Dialogue* dialogue, Mode mode, Backend& backend,
                         const ClassSet& class_set, const TemplateStore& templates, const ImagePart& image) {
  PredictionRecord p;
  p.sample_id = sample.id;
  p.mode = mode;
  try {
    const auto chat = render_prediction_prompt(mode, dialogue, class_set, templates, image);
    p.raw_text = backend.complete(chat, Role::diagnoser).text;
  } catch (const BackendError& e) {
    throw BackendError("sample '" + sample.id + "': " + e.what(), e.status(), e.attempts());
  } catch (const ProtocolError& e) {
    throw ProtocolError("sample '" + sample.id + "': " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("sample '" + sample.id + "': " + e.what());
  }
  const auto m = match_label(p.raw_text, class_set);
  p.matched_index = m.index;
  p.match_method = m.method;
  return p;
}

MetricsReport compute_metrics(const std::vector<std::optional<std::size_t>>& predictions,
                              const std::vector<std::size_t>& golds, std::size_t k) {
  if (predictions.size() != golds.size()) {
    throw ValidationError("compute_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(golds.size()) + " golds");
  }
  if (golds.empty()) throw ValidationError("compute_metrics: need at least one prediction");
  MetricsReport r;
  r.n = golds.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  r.per_class.assign(k, {});
  for (std::size_t i = 0; i < r.n; ++i) {
    if (golds[i] >= k) throw ValidationError("gold index out of range");
    ++r.per_class[golds[i]].support;
    if (!predictions[i]) {
      ++r.invalid_count;
      continue;
    }
    if (*predictions[i] >= k) throw ValidationError("predicted index out of range");
    ++r.confusion[golds[i]][*predictions[i]];
  }
  std::size_t correct = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t tp = r.confusion[c][c];
    std::size_t predicted = 0;
    for (std::size_t g = 0; g < k; ++g) predicted += r.confusion[g][c];
    correct += tp;
    auto& m = r.per_class[c];
    m.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    m.recall = m.support ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
    m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    f1_sum += m.f1;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  r.macro_f1 = k ? f1_sum / static_cast<double>(k) : 0.0;
  return r;
}

EvalRunResult predict_corpus(const Corpus& corpus, Mode mode, Backend& backend, const TemplateStore& templates,
                             const std::map<std::string, Dialogue>& dialogues, int workers) {
  const auto n = corpus.samples.size();
  std::vector<std::optional<PredictionRecord>> slots(n);
  std::vector<std::string> errors(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const auto& s = corpus.samples[i];
    const Dialogue* d = nullptr;
    if (mode == Mode::pcdf) {
      const auto it = dialogues.find(s.id);
      if (it == dialogues.end()) {
        errors[i] = "no dialogue for sample";
        return;
      }
      d = &it->second;
    }
    try {
      slots[i] = predict(s, d, mode, backend, corpus.class_set, templates, ImagePart{s.image_ref, corpus.image_path(s), {}});
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  EvalRunResult r;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      r.predictions.push_back(std::move(*slots[i]));
    } else {
      log::error("prediction failed for '" + corpus.samples[i].id + "': " + errors[i]);
      r.failed_ids.push_back(corpus.samples[i].id);
    }
  }
  return r;
}

ordered_json report_json(const MetricsReport& r, const ClassSet& class_set, const ReportMeta& meta) {
  ordered_json per_class = ordered_json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    per_class.push_back({{"label", class_set.label(c)},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support}});
  }
  ordered_json j = {{"dataset_id", meta.dataset_id}, {"mode", to_string(meta.mode)}, {"model", meta.model}};
  j["T"] = meta.T ? ordered_json(*meta.T) : ordered_json(nullptr);
  j["source"] = meta.source;
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["invalid_count"] = r.invalid_count;
  j["per_class"] = per_class;
  j["confusion"] = r.confusion;
  return j;
}

std::string report_text(const MetricsReport& r, const ClassSet& class_set, const ReportMeta& meta) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  std::size_t w = 5;
  for (const auto& l : class_set.labels()) w = std::max(w, l.size());

  os << std::left << std::setw(16) << "Dataset" << std::setw(11) << "Mode" << std::setw(4) << "T" << std::right
     << std::setw(7) << "N" << std::setw(10) << "Accuracy" << std::setw(8) << "F1" << std::setw(9) << "Invalid"
     << "\n";
  os << std::left << std::setw(16) << meta.dataset_id << std::setw(11) << to_string(meta.mode) << std::setw(4)
     << (meta.T ? std::to_string(*meta.T) : "-") << std::right << std::setw(7) << r.n << std::setw(10)
     << r.accuracy * 100.0 << std::setw(8) << r.macro_f1 * 100.0 << std::setw(9) << r.invalid_count << "\n\n";

  os << std::left << std::setw(static_cast<int>(w) + 2) << "Class" << std::right << std::setw(10) << "Precision"
     << std::setw(8) << "Recall" << std::setw(8) << "F1" << std::setw(9) << "Support" << "\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    os << std::left << std::setw(static_cast<int>(w) + 2) << class_set.label(c) << std::right << std::setw(10)
       << m.precision * 100.0 << std::setw(8) << m.recall * 100.0 << std::setw(8) << m.f1 * 100.0 << std::setw(9)
       << m.support << "\n";
  }
  os << "\nConfusion (rows = gold, columns = predicted):\n";
  for (const auto& row : r.confusion) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "") << std::setw(5) << row[c];
    os << "\n";
  }
  return os.str();
}

ordered_json to_json(const PredictionRecord& p) {
  return {{"sample_id", p.sample_id},
          {"mode", to_string(p.mode)},
          {"raw_text", p.raw_text},
          {"matched_index", p.matched_index ? ordered_json(*p.matched_index) : ordered_json(nullptr)},
          {"match_method", to_string(p.match_method)}};
}

void write_report(const std::filesystem::path& dir, const MetricsReport& r, const ClassSet& class_set,
                  const ReportMeta& meta, const std::vector<PredictionRecord>& predictions) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "report.json").string());
    out << report_json(r, class_set, meta).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "report.txt", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "report.txt").string());
    out << report_text(r, class_set, meta);
  }
  std::ofstream out(dir / "predictions.jsonl", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "predictions.jsonl").string());
  for (const auto& p : predictions) out << to_json(p).dump() << '\n';
}

}  // namespace pcdf
