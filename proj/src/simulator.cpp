#include "pcdf/simulator.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pcdf/image.hpp"
#include "pcdf/judge.hpp"
#include "pcdf/log.hpp"
#include "pcdf/parallel.hpp"
#include "pcdf/text.hpp"

namespace pcdf {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_atomic(const std::filesystem::path& path, const std::string& body) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out << body;
    out.flush();
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ordered_json config_snapshot(const Corpus& corpus, const SimulationConfig& cfg, const Simulator& sim) {
  return {{"run_id", cfg.run_id},
          {"T", sim.T()},
          {"dataset_id", corpus.class_set.dataset_id()},
          {"samples", corpus.samples.size()},
          {"doc_model", sim.doc().config().model_label()},
          {"patient_model", sim.patient().config().model_label()},
          {"leakage_check", cfg.leakage_check},
          {"workers", cfg.workers}};
}

}  // namespace

std::string complete_nonempty(Backend& backend, const RenderedChat& chat, Role role, bool& retry_used) {
  auto r = backend.complete(chat, role);
  if (!text::trim(r.text).empty()) return r.text;
  retry_used = true;
  r = backend.complete(chat, role);
  if (!text::trim(r.text).empty()) return r.text;
  throw ProtocolError("empty completion from " + std::string(to_string(role)) + " backend after one retry");
}

RenderedChat render_doc_prompt(const TemplateStore& templates, const ClassSet& class_set, const ImagePart& image,
                               const Dialogue& history, int t) {
  auto chat = templates.render(TemplateId::doc,
                               {{"history", history_slot(history)}, {"classes", class_set.classes_text()}}, image);
  chat.turn = t;
  return chat;
}

RenderedChat render_patient_prompt(const TemplateStore& templates, const std::string& gold_label,
                                   const ImagePart& image, const std::string& question, int t) {
  auto chat = templates.render(TemplateId::patient, {{"gold_label", gold_label}, {"question", question}}, image);
  chat.turn = t;
  return chat;
}

std::set<TurnFlag> turn_flags(const Turn& turn, const ClassSet& class_set, std::size_t gold_index,
                              bool leakage_check) {
  std::set<TurnFlag> flags;
  if (std::count(turn.question.begin(), turn.question.end(), '?') > 1) flags.insert(TurnFlag::multi_question);
  if (text::word_count(turn.answer) > 15) flags.insert(TurnFlag::over_15_words);
  if (leakage_check) {
    Dialogue one{"", {turn}};
    if (!detect_leakage(one, class_set.label(gold_index), class_set.aliases(gold_index)).empty()) {
      flags.insert(TurnFlag::leakage_suspect);
    }
  }
  return flags;
}

Simulator::Simulator(const TemplateStore& templates, std::shared_ptr<Backend> doc, std::shared_ptr<Backend> patient,
                     int T, bool leakage_check)
    : templates_(templates), doc_(std::move(doc)), patient_(std::move(patient)), T_(T), leakage_check_(leakage_check) {
  if (T_ < 0) throw ConfigError("T must be >= 0");
}

Dialogue Simulator::simulate_sample(const Sample& sample, const ClassSet& class_set, const ImagePart& image,
                                    const PromptObserver& observer) const {
  if (class_set.size() == 0) throw ConfigError("empty class set");
  const std::string& gold = class_set.label(sample.gold_index);
  Dialogue d{sample.id, {}};
  for (int t = 1; t <= T_; ++t) {
    Turn turn;
    turn.index = t;
    bool retried = false;
    try {
      const auto q_chat = render_doc_prompt(templates_, class_set, image, d, t);
      if (observer) observer({Role::doc, t, d.turns.size(), q_chat.text()});
      turn.question = complete_nonempty(*doc_, q_chat, Role::doc, retried);

      const auto a_chat = render_patient_prompt(templates_, gold, image, turn.question, t);
      if (observer) observer({Role::patient, t, d.turns.size(), a_chat.text()});
      turn.answer = complete_nonempty(*patient_, a_chat, Role::patient, retried);
    } catch (const Error& e) {
      throw SampleFailure("sample '" + sample.id + "' failed at turn " + std::to_string(t) + ": " + e.what(), d);
    }
    turn.flags = turn_flags(turn, class_set, sample.gold_index, leakage_check_);
    if (retried) turn.flags.insert(TurnFlag::empty_retry_used);
    d.turns.push_back(std::move(turn));
  }
  return d;
}

Dialogue simulate_sample(const Sample& sample, const Corpus& corpus, const SimulationConfig& cfg,
                         const TemplateStore& templates) {
  Simulator sim(templates, make_backend(cfg.doc_backend), make_backend(cfg.patient_backend), cfg.T, cfg.leakage_check);
  return sim.simulate_sample(sample, corpus.class_set, ImagePart{sample.image_ref, corpus.image_path(sample), {}});
}

std::filesystem::path run_dir(const SimulationConfig& cfg) { return cfg.runs_dir / cfg.run_id; }

std::string journal_key(std::string_view id) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (const char c : id) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '-' || c == '_' || c == '.') {
      out.push_back(c);
    } else {
      out.push_back('%');
      out.push_back(kHex[u >> 4]);
      out.push_back(kHex[u & 0xF]);
    }
  }
  if (out.empty() || out == "." || out == "..") out = "%" + out;
  return out;
}

CorpusRunResult simulate_corpus(const Corpus& corpus, const SimulationConfig& cfg, const TemplateStore& templates,
                                const std::filesystem::path& out_path, const std::atomic<bool>* stop) {
  Simulator sim(templates, make_backend(cfg.doc_backend), make_backend(cfg.patient_backend), cfg.T, cfg.leakage_check);
  return simulate_corpus(corpus, cfg, sim, out_path, stop);
}

CorpusRunResult simulate_corpus(const Corpus& corpus, const SimulationConfig& cfg, const Simulator& sim,
                                const std::filesystem::path& out_path, const std::atomic<bool>* stop) {
  namespace fs = std::filesystem;
  const fs::path dir = run_dir(cfg);
  const fs::path done_dir = dir / "done";
  const fs::path prompt_dir = dir / "prompts";
  const fs::path failed_dir = dir / "failed";
  fs::create_directories(done_dir);
  fs::create_directories(prompt_dir);
  fs::create_directories(failed_dir);

  const auto snapshot = config_snapshot(corpus, cfg, sim);
  const fs::path snapshot_path = dir / "config.json";
  if (fs::exists(snapshot_path)) {
    const auto prev = json::parse(read_file_bytes(snapshot_path));
    for (const char* key : {"T", "dataset_id", "samples", "doc_model", "patient_model"}) {
      if (prev.value(key, json()) != json(snapshot[key])) {
        throw ConfigError("run '" + cfg.run_id + "' was started with a different " + key + "; use a new run_id");
      }
    }
  }
  write_atomic(snapshot_path, snapshot.dump(2) + "\n");

  const std::size_t n = corpus.samples.size();
  std::vector<std::optional<TripletRecord>> records(n);
  std::vector<std::size_t> pending;
  CorpusRunResult result;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = corpus.samples[i];
    const fs::path marker = done_dir / (journal_key(s.id) + ".json");
    if (fs::exists(marker)) {
      const auto j = json::parse(read_file_bytes(marker));
      TripletRecord r = triplet_from_json(j.at("record"));
      if (r.sample_id != s.id) throw ValidationError("journal marker " + marker.string() + " belongs to another sample");
      records[i] = std::move(r);
      ++result.resumed;
    } else {
      pending.push_back(i);
    }
  }

  // Reorder buffer: records reach the partial file in corpus order.
  const fs::path partial = out_path.string() + ".partial";
  std::ofstream partial_out(partial, std::ios::trunc);
  if (!partial_out) throw IoError("cannot write " + partial.string());
  std::size_t next_to_flush = 0;
  std::mutex flush_mu;
  auto flush_ready = [&] {
    while (next_to_flush < n && records[next_to_flush]) {
      partial_out << serialize(*records[next_to_flush]) << '\n';
      ++next_to_flush;
    }
    partial_out.flush();
  };
  flush_ready();

  std::mutex fail_mu;
  std::vector<std::pair<std::size_t, std::string>> failures;
  const std::string doc_model = sim.doc().config().model_label();
  const std::string patient_model = sim.patient().config().model_label();

  parallel_for(pending.size(), cfg.workers, [&](std::size_t k) {
    if (stop && stop->load()) return;
    const std::size_t i = pending[k];
    const Sample& s = corpus.samples[i];
    const std::string key = journal_key(s.id);

    std::ofstream prompts(prompt_dir / (key + ".jsonl"), std::ios::trunc);
    auto observer = [&](const PromptEvent& ev) {
      prompts << ordered_json{{"role", to_string(ev.role)},
                              {"t", ev.turn},
                              {"history_turns", ev.history_turns},
                              {"text", ev.text}}
                     .dump()
              << '\n';
      prompts.flush();
    };

    const std::string started = utc_now();
    try {
      Dialogue d = sim.simulate_sample(s, corpus.class_set, ImagePart{s.image_ref, corpus.image_path(s), {}}, observer);
      TripletRecord r{s.id, s.image_ref, corpus.class_set.label(s.gold_index), s.gold_index, std::move(d),
                      SimMeta{cfg.run_id, sim.T(), doc_model, patient_model, std::nullopt, std::nullopt}};
      const std::string finished = utc_now();
      if (cfg.record_timestamps) {
        r.sim_meta.started_at = started;
        r.sim_meta.finished_at = finished;
      }
      ordered_json marker = {{"record", to_json(r)}, {"started", started}, {"finished", finished}};
      write_atomic(done_dir / (key + ".json"), marker.dump() + "\n");
      fs::remove(failed_dir / (key + ".json"));
      std::lock_guard<std::mutex> lock(flush_mu);
      records[i] = std::move(r);
      ++result.simulated;
      flush_ready();
    } catch (const SampleFailure& e) {
      ordered_json turns = ordered_json::array();
      for (const auto& t : e.partial().turns) turns.push_back({{"t", t.index}, {"question", t.question}, {"answer", t.answer}});
      write_atomic(failed_dir / (key + ".json"),
                   ordered_json{{"sample_id", s.id}, {"error", e.what()}, {"partial_turns", turns}}.dump() + "\n");
      log::error(e.what());
      std::lock_guard<std::mutex> lock(fail_mu);
      failures.emplace_back(i, s.id);
    }
  });
  partial_out.close();

  std::sort(failures.begin(), failures.end());
  for (const auto& f : failures) result.failed_ids.push_back(f.second);
  const bool complete = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.has_value(); });
  if (complete) {
    fs::rename(partial, out_path);
    result.written = n;
  } else if (failures.empty() && stop && stop->load()) {
    log::warn("simulation stopped early; rerun with run_id '" + cfg.run_id + "' to resume");
  }
  return result;
}

}  // namespace pcdf
