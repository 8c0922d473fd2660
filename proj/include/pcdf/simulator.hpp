#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pcdf/backends.hpp"
#include "pcdf/corpus.hpp"
#include "pcdf/dialogue.hpp"
#include "pcdf/error.hpp"
#include "pcdf/prompts.hpp"
#include "pcdf/store.hpp"

namespace pcdf {

struct SimulationConfig {
  int T = 8;
  BackendConfig doc_backend;
  BackendConfig patient_backend;
  int workers = 1;
  std::string run_id = "run";
  bool leakage_check = true;
  std::filesystem::path runs_dir = "runs";
  bool record_timestamps = false;
};

// One rendered prompt sent to a backend; the simulator journals these.
struct PromptEvent {
  Role role = Role::doc;
  int turn = 0;
  std::size_t history_turns = 0;
  std::string text;
};
using PromptObserver = std::function<void(const PromptEvent&)>;

// A sample aborted mid-dialogue. `partial` holds the completed turns.
class SampleFailure : public Error {
 public:
  SampleFailure(const std::string& what, Dialogue partial) : Error(what), partial_(std::move(partial)) {}
  const char* code() const noexcept override { return "sample_failure"; }
  const Dialogue& partial() const { return partial_; }

 private:
  Dialogue partial_;
};

// Calls the backend and retries once, with the same prompt, if the completion
// is empty or whitespace. Throws ProtocolError if the retry is empty too.
std::string complete_nonempty(Backend& backend, const RenderedChat& chat, Role role, bool& retry_used);

// The doctor prompt for turn t over the given history. Shared by batch
// simulation and live sessions.
RenderedChat render_doc_prompt(const TemplateStore& templates, const ClassSet& class_set, const ImagePart& image,
                               const Dialogue& history, int t);
RenderedChat render_patient_prompt(const TemplateStore& templates, const std::string& gold_label,
                                   const ImagePart& image, const std::string& question, int t);

// Validator flags for one finished turn.
std::set<TurnFlag> turn_flags(const Turn& turn, const ClassSet& class_set, std::size_t gold_index, bool leakage_check);

class Simulator {
 public:
  Simulator(const TemplateStore& templates, std::shared_ptr<Backend> doc, std::shared_ptr<Backend> patient, int T,
            bool leakage_check = true);

  // Runs the T-turn question/answer loop for one sample. Throws SampleFailure.
  Dialogue simulate_sample(const Sample& sample, const ClassSet& class_set, const ImagePart& image,
                           const PromptObserver& observer = {}) const;

  int T() const { return T_; }
  const Backend& doc() const { return *doc_; }
  const Backend& patient() const { return *patient_; }

 private:
  const TemplateStore& templates_;
  std::shared_ptr<Backend> doc_;
  std::shared_ptr<Backend> patient_;
  int T_;
  bool leakage_check_;
};

Dialogue simulate_sample(const Sample& sample, const Corpus& corpus, const SimulationConfig& cfg,
                         const TemplateStore& templates);

struct CorpusRunResult {
  std::size_t written = 0;
  std::size_t resumed = 0;
  std::size_t simulated = 0;
  std::vector<std::string> failed_ids;
  bool ok() const { return failed_ids.empty(); }
};

// Simulates every corpus sample with up to cfg.workers samples in flight.
// Progress is journaled under runs_dir/run_id: `config.json`, one
// `done/<id>.json` marker (holding the finished record) per sample,
// `prompts/<id>.jsonl` with every rendered prompt, and `failed/<id>.json` for
// samples that aborted. Rerunning with the same run_id skips finished samples.
// `out_path` is written, in corpus order, only when every sample succeeded.
// `stop` (optional) requests cancellation; in-flight samples finish first.
CorpusRunResult simulate_corpus(const Corpus& corpus, const SimulationConfig& cfg, const TemplateStore& templates,
                                const std::filesystem::path& out_path, const std::atomic<bool>* stop = nullptr);

// Same contract with caller-provided backends.
CorpusRunResult simulate_corpus(const Corpus& corpus, const SimulationConfig& cfg, const Simulator& simulator,
                                const std::filesystem::path& out_path, const std::atomic<bool>* stop = nullptr);

std::filesystem::path run_dir(const SimulationConfig& cfg);
// File-name-safe encoding of a sample id.
std::string journal_key(std::string_view sample_id);

}  // namespace pcdf
