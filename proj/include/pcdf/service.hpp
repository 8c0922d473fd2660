#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcdf/backends.hpp"
#include "pcdf/corpus.hpp"
#include "pcdf/eval.hpp"
#include "pcdf/prompts.hpp"
#include "pcdf/store.hpp"

namespace httplib {
class Server;
}

namespace pcdf {

enum class SessionState { awaiting_answer, asking, done };
std::string_view to_string(SessionState s);

struct Annotation {
  std::string id;
  std::string sample_id;
  std::string annotator_id;
  std::vector<bool> relevance;
  int sc = 0;
  int dr = 0;
  std::string note;
};

struct ServiceConfig {
  std::map<std::string, ClassSet> datasets;  // by dataset_id
  // Backends by name. "doc" asks questions; "diagnoser" (falls back to the
  // session's doc backend) makes the final prediction.
  std::map<std::string, std::shared_ptr<Backend>> backends;
  std::optional<Corpus> corpus;
  std::vector<TripletRecord> triplets;
  std::filesystem::path annotations_path;  // empty: keep annotations in memory only
  int default_T = 8;
  std::chrono::seconds session_idle{30 * 60};
};

// Live consultation sessions and annotation review, independent of HTTP.
// Sessions are in memory and expire after `session_idle` without activity;
// annotations persist to `annotations_path` when set.
class ConsultationService {
 public:
  ConsultationService(ServiceConfig cfg, const TemplateStore& templates);

  // {dataset_id, T?, backend?, sample_id? | image_base64?}
  nlohmann::ordered_json create_session(const nlohmann::json& request);
  nlohmann::ordered_json submit_answer(const std::string& session_id, const std::string& answer);
  nlohmann::ordered_json get_session(const std::string& session_id);

  nlohmann::ordered_json list_triplets(std::size_t offset, std::size_t limit) const;

  nlohmann::ordered_json submit_annotation(const nlohmann::json& request);
  nlohmann::ordered_json list_annotations() const;
  nlohmann::ordered_json annotation_aggregate() const;

  std::size_t session_count() const;
  // Drops sessions idle longer than the configured limit; returns how many.
  std::size_t expire_idle(std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now());

 private:
  struct Session;

  std::shared_ptr<Session> find_session(const std::string& id);
  nlohmann::ordered_json view(const Session& s) const;
  Backend& backend_named(const std::string& name) const;

  ServiceConfig cfg_;
  const TemplateStore& templates_;
  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  mutable std::mutex annotations_mu_;
  std::vector<Annotation> annotations_;
  std::map<std::string, std::size_t> triplet_turns_;
  std::uint64_t next_annotation_ = 1;
};

// HTTP front-end over ConsultationService. Routes:
//   POST /sessions, POST /sessions/{id}/answer, GET /sessions/{id},
//   GET /triplets?offset&limit, POST /annotations, GET /annotations,
//   GET /annotations/aggregate, GET /health
class HttpService {
 public:
  explicit HttpService(ConsultationService& service, std::filesystem::path static_dir = {});
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen();
  void stop();
  void wait_until_ready() const;

 private:
  ConsultationService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace pcdf
