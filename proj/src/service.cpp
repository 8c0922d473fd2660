#include "pcdf/service.hpp"

#include <fstream>
#include <random>

#include <httplib.h>

#include "pcdf/error.hpp"
#include "pcdf/image.hpp"
#include "pcdf/judge.hpp"
#include "pcdf/log.hpp"
#include "pcdf/simulator.hpp"
#include "pcdf/text.hpp"

namespace pcdf {

using nlohmann::json;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::awaiting_answer: return "awaiting_answer";
    case SessionState::asking: return "asking";
    case SessionState::done: return "done";
  }
  return "";
}

struct ConsultationService::Session {
  std::string id;
  std::string dataset_id;
  const ClassSet* class_set = nullptr;
  ImagePart image;
  std::string backend;
  int T = 0;
  int t_current = 1;
  SessionState state = SessionState::awaiting_answer;
  Dialogue dialogue;  // completed turns
  std::string pending_question;
  std::optional<PredictionRecord> prediction;
  Clock::time_point last_active = Clock::now();
  std::mutex mu;
};

namespace {

std::string random_id(std::string_view prefix) {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard<std::mutex> lock(mu);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(prefix);
  auto v = rng();
  for (int i = 0; i < 16; ++i, v >>= 4) out.push_back(kHex[v & 0xF]);
  return out;
}

ordered_json annotation_json(const Annotation& a) {
  return {{"id", a.id},         {"sample_id", a.sample_id}, {"annotator_id", a.annotator_id},
          {"relevance", a.relevance}, {"sc", a.sc},          {"dr", a.dr},
          {"note", a.note}};
}

Annotation annotation_from_json(const json& j) {
  Annotation a;
  try {
    a.sample_id = j.at("sample_id").get<std::string>();
    a.annotator_id = j.at("annotator_id").get<std::string>();
    a.relevance = j.at("relevance").get<std::vector<bool>>();
    a.sc = j.at("sc").get<int>();
    a.dr = j.at("dr").get<int>();
    a.note = j.value("note", "");
    a.id = j.value("id", "");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("annotation: ") + e.what());
  }
  return a;
}

}  // namespace

ConsultationService::ConsultationService(ServiceConfig cfg, const TemplateStore& templates)
    : cfg_(std::move(cfg)), templates_(templates) {
  for (const auto& t : cfg_.triplets) triplet_turns_[t.sample_id] = t.dialogue.turns.size();
  if (!cfg_.annotations_path.empty() && std::filesystem::exists(cfg_.annotations_path)) {
    std::ifstream in(cfg_.annotations_path);
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      annotations_.push_back(annotation_from_json(json::parse(line)));
      ++next_annotation_;
    }
  }
}

Backend& ConsultationService::backend_named(const std::string& name) const {
  const auto it = cfg_.backends.find(name);
  if (it == cfg_.backends.end() || !it->second) throw ConfigError("unknown backend '" + name + "'");
  return *it->second;
}

ordered_json ConsultationService::view(const Session& s) const {
  ordered_json turns = ordered_json::array();
  for (const auto& t : s.dialogue.turns) turns.push_back({{"t", t.index}, {"question", t.question}, {"answer", t.answer}});
  if (s.state == SessionState::awaiting_answer) {
    turns.push_back({{"t", s.t_current}, {"question", s.pending_question}, {"answer", nullptr}});
  }
  ordered_json j = {{"session_id", s.id},
                    {"dataset_id", s.dataset_id},
                    {"state", to_string(s.state)},
                    {"t_current", s.t_current},
                    {"T", s.T},
                    {"image_ref", s.image.ref},
                    {"turns", turns}};
  if (s.state == SessionState::awaiting_answer) j["question"] = s.pending_question;
  if (s.prediction) {
    const auto& p = *s.prediction;
    j["prediction"] = {{"label", p.matched_index ? ordered_json(s.class_set->label(*p.matched_index)) : ordered_json(nullptr)},
                       {"matched_index", p.matched_index ? ordered_json(*p.matched_index) : ordered_json(nullptr)},
                       {"match_method", to_string(p.match_method)},
                       {"raw_text", p.raw_text}};
  }
  return j;
}

ordered_json ConsultationService::create_session(const json& req) {
  expire_idle();
  if (!req.is_object()) throw ValidationError("request body must be a JSON object");
  const std::string dataset_id = req.value("dataset_id", "");
  const auto ds = cfg_.datasets.find(dataset_id);
  if (ds == cfg_.datasets.end()) throw NotFoundError("unknown dataset '" + dataset_id + "'");
  const int T = req.value("T", cfg_.default_T);
  if (T < 1 || T > 64) throw ValidationError("T must be in 1..64");

  auto s = std::make_shared<Session>();
  s->id = random_id("s-");
  s->dataset_id = dataset_id;
  s->class_set = &ds->second;
  s->T = T;
  s->backend = req.value("backend", "doc");
  Backend& doc = backend_named(s->backend);

  std::string raw;
  if (req.contains("sample_id")) {
    if (!cfg_.corpus) throw NotFoundError("no corpus loaded");
    const Sample* sample = cfg_.corpus->find(req["sample_id"].get<std::string>());
    if (!sample) throw NotFoundError("unknown sample '" + req["sample_id"].get<std::string>() + "'");
    raw = read_file_bytes(cfg_.corpus->image_path(*sample));
    s->image.ref = sample->image_ref;
  } else if (req.contains("image_base64")) {
    try {
      raw = text::base64_decode(req["image_base64"].get<std::string>());
    } catch (const FormatError& e) {
      throw ValidationError(std::string("image_base64: ") + e.what());
    }
    s->image.ref = "upload:" + s->id;
  } else {
    throw ValidationError("need sample_id or image_base64");
  }
  try {
    s->image.bytes = encode_png(decode_image(raw));
  } catch (const FormatError& e) {
    throw ValidationError(std::string("image is not decodable: ") + e.what());
  }

  bool retried = false;
  s->pending_question = complete_nonempty(doc, render_doc_prompt(templates_, *s->class_set, s->image, s->dialogue, 1),
                                          Role::doc, retried);
  s->state = SessionState::awaiting_answer;
  s->t_current = 1;
  auto j = view(*s);
  std::lock_guard<std::mutex> lock(sessions_mu_);
  sessions_[s->id] = std::move(s);
  return j;
}

std::shared_ptr<ConsultationService::Session> ConsultationService::find_session(const std::string& id) {
  std::lock_guard<std::mutex> lock(sessions_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

ordered_json ConsultationService::submit_answer(const std::string& session_id, const std::string& answer) {
  expire_idle();
  auto s = find_session(session_id);
  std::lock_guard<std::mutex> lock(s->mu);
  s->last_active = Clock::now();
  if (s->state != SessionState::awaiting_answer) {
    throw StateError("session '" + session_id + "' is " + std::string(to_string(s->state)) + ", not awaiting_answer");
  }
  const std::string trimmed(text::trim(answer));
  if (trimmed.empty()) throw ValidationError("answer must not be empty");

  Turn turn{s->t_current, s->pending_question, trimmed, {}};
  turn.flags = turn_flags(turn, *s->class_set, 0, false);
  s->dialogue.turns.push_back(turn);
  s->state = SessionState::asking;
  try {
    if (s->t_current < s->T) {
      bool retried = false;
      const int next = s->t_current + 1;
      s->pending_question = complete_nonempty(
          backend_named(s->backend), render_doc_prompt(templates_, *s->class_set, s->image, s->dialogue, next),
          Role::doc, retried);
      s->t_current = next;
      s->state = SessionState::awaiting_answer;
    } else {
      Backend& diagnoser = cfg_.backends.count("diagnoser") ? backend_named("diagnoser") : backend_named(s->backend);
      const Sample sample{s->id, Split::test, s->image.ref, 0};
      s->prediction = predict(sample, &s->dialogue, Mode::pcdf, diagnoser, *s->class_set, templates_, s->image);
      s->state = SessionState::done;
    }
  } catch (...) {
    s->dialogue.turns.pop_back();
    s->state = SessionState::awaiting_answer;
    throw;
  }
  return view(*s);
}

ordered_json ConsultationService::get_session(const std::string& session_id) {
  auto s = find_session(session_id);
  std::lock_guard<std::mutex> lock(s->mu);
  return view(*s);
}

ordered_json ConsultationService::list_triplets(std::size_t offset, std::size_t limit) const {
  ordered_json items = ordered_json::array();
  for (std::size_t i = offset; i < cfg_.triplets.size() && i < offset + limit; ++i) {
    items.push_back(to_json(cfg_.triplets[i]));
  }
  return {{"total", cfg_.triplets.size()}, {"offset", offset}, {"limit", limit}, {"items", items}};
}

ordered_json ConsultationService::submit_annotation(const json& request) {
  Annotation a = annotation_from_json(request);
  const auto it = triplet_turns_.find(a.sample_id);
  if (it == triplet_turns_.end()) throw NotFoundError("unknown sample '" + a.sample_id + "'");
  if (text::trim(a.annotator_id).empty()) throw ValidationError("annotator_id must not be empty");
  if (a.relevance.size() != it->second) {
    throw ValidationError("relevance has " + std::to_string(a.relevance.size()) + " entries, dialogue has " +
                          std::to_string(it->second) + " turns");
  }
  if (a.sc < 1 || a.sc > 5) throw ValidationError("sc must be in 1..5");
  if (a.dr < 1 || a.dr > 5) throw ValidationError("dr must be in 1..5");

  std::lock_guard<std::mutex> lock(annotations_mu_);
  a.id = "a-" + std::to_string(next_annotation_++);
  if (!cfg_.annotations_path.empty()) {
    std::ofstream out(cfg_.annotations_path, std::ios::app);
    out << annotation_json(a).dump() << '\n';
    if (!out) throw IoError("cannot append to " + cfg_.annotations_path.string());
  }
  annotations_.push_back(a);
  return {{"id", a.id}};
}

ordered_json ConsultationService::list_annotations() const {
  std::lock_guard<std::mutex> lock(annotations_mu_);
  ordered_json items = ordered_json::array();
  for (const auto& a : annotations_) items.push_back(annotation_json(a));
  return {{"total", annotations_.size()}, {"items", items}};
}

ordered_json ConsultationService::annotation_aggregate() const {
  std::vector<JudgeVerdict> verdicts;
  {
    std::lock_guard<std::mutex> lock(annotations_mu_);
    for (const auto& a : annotations_) verdicts.push_back({a.sample_id, a.relevance, a.dr, a.sc});
  }
  if (verdicts.empty()) {
    return {{"annotations", 0}, {"pairs_total", 0}, {"pairs_relevant", 0}, {"pct_relevant", 0.0},
            {"avg_sc", 0.0}, {"avg_dr", 0.0}};
  }
  const auto agg = aggregate(verdicts, {});
  return {{"annotations", verdicts.size()},
          {"pairs_total", agg.pairs_total},
          {"pairs_relevant", agg.pairs_relevant},
          {"pct_relevant", round1(agg.pct_relevant * 100.0)},
          {"avg_sc", round1(agg.avg_sc)},
          {"avg_dr", round1(agg.avg_dr)}};
}

std::size_t ConsultationService::session_count() const {
  std::lock_guard<std::mutex> lock(sessions_mu_);
  return sessions_.size();
}

std::size_t ConsultationService::expire_idle(Clock::time_point now) {
  std::lock_guard<std::mutex> lock(sessions_mu_);
  std::size_t dropped = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock<std::mutex> s_lock(it->second->mu, std::try_to_lock);
    if (s_lock.owns_lock() && now - it->second->last_active > cfg_.session_idle) {
      s_lock.unlock();
      it = sessions_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

namespace {

int http_status_for(const Error& e) {
  const std::string code = e.code();
  if (code == "not_found") return 404;
  if (code == "state_error") return 409;
  if (code == "backend_error" || code == "protocol_error") return 502;
  if (code == "io_error") return 500;
  return 400;
}

void send_json(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, http_status_for(e), e.code(), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("request body is not valid JSON: ") + e.what());
  }
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto v = req.get_param_value(key);
  if (v.empty() || !std::all_of(v.begin(), v.end(), ::isdigit) || v.size() > 9) {
    throw ValidationError(std::string("query parameter '") + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(std::stoull(v));
}

}  // namespace

HttpService::HttpService(ConsultationService& service, std::filesystem::path static_dir)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });
  s.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, service_.create_session(parse_body(req))); });
  });
  s.Post(R"(/sessions/([^/]+)/answer)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.is_object() || !body.contains("answer") || !body["answer"].is_string()) {
        throw ValidationError("body needs a string field 'answer'");
      }
      send_json(res, 200, service_.submit_answer(req.matches[1], body["answer"].get<std::string>()));
    });
  });
  s.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.get_session(req.matches[1])); });
  });
  s.Get("/triplets", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto limit = std::min<std::size_t>(query_size(req, "limit", 20), 500);
      send_json(res, 200, service_.list_triplets(query_size(req, "offset", 0), limit));
    });
  });
  s.Post("/annotations", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, service_.submit_annotation(parse_body(req))); });
  });
  s.Get("/annotations", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.list_annotations()); });
  });
  s.Get("/annotations/aggregate", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.annotation_aggregate()); });
  });
  if (!static_dir.empty() && !s.set_mount_point("/", static_dir.string())) {
    log::warn("static directory " + static_dir.string() + " not mounted");
  }
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

bool HttpService::listen() { return server_->listen_after_bind(); }

void HttpService::stop() {
  if (server_) server_->stop();
}

void HttpService::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace pcdf
