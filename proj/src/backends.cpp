#include "pcdf/backends.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "pcdf/error.hpp"
#include "pcdf/image.hpp"
#include "pcdf/log.hpp"
#include "pcdf/text.hpp"

namespace pcdf {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::doc: return "doc";
    case Role::patient: return "patient";
    case Role::judge: return "judge";
    case Role::diagnoser: return "diagnoser";
  }
  return "";
}

Role parse_role(std::string_view s) {
  for (auto r : {Role::doc, Role::patient, Role::judge, Role::diagnoser}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown role '" + std::string(s) + "'");
}

std::string BackendConfig::model_label() const {
  if (!model_name.empty()) return model_name;
  if (!name.empty()) return name;
  return kind == BackendKind::scripted ? "scripted" : "remote";
}

std::vector<ScriptedRule> parse_rules(const json& j) {
  std::vector<ScriptedRule> rules;
  for (const auto& r : j) {
    ScriptedRule rule;
    rule.role = parse_role(r.at("role").get<std::string>());
    rule.key = r.value("key", "any");
    rule.response = r.value("response", "");
    rule.fail = r.value("fail", false);
    rule.max_uses = r.value("max_uses", 0);
    rules.push_back(std::move(rule));
  }
  return rules;
}

BackendConfig parse_backend_config(const json& j, const std::filesystem::path& base_dir) {
  BackendConfig c;
  try {
    const std::string kind = j.value("kind", "scripted");
    if (kind == "remote") {
      c.kind = BackendKind::remote;
    } else if (kind == "scripted") {
      c.kind = BackendKind::scripted;
    } else {
      throw ConfigError("unknown backend kind '" + kind + "'");
    }
    c.name = j.value("name", "");
    c.endpoint_url = j.value("endpoint_url", "");
    c.model_name = j.value("model_name", j.value("model", ""));
    c.api_key_env = j.value("api_key_env", "");
    c.temperature = j.value("temperature", 0.0);
    c.max_output_tokens = j.value("max_output_tokens", 256);
    c.request_timeout = std::chrono::milliseconds(j.value("request_timeout_ms", 60000));
    c.max_retries = j.value("max_retries", 4);
    c.backoff_base = std::chrono::milliseconds(j.value("backoff_base_ms", 500));
    c.backoff_max = std::chrono::milliseconds(j.value("backoff_max_ms", 30000));
    if (j.contains("image_upscale")) {
      if (j["image_upscale"].is_null() || j["image_upscale"].get<int>() <= 0) {
        c.image_upscale.reset();
      } else {
        c.image_upscale = j["image_upscale"].get<int>();
      }
    }
    c.requests_per_second = j.value("requests_per_second", 0.0);
    c.scripted_latency = std::chrono::milliseconds(j.value("latency_ms", 0));
    if (j.contains("rules")) c.rules = parse_rules(j["rules"]);
    if (j.contains("rules_file")) {
      std::filesystem::path p = j["rules_file"].get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      const auto extra = parse_rules(json::parse(read_file_bytes(p)));
      c.rules.insert(c.rules.end(), extra.begin(), extra.end());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("backend config: ") + e.what());
  }
  if (c.temperature < 0) throw ConfigError("backend temperature must be >= 0");
  if (c.max_retries < 0) throw ConfigError("backend max_retries must be >= 0");
  if (c.kind == BackendKind::remote && (c.endpoint_url.empty() || c.model_name.empty())) {
    throw ConfigError("remote backend needs endpoint_url and model_name");
  }
  return c;
}

TokenBucket::TokenBucket(double rate_per_second)
    : rate_(rate_per_second), capacity_(std::max(1.0, rate_per_second)), tokens_(capacity_), last_(Clock::now()) {}

void TokenBucket::acquire() {
  if (rate_ <= 0) return;
  for (;;) {
    std::chrono::duration<double> wait{0};
    {
      std::lock_guard<std::mutex> lock(mu_);
      const auto now = Clock::now();
      tokens_ = std::min(capacity_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
      last_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    }
    std::this_thread::sleep_for(wait);
  }
}

std::string prepare_image_png(const ImagePart& img, std::optional<int> upscale) {
  std::string bytes = img.bytes.empty() ? read_file_bytes(img.path) : img.bytes;
  if (looks_like_png(bytes) && !upscale) return bytes;
  Image decoded = decode_image(bytes);
  if (upscale && (decoded.width < *upscale || decoded.height < *upscale)) {
    return encode_png(upscale_nearest(decoded, *upscale));
  }
  if (looks_like_png(bytes)) return bytes;
  return encode_png(decoded);
}

json build_request_body(const BackendConfig& cfg, const RenderedChat& chat) {
  json messages = json::array();
  for (const auto& m : chat.messages) {
    json content = json::array();
    for (const auto& p : m.parts) {
      if (p.kind == ContentPart::Kind::text) {
        content.push_back({{"type", "text"}, {"text", p.text}});
      } else {
        const std::string png = prepare_image_png(p.image, cfg.image_upscale);
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:image/png;base64," + text::base64_encode(png)}}}});
      }
    }
    messages.push_back({{"role", m.role}, {"content", std::move(content)}});
  }
  return {{"model", cfg.model_name},
          {"messages", std::move(messages)},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_output_tokens}};
}

namespace {

class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(BackendConfig cfg) : Backend(std::move(cfg)), uses_(config_.rules.size()) {}

  ChatResult complete(const RenderedChat& chat, Role role) override {
    const auto start = Clock::now();
    if (config_.scripted_latency.count() > 0) std::this_thread::sleep_for(config_.scripted_latency);
    for (std::size_t i = 0; i < config_.rules.size(); ++i) {
      const auto& rule = config_.rules[i];
      if (rule.role != role || !matches(rule.key, chat)) continue;
      if (rule.max_uses > 0 && uses_[i].fetch_add(1) >= rule.max_uses) continue;
      if (rule.fail) throw BackendError("scripted failure for role " + std::string(to_string(role)), 500, 1);
      ChatResult r;
      r.text = std::string(text::trim(expand(rule.response, chat)));
      r.latency = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);
      return r;
    }
    throw ProtocolError("no scripted rule matches role '" + std::string(to_string(role)) + "'");
  }

 private:
  static std::string bound(const RenderedChat& chat, const std::string& key) {
    const auto it = chat.bindings.find(key);
    return it == chat.bindings.end() ? std::string() : it->second;
  }

  static bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  }

  static bool matches(const std::string& key, const RenderedChat& chat) {
    if (key == "any") return true;
    std::string_view k = key;
    if (k.starts_with("contains:")) {
      return text::case_fold(chat.text()).find(text::case_fold(k.substr(9))) != std::string::npos;
    }
    if (k.starts_with("turn:")) k.remove_prefix(5);
    if (all_digits(k) && !key.starts_with("label:")) {
      return chat.turn && *chat.turn == std::stoi(std::string(k));
    }
    if (k.starts_with("label:")) k.remove_prefix(6);
    const std::string label = bound(chat, "gold_label");
    return !label.empty() && text::canonicalize(label) == text::canonicalize(k);
  }

  static std::string expand(const std::string& tmpl, const RenderedChat& chat) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
      if (tmpl[i] == '{') {
        const auto end = tmpl.find('}', i);
        if (end != std::string::npos) {
          const std::string_view name(tmpl.data() + i + 1, end - i - 1);
          if (name == "label") {
            out += bound(chat, "gold_label");
            i = end;
            continue;
          }
          if (name == "t") {
            out += chat.turn ? std::to_string(*chat.turn) : "";
            i = end;
            continue;
          }
          if (name.starts_with("choice:")) {
            std::vector<std::string> options;
            std::string_view rest = name.substr(7);
            for (;;) {
              const auto bar = rest.find('|');
              options.emplace_back(rest.substr(0, bar));
              if (bar == std::string_view::npos) break;
              rest.remove_prefix(bar + 1);
            }
            const ImagePart* img = chat.image();
            const auto h = text::fnv1a((img ? img->ref : std::string()) + "\n" + chat.text());
            out += options[h % options.size()];
            i = end;
            continue;
          }
        }
      }
      out.push_back(tmpl[i]);
    }
    return out;
  }

  std::vector<std::atomic<int>> uses_;
};

struct Endpoint {
  std::string scheme_host_port;
  std::string base_path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.scheme_host_port = url.substr(0, path_start);
  ep.base_path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
  return ep;
}

std::string extract_content(const json& body) {
  const auto& msg = body.at("choices").at(0).at("message");
  const auto& content = msg.at("content");
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string out;
    for (const auto& part : content) {
      if (part.value("type", "") == "text") out += part.value("text", "");
    }
    return out;
  }
  if (content.is_null()) return "";
  throw ProtocolError("unexpected message.content type");
}

class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(BackendConfig cfg)
      : Backend(std::move(cfg)), endpoint_(split_url(config_.endpoint_url)), limiter_(config_.requests_per_second) {
    if (!config_.api_key_env.empty()) {
      const char* key = std::getenv(config_.api_key_env.c_str());
      if (!key || !*key) {
        throw ConfigError("environment variable " + config_.api_key_env + " (API key) is not set");
      }
      api_key_ = key;
    }
  }

  ChatResult complete(const RenderedChat& chat, Role role) override {
    const auto start = Clock::now();
    const std::string body = build_request_body(config_, chat).dump();
    const std::string path = endpoint_.base_path + "/chat/completions";
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    int last_status = 0;
    std::string last_error;
    TokenUsage usage;
    bool last_was_empty = false;
    const int max_attempts = config_.max_retries + 1;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      limiter_.acquire();
      httplib::Client cli(endpoint_.scheme_host_port);
      const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(config_.request_timeout);
      cli.set_connection_timeout(timeout);
      cli.set_read_timeout(timeout);
      cli.set_write_timeout(timeout);
      std::chrono::milliseconds retry_after{0};

      auto res = cli.Post(path, headers, body, "application/json");
      last_was_empty = false;
      if (!res) {
        last_status = 0;
        last_error = httplib::to_string(res.error());
      } else if (res->status == 200) {
        std::string content;
        try {
          const json parsed = json::parse(res->body);
          content = extract_content(parsed);
          if (parsed.contains("usage") && parsed["usage"].is_object()) {
            usage.prompt_tokens = parsed["usage"].value("prompt_tokens", 0);
            usage.completion_tokens = parsed["usage"].value("completion_tokens", 0);
          }
        } catch (const json::exception& e) {
          throw ProtocolError("malformed chat completion response: " + std::string(e.what()));
        }
        const auto trimmed = text::trim(content);
        if (!trimmed.empty()) {
          ChatResult r;
          r.text = std::string(trimmed);
          r.attempt_count = attempt;
          r.latency = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);
          if (usage.prompt_tokens || usage.completion_tokens) r.usage = usage;
          return r;
        }
        last_status = 200;
        last_was_empty = true;
        last_error = "empty completion";
      } else if (res->status == 429 || res->status >= 500) {
        last_status = res->status;
        last_error = "HTTP " + std::to_string(res->status);
        if (res->has_header("Retry-After")) {
          const auto v = res->get_header_value("Retry-After");
          if (!v.empty() && std::all_of(v.begin(), v.end(), ::isdigit)) retry_after = std::chrono::seconds(std::stoi(v));
        }
      } else {
        throw BackendError("HTTP " + std::to_string(res->status) + " from " + config_.endpoint_url + ": " +
                               res->body.substr(0, 300),
                           res->status, attempt);
      }

      if (attempt < max_attempts) {
        std::chrono::milliseconds delay = config_.backoff_base * (1LL << std::min(attempt - 1, 20));
        delay = std::max<std::chrono::milliseconds>(delay, retry_after);
        delay = std::min(delay, config_.backoff_max);
        log::write(log::Level::debug, "retrying " + std::string(to_string(role)) + " request after " + last_error);
        std::this_thread::sleep_for(delay);
      }
    }
    if (last_was_empty) {
      throw ProtocolError("empty completion from " + config_.endpoint_url + " after " +
                          std::to_string(max_attempts) + " attempts");
    }
    throw BackendError("giving up on " + config_.endpoint_url + " after " + std::to_string(max_attempts) +
                           " attempts: " + last_error,
                       last_status, max_attempts);
  }

 private:
  Endpoint endpoint_;
  TokenBucket limiter_;
  std::string api_key_;
};

}  // namespace

std::shared_ptr<Backend> make_backend(const BackendConfig& cfg) {
  if (cfg.kind == BackendKind::scripted) return std::make_shared<ScriptedBackend>(cfg);
  if (cfg.endpoint_url.empty() || cfg.model_name.empty()) {
    throw ConfigError("remote backend needs endpoint_url and model_name");
  }
  return std::make_shared<RemoteBackend>(cfg);
}

ChatResult complete(const BackendConfig& cfg, const RenderedChat& chat, Role role) {
  return make_backend(cfg)->complete(chat, role);
}

}  // namespace pcdf
