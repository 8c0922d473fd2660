#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcdf/prompts.hpp"

namespace pcdf {

enum class BackendKind { remote, scripted };
enum class Role { doc, patient, judge, diagnoser };

std::string_view to_string(Role r);
Role parse_role(std::string_view s);

// One row of a scripted backend's rule table. Rules are tried in order; the
// first whose role and key match produces the response.
//
// key forms: "any"; a turn index ("3" or "turn:3"); a gold label ("melanoma"
// or "label:melanoma", canonicalized); "contains:<text>" (case-insensitive
// search of the rendered prompt text).
//
// response placeholders: {label} (gold label bound in the prompt), {t} (turn
// index), {choice:a|b|c} (one option picked by a stable hash of the image ref
// and prompt text).
struct ScriptedRule {
  Role role = Role::doc;
  std::string key = "any";
  std::string response;
  bool fail = false;       // throw a BackendError instead of answering
  int max_uses = 0;        // > 0: rule stops matching after this many hits
};

struct BackendConfig {
  BackendKind kind = BackendKind::scripted;
  std::string name;
  std::string endpoint_url;
  std::string model_name;
  std::string api_key_env;
  double temperature = 0.0;
  int max_output_tokens = 256;
  std::chrono::milliseconds request_timeout{60000};
  int max_retries = 4;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds backoff_max{30000};
  std::optional<int> image_upscale = 224;
  double requests_per_second = 0.0;  // 0 = unlimited
  std::vector<ScriptedRule> rules;
  std::chrono::milliseconds scripted_latency{0};

  // Model identifier recorded in provenance metadata.
  std::string model_label() const;
};

// Reads a backend block. `base_dir` resolves a relative `rules_file`.
BackendConfig parse_backend_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
std::vector<ScriptedRule> parse_rules(const nlohmann::json& j);

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResult {
  std::string text;
  std::chrono::milliseconds latency{0};
  std::optional<TokenUsage> usage;
  int attempt_count = 1;
};

class TokenBucket {
 public:
  explicit TokenBucket(double rate_per_second);
  void acquire();

 private:
  double rate_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mu_;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResult complete(const RenderedChat& chat, Role role) = 0;
  const BackendConfig& config() const { return config_; }

 protected:
  explicit Backend(BackendConfig cfg) : config_(std::move(cfg)) {}
  BackendConfig config_;
};

// Remote backends check the API key env var here, before any network call.
std::shared_ptr<Backend> make_backend(const BackendConfig& cfg);

// One-shot convenience over make_backend.
ChatResult complete(const BackendConfig& cfg, const RenderedChat& chat, Role role);

// The JSON body POSTed to {endpoint}/chat/completions.
nlohmann::json build_request_body(const BackendConfig& cfg, const RenderedChat& chat);

// PNG bytes for an image-part after the optional nearest-neighbor upscale.
std::string prepare_image_png(const ImagePart& img, std::optional<int> upscale);

}  // namespace pcdf
