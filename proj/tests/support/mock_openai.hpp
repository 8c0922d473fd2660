#pragma once

// Local OpenAI-compatible server that replays a scripted status sequence and
// records every request it receives.

#include <deque>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace pcdf::mock {

struct Reply {
  int status = 200;
  std::string content = "ok";
  std::string retry_after;
};

class OpenAIServer {
 public:
  explicit OpenAIServer(std::deque<Reply> replies, std::string fallback = "ok")
      : replies_(std::move(replies)), fallback_(std::move(fallback)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      Reply r{200, fallback_, ""};
      {
        std::lock_guard<std::mutex> lock(mu_);
        bodies_.push_back(req.body);
        auth_.push_back(req.get_header_value("Authorization"));
        if (!replies_.empty()) {
          r = replies_.front();
          replies_.pop_front();
        }
      }
      res.status = r.status;
      if (!r.retry_after.empty()) res.set_header("Retry-After", r.retry_after);
      if (r.status == 200) {
        const nlohmann::json body = {
            {"id", "x"},
            {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", r.content}}}}}},
            {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 2}}}};
        res.set_content(body.dump(), "application/json");
      } else {
        res.set_content(R"({"error":{"message":"scripted"}})", "application/json");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~OpenAIServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::vector<std::string> bodies() const {
    std::lock_guard<std::mutex> lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth() const {
    std::lock_guard<std::mutex> lock(mu_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::deque<Reply> replies_;
  std::string fallback_;
  std::vector<std::string> bodies_;
  std::vector<std::string> auth_;
};

}  // namespace pcdf::mock
