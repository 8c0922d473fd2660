#include <cstdlib>

#include <doctest.h>

#include "mock_openai.hpp"
#include "pcdf/backends.hpp"
#include "pcdf/error.hpp"
#include "pcdf/image.hpp"
#include "pcdf/text.hpp"
#include "png_oracle.hpp"

using namespace pcdf;
using nlohmann::json;

namespace {

RenderedChat chat_with(std::map<std::string, std::string> bindings, std::optional<int> turn, std::string text,
                       std::string image_bytes = "") {
  RenderedChat c;
  c.messages.push_back({"user",
                        {{ContentPart::Kind::image, "", ImagePart{"img/a.png", "", std::move(image_bytes)}},
                         {ContentPart::Kind::text, std::move(text), {}}}});
  c.bindings = std::move(bindings);
  c.turn = turn;
  return c;
}

std::string small_png() {
  std::vector<std::uint8_t> px(3 * 2 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 13);
  return encode_png(image_from_pixels(px, 3, 2, 3));
}

BackendConfig remote(const std::string& url) {
  return parse_backend_config({{"kind", "remote"},
                               {"endpoint_url", url},
                               {"model_name", "test-model"},
                               {"backoff_base_ms", 1},
                               {"backoff_max_ms", 5},
                               {"max_retries", 4},
                               {"request_timeout_ms", 5000}});
}

}  // namespace

TEST_CASE("scripted rule lookup by label, turn and fallback") {
  const auto cfg = parse_backend_config(json::parse(R"({
    "kind": "scripted",
    "rules": [
      {"role": "patient", "key": "melanoma", "response": "The spot has grown darker recently."},
      {"role": "patient", "key": "any", "response": "Answer about {label}-symptom {t}."},
      {"role": "doc", "key": "turn:2", "response": "Second?"},
      {"role": "doc", "key": "any", "response": "Question {t}?"},
      {"role": "diagnoser", "key": "contains:crusty", "response": "{choice:a|b}"}
    ]})"));
  const auto b = make_backend(cfg);
  CHECK(b->complete(chat_with({{"gold_label", "Melanoma"}}, 1, "p"), Role::patient).text ==
        "The spot has grown darker recently.");
  CHECK(b->complete(chat_with({{"gold_label", "nevus"}}, 3, "p"), Role::patient).text == "Answer about nevus-symptom 3.");
  CHECK(b->complete(chat_with({}, 2, "d"), Role::doc).text == "Second?");
  CHECK(b->complete(chat_with({}, 5, "d"), Role::doc).text == "Question 5?");
  const auto pick = b->complete(chat_with({}, std::nullopt, "it is CRUSTY"), Role::diagnoser).text;
  CHECK((pick == "a" || pick == "b"));
  CHECK_THROWS_AS(b->complete(chat_with({}, std::nullopt, "nothing"), Role::diagnoser), ProtocolError);
  CHECK_THROWS_AS(b->complete(chat_with({}, 1, "x"), Role::judge), ProtocolError);
}

TEST_CASE("scripted backend is a pure function of rules, chat and role") {
  const auto cfg = parse_backend_config(
      json::parse(R"({"rules":[{"role":"judge","key":"any","response":"{choice:x|y|z|w} {t}"}]})"));
  const auto b1 = make_backend(cfg);
  const auto b2 = make_backend(cfg);
  for (int i = 0; i < 50; ++i) {
    const auto c = chat_with({}, i, "prompt " + std::to_string(i % 7));
    CHECK(b1->complete(c, Role::judge).text == b2->complete(c, Role::judge).text);
    CHECK(b1->complete(c, Role::judge).text == b1->complete(c, Role::judge).text);
  }
}

TEST_CASE("backend config validation") {
  CHECK_THROWS_AS(parse_backend_config({{"kind", "remote"}, {"model_name", "m"}}), ConfigError);
  CHECK_THROWS_AS(parse_backend_config({{"kind", "mystery"}}), ConfigError);
  CHECK_THROWS_AS(parse_backend_config({{"temperature", -1.0}}), ConfigError);
  const auto d = parse_backend_config(json::object());
  CHECK(d.temperature == 0.0);
  CHECK(d.max_output_tokens == 256);
  CHECK(d.image_upscale == 224);
  CHECK_FALSE(parse_backend_config({{"image_upscale", nullptr}}).image_upscale.has_value());
}

TEST_CASE("request body carries a well-formed data-URL PNG image part") {
  const std::string png = small_png();
  auto cfg = remote("http://127.0.0.1:1/v1");
  cfg.image_upscale.reset();
  const json body = build_request_body(cfg, chat_with({}, 1, "hello", png));
  CHECK(body["model"] == "test-model");
  CHECK(body["temperature"] == 0.0);
  CHECK(body["max_tokens"] == 256);
  const auto& content = body["messages"][0]["content"];
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(content[0]["type"] == "image_url");
  CHECK(content[1]["type"] == "text");
  CHECK(content[1]["text"] == "hello");
  const std::string url = content[0]["image_url"]["url"];
  const std::string prefix = "data:image/png;base64,";
  REQUIRE(url.rfind(prefix, 0) == 0);
  CHECK(text::base64_decode(url.substr(prefix.size())) == png);
}

TEST_CASE("upscaled wire image decodes to the nearest-neighbor enlargement") {
  const std::string png = small_png();
  const auto cfg = remote("http://127.0.0.1:1/v1");
  const json body = build_request_body(cfg, chat_with({}, 1, "x", png));
  const std::string url = body["messages"][0]["content"][0]["image_url"]["url"];
  const auto wire = oracle::decode_png(text::base64_decode(url.substr(url.find(',') + 1)));
  CHECK(wire.width == 224);
  CHECK(wire.height == 224);
  const Image expected = upscale_nearest(decode_image(png), 224);
  CHECK(wire.rgb == expected.rgb);
}

TEST_CASE("429, 429, 200 succeeds on the third attempt") {
  mock::OpenAIServer server({{429, "", ""}, {429, "", ""}, {200, "ok", ""}});
  const auto r = complete(remote(server.url()), chat_with({}, 1, "hi", small_png()), Role::doc);
  CHECK(r.text == "ok");
  CHECK(r.attempt_count == 3);
  CHECK(server.bodies().size() == 3);
  REQUIRE(r.usage.has_value());
  CHECK(r.usage->prompt_tokens == 10);
}

TEST_CASE("completion text is trimmed") {
  mock::OpenAIServer server({{200, "  spaced out \n", ""}});
  CHECK(complete(remote(server.url()), chat_with({}, 1, "hi", small_png()), Role::doc).text == "spaced out");
}

TEST_CASE("5xx retries are bounded and report the last status") {
  mock::OpenAIServer server({{503, "", ""}, {503, "", ""}, {503, "", ""}}, "");
  auto cfg = remote(server.url());
  cfg.max_retries = 2;
  try {
    complete(cfg, chat_with({}, 1, "hi", small_png()), Role::doc);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.status() == 503);
    CHECK(e.attempts() == 3);
  }
  CHECK(server.bodies().size() == 3);
}

TEST_CASE("4xx other than 429 fails fast") {
  mock::OpenAIServer server({{400, "", ""}, {200, "never", ""}});
  try {
    complete(remote(server.url()), chat_with({}, 1, "hi", small_png()), Role::doc);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.status() == 400);
    CHECK(e.attempts() == 1);
  }
  CHECK(server.bodies().size() == 1);
}

TEST_CASE("empty completions exhaust into a protocol error") {
  mock::OpenAIServer server({}, "   ");
  auto cfg = remote(server.url());
  cfg.max_retries = 1;
  CHECK_THROWS_AS(complete(cfg, chat_with({}, 1, "hi", small_png()), Role::doc), ProtocolError);
  CHECK(server.bodies().size() == 2);
}

TEST_CASE("API key comes from the named env var and is checked before any request") {
  mock::OpenAIServer server({});
  auto cfg = remote(server.url());
  cfg.api_key_env = "PCDF_TEST_KEY_UNSET_12345";
  ::unsetenv(cfg.api_key_env.c_str());
  CHECK_THROWS_AS(make_backend(cfg), ConfigError);
  CHECK(server.bodies().empty());

  ::setenv("PCDF_TEST_KEY_SET", "sekret", 1);
  cfg.api_key_env = "PCDF_TEST_KEY_SET";
  complete(cfg, chat_with({}, 1, "hi", small_png()), Role::doc);
  CHECK(server.auth().back() == "Bearer sekret");
}

TEST_CASE("unreachable endpoint is a backend error with status 0") {
  auto cfg = remote("http://127.0.0.1:9/v1");
  cfg.max_retries = 1;
  cfg.request_timeout = std::chrono::milliseconds(300);
  try {
    complete(cfg, chat_with({}, 1, "hi", small_png()), Role::doc);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.status() == 0);
    CHECK(e.attempts() == 2);
  }
}

TEST_CASE("token bucket spaces requests") {
  TokenBucket bucket(50.0);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 60; ++i) bucket.acquire();
  CHECK(std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(150));
}
