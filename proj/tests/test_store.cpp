#include <doctest.h>

#include "pcdf/error.hpp"
#include "pcdf/image.hpp"
#include "pcdf/store.hpp"
#include "pcdf/text.hpp"
#include "random_records.hpp"
#include "synthetic.hpp"

using namespace pcdf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const TemplateStore& store() {
  static const TemplateStore s = TemplateStore::load_default();
  return s;
}

const ClassSet kClasses("derma", {"melanoma", "nevus", "dermatofibroma"});

TripletRecord eight_turns() {
  TripletRecord r;
  r.sample_id = "s0";
  r.image_ref = "images/s0.png";
  r.gold_index = 1;
  r.gold_label = "nevus";
  r.dialogue.sample_id = "s0";
  for (int t = 1; t <= 8; ++t) r.dialogue.turns.push_back({t, "Q" + std::to_string(t) + "?", "A" + std::to_string(t) + ".", {}});
  r.sim_meta = {"run", 8, "d", "p", std::nullopt, std::nullopt};
  return r;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("triplet JSON has a fixed key order") {
  const auto j = to_json(eight_turns());
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"sample_id", "image_ref", "gold_label", "gold_index", "dialogue", "sim_meta"});
  CHECK_FALSE(j["sim_meta"].contains("started_at"));
}

TEST_CASE("1000 random records round-trip with byte-identical reserialization") {
  const auto dir = synthetic::fresh_dir("store-rt");
  std::mt19937 rng(17);
  std::vector<TripletRecord> records;
  for (std::size_t i = 0; i < 1000; ++i) records.push_back(synthetic::random_record(rng, kClasses, i));
  CHECK(write_records(records, dir / "a.jsonl") == 1000);
  const auto back = read_records(dir / "a.jsonl", &kClasses);
  REQUIRE(back.size() == records.size());
  CHECK(back == records);
  write_records(back, dir / "b.jsonl");
  CHECK(read_file_bytes(dir / "a.jsonl") == read_file_bytes(dir / "b.jsonl"));
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(serialize(records[i]) == serialize(back[i]));
  fs::remove_all(dir);
}

TEST_CASE("append mode extends a file") {
  const auto dir = synthetic::fresh_dir("store-append");
  const auto r = eight_turns();
  write_records({r}, dir / "x.jsonl");
  write_records({r, r}, dir / "x.jsonl", true);
  CHECK(read_records(dir / "x.jsonl").size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("read errors carry the line number") {
  const auto dir = synthetic::fresh_dir("store-errors");
  const std::string good = serialize(eight_turns());
  synthetic::write_text(dir / "trunc.jsonl", good + "\n" + good + "\n" + good.substr(0, good.size() / 2));
  try {
    read_records(dir / "trunc.jsonl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("trunc.jsonl:3") != std::string::npos);
  }

  auto wrong = eight_turns();
  wrong.gold_label = "melanoma";
  synthetic::write_text(dir / "label.jsonl", good + "\n" + serialize(wrong) + "\n");
  try {
    read_records(dir / "label.jsonl", &kClasses);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("label.jsonl:2") != std::string::npos);
  }
  CHECK_NOTHROW(read_records(dir / "label.jsonl"));

  auto gap = eight_turns();
  gap.dialogue.turns[3].index = 9;
  CHECK_THROWS_AS(validate(gap), ValidationError);
  auto empty_answer = eight_turns();
  empty_answer.dialogue.turns[0].answer = "";
  CHECK_THROWS_AS(validate(empty_answer), ValidationError);
  auto mismatch = eight_turns();
  mismatch.dialogue.sample_id = "other";
  CHECK_THROWS_AS(validate(mismatch), ValidationError);
  auto range = eight_turns();
  range.gold_index = 7;
  CHECK_THROWS_AS(validate(range, &kClasses), ValidationError);

  CHECK_THROWS_AS(read_records(dir / "missing.jsonl"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("writing to an unwritable path is an IO error") {
  CHECK_THROWS_AS(write_records({eight_turns()}, "/proc/definitely/not/here.jsonl"), IoError);
}

TEST_CASE("SFT record for an 8-turn triplet") {
  const auto sft = make_sft_record(eight_turns(), kClasses, store());
  CHECK(count(sft.user_text, "Doctor: ") == 8);
  CHECK(count(sft.user_text, "Patient: ") == 8);
  CHECK(sft.user_text.find("melanoma, nevus, dermatofibroma") != std::string::npos);
  CHECK(sft.user_text.find("Dialogue History: Doctor: Q1?") != std::string::npos);
  CHECK(sft.user_text.find('{') == std::string::npos);
  CHECK(sft.assistant_text == "nevus");
  CHECK(sft.image_ref == "images/s0.png");
}

TEST_CASE("SFT export keeps order, count and writes the training sidecar") {
  const auto dir = synthetic::fresh_dir("store-sft");
  std::mt19937 rng(4);
  std::vector<TripletRecord> triplets;
  for (std::size_t i = 0; i < 40; ++i) {
    auto r = synthetic::random_record(rng, kClasses, i);
    if (r.dialogue.turns.empty()) r.dialogue.turns.push_back({1, "Q?", "A.", {}});
    triplets.push_back(r);
  }
  CHECK(export_sft(triplets, kClasses, store(), dir / "sft.jsonl") == 40);
  const auto lines = text::split_lines(read_file_bytes(dir / "sft.jsonl"));
  std::size_t i = 0;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    CHECK(j["sample_id"] == triplets[i].sample_id);
    CHECK(j["image_ref"] == triplets[i].image_ref);
    CHECK(j["assistant_text"] == kClasses.label(triplets[i].gold_index));
    CHECK(count(j["user_text"].get<std::string>(), "Doctor: ") == triplets[i].dialogue.turns.size());
    ++i;
  }
  CHECK(i == 40);
  const auto side = json::parse(read_file_bytes(training_suggestion_path(dir / "sft.jsonl")));
  CHECK(side["lora_rank"] == 16);
  CHECK(side["lora_alpha"] == 32);
  CHECK(side["lora_dropout"] == 0.05);
  CHECK(side["epochs"] == 10);
  CHECK(side["batch_size"] == 8);
  CHECK(side["records"] == 40);
  fs::remove_all(dir);
}

TEST_CASE("SFT export refuses empty dialogues unless allowed") {
  auto r = eight_turns();
  r.dialogue.turns.clear();
  CHECK_THROWS_AS(make_sft_record(r, kClasses, store()), ValidationError);
  const auto sft = make_sft_record(r, kClasses, store(), true);
  CHECK(sft.user_text.find("Dialogue History: (none).") != std::string::npos);
  r.gold_index = 5;
  CHECK_THROWS_AS(make_sft_record(r, kClasses, store(), true), ValidationError);
}
