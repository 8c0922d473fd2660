#include <random>
#include <regex>

#include <doctest.h>

#include "pcdf/error.hpp"
#include "pcdf/judge.hpp"
#include "pcdf/text.hpp"
#include "synthetic.hpp"

using namespace pcdf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const TemplateStore& store() {
  static const TemplateStore s = TemplateStore::load_default();
  return s;
}

const ClassSet kClasses("derma", {"melanoma", "nevus"}, {{"melanoma", {"mel.", "MM"}}});

TripletRecord triplet(int turns, const std::string& label = "melanoma") {
  TripletRecord r;
  r.sample_id = "s";
  r.image_ref = "img.png";
  r.gold_index = *kClasses.find_label(label);
  r.gold_label = label;
  r.dialogue.sample_id = "s";
  for (int t = 1; t <= turns; ++t) r.dialogue.turns.push_back({t, "Q" + std::to_string(t) + "?", "A" + std::to_string(t), {}});
  return r;
}

// The appendix layout with the given answers.
std::string appendix_block(const std::vector<std::string>& marks, int dr, int sc) {
  std::string s = "CLINICAL RELEVANCE:\n";
  for (std::size_t i = 0; i < marks.size(); ++i) s += std::to_string(i + 1) + ". " + marks[i] + "\n";
  s += "DIALOGUE QUALITY: " + std::to_string(dr) + "\nSYMPTOM COVERAGE: " + std::to_string(sc) + "\n";
  return s;
}

std::set<std::pair<int, std::string>> regex_oracle(const Dialogue& d, const std::vector<std::string>& patterns) {
  std::set<std::pair<int, std::string>> out;
  for (const auto& turn : d.turns) {
    for (const auto& p : patterns) {
      const std::string escaped = std::regex_replace(p, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)");
      const std::regex re("(^|[^A-Za-z0-9_])" + escaped + "($|[^A-Za-z0-9_])", std::regex::icase);
      if (std::regex_search(turn.answer, re)) out.emplace(turn.index, p);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("judge prompt lists one relevance slot per turn") {
  const KnowledgeBase kb(std::map<std::string, std::string>{{"melanoma", "Asymmetric pigmented lesion; changes in size."}});
  for (const int T : {2, 8}) {
    const auto chat = render_judge_prompt(triplet(T), kb, kClasses, store(), ImagePart{"img.png", "", "png"});
    const std::string t = chat.text();
    CHECK(t.find("Asymmetric pigmented lesion") != std::string::npos);
    CHECK(t.find("Doctor: Q1?\nPatient: A1") != std::string::npos);
    CHECK(t.find("For each of the " + std::to_string(T) + " dialogue pairs") != std::string::npos);
    CHECK(t.find("for diagnosing melanoma:") != std::string::npos);
    CHECK(t.find("CLINICAL RELEVANCE:\n1. [YES/NO]\n") != std::string::npos);
    CHECK(t.find(std::to_string(T) + ". [YES/NO]\nDIALOGUE QUALITY: [1-5]\nSYMPTOM COVERAGE: [1-5]") !=
          std::string::npos);
    CHECK(t.find(std::to_string(T + 1) + ". [YES/NO]") == std::string::npos);
    CHECK(t.find("Only output in the exact format above, nothing else.") != std::string::npos);
  }
}

TEST_CASE("missing knowledge names the label") {
  const KnowledgeBase kb(std::map<std::string, std::string>{{"nevus", "x"}});
  try {
    render_judge_prompt(triplet(2), kb, kClasses, store(), ImagePart{"img.png", "", "png"});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("melanoma") != std::string::npos);
  }
}

TEST_CASE("appendix output parses for T in {2,4,6,8}") {
  for (const int T : {2, 4, 6, 8}) {
    std::vector<std::string> marks;
    std::vector<bool> expected;
    for (int i = 0; i < T; ++i) {
      marks.push_back(i % 3 ? "YES" : "NO");
      expected.push_back(i % 3 != 0);
    }
    const auto v = parse_verdict(appendix_block(marks, 4, 5), T);
    CHECK(v.relevance == expected);
    CHECK(v.dialogue_quality == 4);
    CHECK(v.symptom_coverage == 5);
  }
}

TEST_CASE("parser tolerates case, whitespace and brackets") {
  const std::string text = "\n  clinical relevance:  \n1. yes\n 2.   [NO]  \n\nDialogue Quality: [3]\n  SYMPTOM COVERAGE:2  \n\n";
  const auto v = parse_verdict(text, 2);
  CHECK(v.relevance == std::vector<bool>{true, false});
  CHECK(v.dialogue_quality == 3);
  CHECK(v.symptom_coverage == 2);
}

TEST_CASE("parser rejects malformed verdicts with the offending line") {
  const std::vector<std::string> seven(7, "YES");
  try {
    parse_verdict(appendix_block(seven, 4, 4), 8);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 9") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_verdict(appendix_block({"YES", "YES"}, 6, 4), 2), ValidationError);
  CHECK_THROWS_AS(parse_verdict(appendix_block({"YES", "YES"}, 4, 0), 2), ValidationError);
  CHECK_THROWS_AS(parse_verdict(appendix_block({"YES", "MAYBE"}, 4, 4), 2), FormatError);
  CHECK_THROWS_AS(parse_verdict("1. YES\n2. NO\nDIALOGUE QUALITY: 3\nSYMPTOM COVERAGE: 3", 2), FormatError);
  CHECK_THROWS_AS(parse_verdict("CLINICAL RELEVANCE:\n2. YES\n1. NO\nDIALOGUE QUALITY: 3\nSYMPTOM COVERAGE: 3", 2),
                  FormatError);
  CHECK_THROWS_AS(parse_verdict(appendix_block({"YES", "NO"}, 3, 3) + "extra", 2), FormatError);
  CHECK_THROWS_AS(parse_verdict("CLINICAL RELEVANCE:\n1. YES\n2. NO\nSYMPTOM COVERAGE: 3\nDIALOGUE QUALITY: 3", 2),
                  FormatError);
}

TEST_CASE("canonical verdicts round-trip (500 random)") {
  std::mt19937 rng(12);
  for (int i = 0; i < 500; ++i) {
    JudgeVerdict v;
    const std::size_t T = rng() % 12;
    for (std::size_t t = 0; t < T; ++t) v.relevance.push_back(rng() % 2);
    v.dialogue_quality = 1 + int(rng() % 5);
    v.symptom_coverage = 1 + int(rng() % 5);
    const auto back = parse_verdict(format_verdict(v), T);
    CHECK(back == v);
    CHECK(format_verdict(back) == format_verdict(v));
  }
}

TEST_CASE("leakage detection scans patient answers only") {
  Dialogue d{"s", {{1, "Could this be melanoma?", "The spot is dark and growing.", {}},
                   {2, "Anything else?", "I think it is Melanoma.", {}},
                   {3, "Family history?", "Could be mel. related", {}},
                   {4, "Size?", "premelanomas are not a word here", {}}}};
  const auto hits = detect_leakage(d, "melanoma", {"mel."});
  REQUIRE(hits.size() == 2);
  CHECK(hits[0] == LeakageHit{2, "melanoma"});
  CHECK(hits[1] == LeakageHit{3, "mel."});
  CHECK(detect_leakage(Dialogue{"s", {{1, "melanoma?", "no idea", {}}}}, "melanoma", {}).empty());
}

TEST_CASE("leakage detection agrees with a regex word-boundary oracle") {
  std::mt19937 rng(21);
  const std::vector<std::string> words = {"melanoma", "Melanomas", "MELANOMA", "mel.", "mel", "premelanoma",
                                          "melanoma_x", "(melanoma)", "mel.,", "nevus", "dark", "spot", "x-mel.",
                                          "mm", "MM", "mmm", "it", "is"};
  const std::vector<std::string> patterns = {"melanoma", "mel.", "MM"};
  for (int trial = 0; trial < 1000; ++trial) {
    Dialogue d{"s", {}};
    for (int t = 1; t <= 3; ++t) {
      std::string a;
      for (int w = 0; w < 1 + int(rng() % 6); ++w) a += (w ? " " : "") + words[rng() % words.size()];
      d.turns.push_back({t, "melanoma?", a, {}});
    }
    std::set<std::pair<int, std::string>> got;
    for (const auto& h : detect_leakage(d, "melanoma", {"mel.", "MM"})) got.emplace(h.turn_index, h.matched);
    CHECK(got == regex_oracle(d, patterns));
  }
}

TEST_CASE("aggregate reproduces the reported ratios") {
  auto build = [](std::size_t yes, std::size_t total, int per) {
    std::vector<JudgeVerdict> vs;
    std::size_t given = 0;
    for (std::size_t d = 0; d < total / per; ++d) {
      JudgeVerdict v{"s" + std::to_string(d), {}, 4, 5};
      for (int t = 0; t < per; ++t) v.relevance.push_back(given++ < yes);
      vs.push_back(v);
    }
    return vs;
  };
  const auto a = aggregate(build(1628, 1680, 8), {});
  CHECK(a.pairs_total == 1680);
  CHECK(a.pairs_relevant == 1628);
  CHECK(round1(a.pct_relevant * 100) == doctest::Approx(96.9));
  CHECK(std::abs(a.pct_relevant * 100 - 96.9) < 0.05);
  CHECK(to_json(a)["pct_relevant"] == 96.9);

  const auto g = aggregate(build(1589, 1680, 8), {});
  CHECK(std::abs(g.pct_relevant * 100 - 94.6) < 0.05);

  const auto all = aggregate({{"a", {true, true}, 5, 5}, {"b", {true}, 5, 5}}, {});
  CHECK(all.pct_relevant == 1.0);
  CHECK(all.avg_sc == 5.0);
  CHECK(all.avg_dr == 5.0);

  CHECK_THROWS_AS(aggregate({}, {}), ValidationError);
}

TEST_CASE("aggregate is order-invariant and records leakage refs") {
  std::mt19937 rng(2);
  std::vector<JudgeVerdict> vs;
  for (int i = 0; i < 60; ++i) {
    JudgeVerdict v{"s" + std::to_string(i), {}, 1 + int(rng() % 5), 1 + int(rng() % 5)};
    for (int t = 0; t < 8; ++t) v.relevance.push_back(rng() % 4 != 0);
    vs.push_back(v);
  }
  const auto base = aggregate(vs, {});
  for (int k = 0; k < 20; ++k) {
    std::shuffle(vs.begin(), vs.end(), rng);
    const auto a = aggregate(vs, {});
    CHECK(a.pct_relevant == base.pct_relevant);
    CHECK(a.avg_sc == doctest::Approx(base.avg_sc));
    CHECK(a.avg_dr == doctest::Approx(base.avg_dr));
  }
  const auto leak = aggregate(vs, {{"s3", {{2, "melanoma"}, {5, "mel."}}}});
  CHECK(leak.leakage_dialogues == 1);
  CHECK(leak.leakage_turn_refs == std::vector<std::string>{"s3#2", "s3#5"});
}

TEST_CASE("verdict files round-trip") {
  const auto dir = synthetic::fresh_dir("verdicts");
  const std::vector<JudgeVerdict> vs = {{"a", {true, false}, 3, 4}, {"b", {}, 1, 5}};
  write_verdicts(vs, dir / "v.jsonl");
  CHECK(read_verdicts(dir / "v.jsonl") == vs);
  const auto j = json::parse(text::split_lines(read_file_bytes(dir / "v.jsonl"))[0]);
  CHECK(j["dr"] == 3);
  CHECK(j["sc"] == 4);
  CHECK(j["relevance"] == json::array({true, false}));
  fs::remove_all(dir);
}

TEST_CASE("judge_triplets runs a scripted judge in parallel") {
  const auto dir = synthetic::fresh_dir("judge-run");
  const auto fx = synthetic::make_corpus(dir, 6, {"melanoma", "nevus"});
  std::vector<TripletRecord> ts;
  for (const auto& s : fx.corpus.samples) {
    auto t = triplet(s.gold_index == 0 ? 2 : 4, fx.corpus.class_set.label(s.gold_index));
    t.sample_id = t.dialogue.sample_id = s.id;
    t.image_ref = s.image_ref;
    ts.push_back(t);
  }
  ts[5].dialogue.turns.push_back({5, "Q5?", "A5", {}});
  const auto judge = make_backend(parse_backend_config(json::parse(R"({"rules":[
    {"role":"judge","key":"contains:For each of the 2 dialogue pairs",
     "response":"CLINICAL RELEVANCE:\n1. YES\n2. NO\nDIALOGUE QUALITY: 4\nSYMPTOM COVERAGE: 3"},
    {"role":"judge","key":"contains:For each of the 4 dialogue pairs",
     "response":"CLINICAL RELEVANCE:\n1. YES\n2. YES\n3. YES\n4. NO\nDIALOGUE QUALITY: 5\nSYMPTOM COVERAGE: 4"},
    {"role":"judge","key":"any","response":"I refuse."}]})")));
  const auto r = judge_triplets(ts, KnowledgeBase(fx.class_config.knowledge), fx.corpus.class_set, store(), *judge,
                                fx.corpus.root, 3);
  CHECK(r.failed_ids == std::vector<std::string>{"s5"});
  REQUIRE(r.verdicts.size() == 5);
  CHECK(r.verdicts[0].sample_id == "s0");
  CHECK(r.verdicts[0].relevance == std::vector<bool>{true, false});
  CHECK(r.verdicts[1].relevance.size() == 4);
  const auto a = aggregate(r.verdicts, {});
  CHECK(a.pairs_total == 3 * 2 + 2 * 4);
  fs::remove_all(dir);
}
