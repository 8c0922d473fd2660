#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace pcdf {

// Advisory validator output attached to a turn. Text is never edited.
enum class TurnFlag { multi_question, over_15_words, leakage_suspect, empty_retry_used };

std::string_view to_string(TurnFlag f);
TurnFlag parse_turn_flag(std::string_view s);

// One doctor question / patient answer exchange, 1-based index.
struct Turn {
  int index = 0;
  std::string question;
  std::string answer;
  std::set<TurnFlag> flags;

  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string sample_id;
  std::vector<Turn> turns;

  bool operator==(const Dialogue&) const = default;
};

}  // namespace pcdf
