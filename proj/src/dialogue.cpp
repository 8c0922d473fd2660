#include "pcdf/dialogue.hpp"

#include "pcdf/error.hpp"

namespace pcdf {

std::string_view to_string(TurnFlag f) {
  switch (f) {
    case TurnFlag::multi_question: return "multi_question";
    case TurnFlag::over_15_words: return "over_15_words";
    case TurnFlag::leakage_suspect: return "leakage_suspect";
    case TurnFlag::empty_retry_used: return "empty_retry_used";
  }
  return "";
}

TurnFlag parse_turn_flag(std::string_view s) {
  for (auto f : {TurnFlag::multi_question, TurnFlag::over_15_words, TurnFlag::leakage_suspect,
                 TurnFlag::empty_retry_used}) {
    if (to_string(f) == s) return f;
  }
  throw FormatError("unknown turn flag '" + std::string(s) + "'");
}

}  // namespace pcdf
