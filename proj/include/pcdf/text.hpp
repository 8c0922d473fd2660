#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pcdf::text {

// Simple Unicode case folding for Latin (incl. Latin-1 and Extended-A),
// Greek and Cyrillic. Bytes that are not valid UTF-8 pass through unchanged.
std::string case_fold(std::string_view utf8);

// Case-fold, trim, collapse internal whitespace runs to one space and strip
// terminal punctuation. Idempotent.
std::string canonicalize(std::string_view s);

std::string_view trim(std::string_view s);
std::size_t word_count(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::vector<std::string> split_lines(std::string_view s);

bool is_word_byte(unsigned char c);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view s);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view b64);

}  // namespace pcdf::text
