// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace s2kg::text {

// Decodes one UTF-8 code point starting at `pos` and advances `pos`.
// Malformed bytes decode to U+FFFD and consume a single byte.
char32_t next_code_point(std::string_view s, std::size_t& pos);
void append_utf8(std::string& out, char32_t cp);
std::vector<char32_t> code_points(std::string_view s);
std::size_t length_in_code_points(std::string_view s);

// CJK ideographs, CJK punctuation, kana, hangul and fullwidth forms.
bool is_cjk(char32_t cp);
bool is_space(char32_t cp);

// Token segmentation shared by vocabulary building, corpus statistics and
// BLEU: every CJK code point is its own token; any other run of
// non-whitespace code points is one token.
std::vector<std::string> segment(std::string_view s);
std::size_t count_tokens(std::string_view s);

// Inverse of segment() for canonically spaced text: a single space between
// two adjacent non-CJK tokens, nothing otherwise.
std::string join_tokens(const std::vector<std::string>& tokens);

// Whitespace (ASCII and ideographic) removed, fullwidth ASCII folded to ASCII.
std::string normalize_for_match(std::string_view s);

std::string trim(std::string_view s);

}  // namespace s2kg::text
