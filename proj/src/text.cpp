// SPDX-License-Identifier: Apache-2.0
#include "s2kg/text.hpp"

#include <algorithm>

namespace s2kg::text {

char32_t next_code_point(std::string_view s, std::size_t& pos) {
  const auto byte = [&](std::size_t i) { return static_cast<unsigned char>(s[i]); };
  const unsigned char lead = byte(pos);
  std::size_t extra = 0;
  char32_t cp = 0;
  if (lead < 0x80) {
    ++pos;
    return lead;
  } else if ((lead & 0xE0) == 0xC0) {
    extra = 1;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    extra = 2;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    extra = 3;
    cp = lead & 0x07;
  } else {
    ++pos;
    return 0xFFFD;
  }
  for (std::size_t i = 1; i <= extra; ++i) {
    if (pos + i >= s.size() || (byte(pos + i) & 0xC0) != 0x80) {
      ++pos;
      return 0xFFFD;
    }
    cp = (cp << 6) | (byte(pos + i) & 0x3F);
  }
  pos += extra + 1;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::vector<char32_t> code_points(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  for (std::size_t pos = 0; pos < s.size();) out.push_back(next_code_point(s, pos));
  return out;
}

std::size_t length_in_code_points(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t pos = 0; pos < s.size(); ++n) next_code_point(s, pos);
  return n;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x2E80 && cp <= 0x2FDF) ||   // radicals
         (cp >= 0x3000 && cp <= 0x303F) ||   // CJK symbols and punctuation
         (cp >= 0x3040 && cp <= 0x30FF) ||   // kana
         (cp >= 0x3100 && cp <= 0x31FF) ||
         (cp >= 0x3400 && cp <= 0x4DBF) ||   // extension A
         (cp >= 0x4E00 && cp <= 0x9FFF) ||   // unified ideographs
         (cp >= 0xAC00 && cp <= 0xD7AF) ||   // hangul
         (cp >= 0xF900 && cp <= 0xFAFF) ||
         (cp >= 0xFE30 && cp <= 0xFE4F) ||
         (cp >= 0xFF00 && cp <= 0xFFEF) ||   // fullwidth forms
         (cp >= 0x20000 && cp <= 0x2FA1F);
}

bool is_space(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' || cp == '\f' ||
         cp == 0x3000 || cp == 0xA0;
}

std::vector<std::string> segment(std::string_view s) {
  std::vector<std::string> tokens;
  std::string run;
  auto flush = [&] {
    if (!run.empty()) tokens.push_back(std::move(run));
    run.clear();
  };
  for (std::size_t pos = 0; pos < s.size();) {
    const char32_t cp = next_code_point(s, pos);
    if (is_space(cp)) {
      flush();
    } else if (is_cjk(cp)) {
      flush();
      std::string one;
      append_utf8(one, cp);
      tokens.push_back(std::move(one));
    } else {
      append_utf8(run, cp);
    }
  }
  flush();
  return tokens;
}

std::size_t count_tokens(std::string_view s) {
  std::size_t n = 0;
  bool in_run = false;
  for (std::size_t pos = 0; pos < s.size();) {
    const char32_t cp = next_code_point(s, pos);
    if (is_space(cp)) {
      in_run = false;
    } else if (is_cjk(cp)) {
      in_run = false;
      ++n;
    } else if (!in_run) {
      in_run = true;
      ++n;
    }
  }
  return n;
}

namespace {

bool starts_cjk(const std::string& token) {
  std::size_t pos = 0;
  return !token.empty() && is_cjk(next_code_point(token, pos));
}

}  // namespace

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  bool prev_plain = false;
  for (const auto& t : tokens) {
    const bool plain = !starts_cjk(t);
    if (plain && prev_plain) out.push_back(' ');
    out += t;
    prev_plain = plain;
  }
  return out;
}

std::string normalize_for_match(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t pos = 0; pos < s.size();) {
    char32_t cp = next_code_point(s, pos);
    if (is_space(cp)) continue;
    if (cp >= 0xFF01 && cp <= 0xFF5E) cp -= 0xFEE0;
    append_utf8(out, cp);
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t begin = s.size();
  std::size_t end = 0;
  for (std::size_t pos = 0; pos < s.size();) {
    const std::size_t start = pos;
    if (!is_space(next_code_point(s, pos))) {
      begin = std::min(begin, start);
      end = pos;
    }
  }
  return begin < end ? std::string(s.substr(begin, end - begin)) : std::string();
}

}  // namespace s2kg::text
