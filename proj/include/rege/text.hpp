#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace rege {

// ASCII-oriented text utilities shared by the extractor and the metrics.
// Bytes >= 0x80 (UTF-8 continuation/lead bytes) are treated as word
// characters so multibyte sequences are never split mid-codepoint.

inline bool is_word_char(unsigned char c) {
  return std::isalnum(c) != 0 || c == '\'' || c >= 0x80;
}

inline char lower_ascii(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](char c) { return lower_ascii(c); });
  return out;
}

struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0; // half-open
};

// Tokens for lexicon matching: maximal runs of word characters (letters,
// digits, apostrophes), lowercased by the caller as needed. Edge
// apostrophes are quotation marks, not contractions, and are trimmed:
// "'happy'" tokenizes as "happy" while "crow's" keeps its interior tick.
inline std::vector<TokenSpan> word_token_spans(std::string_view text) {
  std::vector<TokenSpan> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t b = i;
    while (i < text.size() && is_word_char(static_cast<unsigned char>(text[i])))
      ++i;
    std::size_t e = i;
    while (b < e && text[b] == '\'')
      ++b;
    while (e > b && text[e - 1] == '\'')
      --e;
    if (b < e)
      spans.push_back({b, e});
  }
  return spans;
}

inline std::vector<std::string> word_tokens_lower(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& sp : word_token_spans(text))
    out.push_back(to_lower(text.substr(sp.begin, sp.end - sp.begin)));
  return out;
}

// Tokens for ROUGE and length filtering: runs of alphanumerics, lowercased.
// Apostrophes and punctuation act as separators ("don't" -> "don", "t").
inline std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) != 0 || c >= 0x80) {
      cur.push_back(lower_ascii(ch));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty())
    out.push_back(std::move(cur));
  return out;
}

inline bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    if (c < 0x80)
      extra = 0;
    else if ((c & 0xe0) == 0xc0 && c >= 0xc2)
      extra = 1;
    else if ((c & 0xf0) == 0xe0)
      extra = 2;
    else if ((c & 0xf8) == 0xf0 && c <= 0xf4)
      extra = 3;
    else
      return false;
    if (i + extra >= s.size() + (extra == 0 ? 1 : 0))
      return false;
    for (std::size_t j = 1; j <= extra; ++j)
      if ((static_cast<unsigned char>(s[i + j]) & 0xc0) != 0x80)
        return false;
    i += extra + 1;
  }
  return true;
}

// Number of positions where `needle` appears as a contiguous token
// subsequence of `haystack`. Overlapping occurrences all count.
inline int count_token_seq(const std::vector<std::string>& haystack,
                           const std::vector<std::string>& needle) {
  if (needle.empty() || haystack.size() < needle.size())
    return 0;
  int n = 0;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (haystack[i + j] != needle[j]) {
        ok = false;
        break;
      }
    }
    if (ok)
      ++n;
  }
  return n;
}

} // namespace rege
