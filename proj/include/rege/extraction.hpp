#pragma once

#include <array>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rege/lexicon.hpp"
#include "rege/text.hpp"

namespace rege {

struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0; // half-open, whitespace-trimmed
};

namespace detail {

inline const std::unordered_set<std::string>& sentence_guard_words() {
  // Lowercased abbreviations whose trailing '.' does not end a sentence.
  // Dotted forms keep their inner dots ("e.g", "i.e").
  static const std::unordered_set<std::string> guards = {
      "e.g", "i.e", "etc", "cf",  "vs",  "al",     "mr",  "mrs", "ms",
      "dr",  "prof", "st", "jr",  "sr",  "fig",    "figs", "approx",
      "a.m", "p.m",  "u.s", "dept", "inc", "est"};
  return guards;
}

inline bool period_is_guarded(std::string_view text, std::size_t dot) {
  // Part of a decimal, an acronym, or a filename-like run: ".x" with no gap.
  if (dot + 1 < text.size() && is_word_char(static_cast<unsigned char>(text[dot + 1])))
    return true;
  // Word (letters and interior dots) ending at the period.
  std::size_t b = dot;
  while (b > 0) {
    unsigned char c = static_cast<unsigned char>(text[b - 1]);
    if (std::isalpha(c) != 0 || c == '.')
      --b;
    else
      break;
  }
  if (b == dot)
    return false;
  std::string word = to_lower(text.substr(b, dot - b));
  while (!word.empty() && word.front() == '.')
    word.erase(word.begin());
  return sentence_guard_words().count(word) > 0;
}

} // namespace detail

// Splits on '.', '!' and '?' with an abbreviation guard list. Spans are
// trimmed substrings of the input: concatenating them with the gaps between
// them reconstructs the text.
inline std::vector<SentenceSpan> split_sentences(std::string_view text) {
  std::vector<SentenceSpan> spans;
  auto emit = [&](std::size_t b, std::size_t e) {
    while (b < e && std::isspace(static_cast<unsigned char>(text[b])))
      ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1])))
      --e;
    if (b < e)
      spans.push_back({b, e});
  };

  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    bool terminator = (c == '!' || c == '?') ||
                      (c == '.' && !detail::period_is_guarded(text, i));
    if (!terminator) {
      ++i;
      continue;
    }
    emit(start, i);
    while (i < text.size() && (text[i] == '.' || text[i] == '!' || text[i] == '?'))
      ++i;
    start = i;
  }
  emit(start, text.size());
  return spans;
}

inline std::vector<std::string> sentence_strings(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& sp : split_sentences(text))
    out.emplace_back(text.substr(sp.begin, sp.end - sp.begin));
  return out;
}

namespace detail {

// Cues containing an apostrophe ("n't") match as token suffixes; all
// others match whole tokens.
inline bool has_negation_cue(const std::vector<std::string>& tokens,
                             std::span<const std::string> cues) {
  for (const auto& cue : cues) {
    bool suffix = cue.find('\'') != std::string::npos;
    for (const auto& tok : tokens) {
      if (suffix) {
        if (tok.size() >= cue.size() &&
            tok.compare(tok.size() - cue.size(), cue.size(), cue) == 0)
          return true;
      } else if (tok == cue) {
        return true;
      }
    }
  }
  return false;
}

struct TokenizedPhrases {
  std::vector<std::vector<std::string>> phrases;
};

inline TokenizedPhrases tokenize_phrases(const std::vector<std::string>& entries) {
  TokenizedPhrases out;
  out.phrases.reserve(entries.size());
  for (const auto& e : entries)
    out.phrases.push_back(word_tokens_lower(e));
  return out;
}

inline bool parse_au_pattern_token(const std::string& tok, int& id_out) {
  // "au<digits>", optionally with a possessive tail ("au12's").
  std::string core = tok;
  if (auto apos = core.find('\''); apos != std::string::npos)
    core.resize(apos);
  if (core.size() < 3 || core.compare(0, 2, "au") != 0)
    return false;
  int id = 0;
  for (std::size_t i = 2; i < core.size(); ++i) {
    char c = core[i];
    if (c < '0' || c > '9')
      return false;
    id = id * 10 + (c - '0');
  }
  id_out = id;
  return true;
}

} // namespace detail

struct AuLabelSet {
  std::set<int> active; // subset of the 12 evaluated ids

  bool operator==(const AuLabelSet&) const = default;
};

struct ExtractionTrace {
  std::vector<std::string> sentences_kept;
  std::vector<std::string> sentences_dropped_as_negated;
  std::array<int, kNumEmotions> per_emotion_counts{};
  std::vector<std::pair<std::string, int>> matched_au_mentions;
  bool zero_count_fallback = false;

  int count(Emotion e) const { return per_emotion_counts[static_cast<int>(e)]; }
};

// A sentence is dropped iff it contains a negation cue and at least one
// emotion synonym. Order is preserved; the operation is idempotent.
inline std::pair<std::vector<std::string>, std::vector<std::string>>
drop_negated_sentences(const std::vector<std::string>& sentences,
                       const EmotionLexicon& lexicon) {
  std::array<detail::TokenizedPhrases, kNumEmotions> syn;
  for (int e = 0; e < kNumEmotions; ++e)
    syn[e] = detail::tokenize_phrases(lexicon.synonyms[e]);

  std::vector<std::string> kept, dropped;
  for (const auto& sent : sentences) {
    auto tokens = word_tokens_lower(sent);
    bool negated = false;
    if (detail::has_negation_cue(tokens, lexicon.negation_cues)) {
      for (int e = 0; e < kNumEmotions && !negated; ++e)
        for (const auto& phrase : syn[e].phrases)
          if (count_token_seq(tokens, phrase) > 0) {
            negated = true;
            break;
          }
    }
    (negated ? dropped : kept).push_back(sent);
  }
  return {std::move(kept), std::move(dropped)};
}

// Synonym-frequency voting over non-negated sentences. Ties break in the
// fixed order happiness, sadness, anger, fear, disgust, surprise, neutral;
// a zero total falls back to neutral and flags the trace.
inline std::pair<Emotion, ExtractionTrace> extract_emotion(std::string_view text,
                                                           const EmotionLexicon& lexicon) {
  ExtractionTrace trace;
  auto [kept, dropped] = drop_negated_sentences(sentence_strings(text), lexicon);
  trace.sentences_kept = kept;
  trace.sentences_dropped_as_negated = std::move(dropped);

  std::array<detail::TokenizedPhrases, kNumEmotions> syn;
  for (int e = 0; e < kNumEmotions; ++e)
    syn[e] = detail::tokenize_phrases(lexicon.synonyms[e]);

  for (const auto& sent : kept) {
    auto tokens = word_tokens_lower(sent);
    for (int e = 0; e < kNumEmotions; ++e)
      for (const auto& phrase : syn[e].phrases)
        trace.per_emotion_counts[e] += count_token_seq(tokens, phrase);
  }

  int best = 0;
  int total = 0;
  for (int e = 0; e < kNumEmotions; ++e) {
    total += trace.per_emotion_counts[e];
    if (trace.per_emotion_counts[e] > trace.per_emotion_counts[best])
      best = e;
  }
  if (total == 0) {
    trace.zero_count_fallback = true;
    return {Emotion::neutral, std::move(trace)};
  }
  return {static_cast<Emotion>(best), std::move(trace)};
}

// An AU is active iff a kept sentence mentions "AU<id>" (digit-boundary
// safe) or one of its alias phrases. Sentences that negate a mentioned AU
// are excluded first, mirroring the emotion path. Ids outside the 12
// evaluated AUs are recorded in the trace but never activated.
inline std::pair<AuLabelSet, ExtractionTrace>
extract_aus(std::string_view text, const AuAliasTable& aliases,
            std::span<const std::string> negation_cues = {}) {
  static const std::vector<std::string> fallback_cues = default_negation_cues();
  if (negation_cues.empty())
    negation_cues = fallback_cues;

  std::vector<std::pair<int, detail::TokenizedPhrases>> alias_tok;
  for (const auto& [id, list] : aliases.entries)
    alias_tok.emplace_back(id, detail::tokenize_phrases(list));

  struct Mention {
    std::string span;
    int id;
  };
  auto find_mentions = [&](const std::vector<std::string>& tokens) {
    std::vector<Mention> mentions;
    for (const auto& tok : tokens) {
      int id = 0;
      if (detail::parse_au_pattern_token(tok, id))
        mentions.push_back({tok, id});
    }
    for (const auto& [id, phrases] : alias_tok)
      for (std::size_t p = 0; p < phrases.phrases.size(); ++p) {
        int n = count_token_seq(tokens, phrases.phrases[p]);
        for (int k = 0; k < n; ++k)
          mentions.push_back({aliases.entries.at(id)[p], id});
      }
    return mentions;
  };

  ExtractionTrace trace;
  AuLabelSet labels;
  for (const auto& sent : sentence_strings(text)) {
    auto tokens = word_tokens_lower(sent);
    auto mentions = find_mentions(tokens);
    bool negated = !mentions.empty() && detail::has_negation_cue(tokens, negation_cues);
    if (negated) {
      trace.sentences_dropped_as_negated.push_back(sent);
      continue;
    }
    trace.sentences_kept.push_back(sent);
    for (auto& m : mentions) {
      trace.matched_au_mentions.emplace_back(m.span, m.id);
      if (is_evaluated_au(m.id))
        labels.active.insert(m.id);
    }
  }
  return {std::move(labels), std::move(trace)};
}

} // namespace rege
