#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rege/errors.hpp"
#include "rege/records.hpp"
#include "rege/text.hpp"

namespace rege {

// The seven categories, in tie-break priority order.
enum class Emotion : int {
  happiness = 0,
  sadness,
  anger,
  fear,
  disgust,
  surprise,
  neutral
};

constexpr int kNumEmotions = 7;

constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "happiness", "sadness", "anger", "fear", "disgust", "surprise", "neutral"};

inline std::string to_string(Emotion e) {
  return std::string(kEmotionNames[static_cast<int>(e)]);
}

inline Emotion emotion_from_string(std::string_view s) {
  for (int i = 0; i < kNumEmotions; ++i)
    if (kEmotionNames[i] == s)
      return static_cast<Emotion>(i);
  throw data_error("unknown emotion '" + std::string(s) + "'");
}

// The 12 AUs used for evaluation.
constexpr std::array<int, 12> kEvaluatedAus = {1, 2, 4, 5, 6, 10, 12, 17, 24, 25, 26, 43};

inline bool is_evaluated_au(int id) {
  for (int au : kEvaluatedAus)
    if (au == id)
      return true;
  return false;
}

inline const std::vector<std::string>& default_negation_cues() {
  static const std::vector<std::string> cues = {"not",  "no",   "n't",     "never",
                                                "without", "lack", "lacks", "absence",
                                                "absent"};
  return cues;
}

struct EmotionLexicon {
  // synonyms[e] holds lowercase word/phrase entries for emotion e.
  std::array<std::vector<std::string>, kNumEmotions> synonyms;
  std::vector<std::string> negation_cues = default_negation_cues();
};

struct AuAliasTable {
  // AU id -> lowercase alias phrases ("inner brow raiser", ...).
  std::map<int, std::vector<std::string>> entries;
};

struct TemplateBank {
  Task task = Task::emotion;
  std::vector<std::string> templates;
};

namespace detail {

// Shared reader for the key/value config format:
//   key: entry, entry, entry
// '#' starts a comment, blank lines are skipped.
inline std::vector<std::pair<std::string, std::vector<std::string>>>
parse_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw io_error("cannot open config file: " + path.string());
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    auto trim = [](std::string s) {
      const char* ws = " \t\r\n";
      auto b = s.find_first_not_of(ws);
      if (b == std::string::npos)
        return std::string();
      auto e = s.find_last_not_of(ws);
      return s.substr(b, e - b + 1);
    };
    std::string stripped = trim(line);
    if (stripped.empty())
      continue;
    auto colon = stripped.find(':');
    if (colon == std::string::npos)
      throw data_error(path.string() + ": line " + std::to_string(line_no) +
                       ": expected 'key: entry, entry, ...'");
    std::string key = trim(stripped.substr(0, colon));
    std::vector<std::string> entries;
    std::stringstream ss(stripped.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::string e = trim(item);
      if (!e.empty())
        entries.push_back(e);
    }
    out.emplace_back(std::move(key), std::move(entries));
  }
  return out;
}

inline bool is_lower(const std::string& s) {
  for (char c : s)
    if (c >= 'A' && c <= 'Z')
      return false;
  return true;
}

} // namespace detail

// Lexicon file: one line per emotion (all seven required) plus an optional
// `negation:` line. Entries must be lowercase and unique across emotions.
inline EmotionLexicon load_lexicon(const std::filesystem::path& path) {
  EmotionLexicon lex;
  lex.negation_cues.clear();
  std::array<bool, kNumEmotions> seen{};
  std::unordered_map<std::string, std::string> owner; // entry -> emotion name

  for (auto& [key, entries] : detail::parse_kv_file(path)) {
    if (key == "negation") {
      for (auto& e : entries) {
        if (!detail::is_lower(e))
          throw data_error(path.string() + ": negation cue '" + e + "' is not lowercase");
        lex.negation_cues.push_back(e);
      }
      continue;
    }
    Emotion emo;
    try {
      emo = emotion_from_string(key);
    } catch (const data_error&) {
      throw data_error(path.string() + ": unknown lexicon key '" + key + "'");
    }
    seen[static_cast<int>(emo)] = true;
    for (auto& e : entries) {
      if (!detail::is_lower(e))
        throw data_error(path.string() + ": synonym '" + e + "' is not lowercase");
      auto [it, inserted] = owner.emplace(e, key);
      if (!inserted && it->second != key)
        throw data_error(path.string() + ": synonym '" + e + "' appears under both '" +
                         it->second + "' and '" + key + "'");
      lex.synonyms[static_cast<int>(emo)].push_back(e);
    }
  }
  for (int i = 0; i < kNumEmotions; ++i)
    if (!seen[i])
      throw data_error(path.string() + ": missing emotion key '" +
                       std::string(kEmotionNames[i]) + "'");
  if (lex.negation_cues.empty())
    lex.negation_cues = default_negation_cues();
  return lex;
}

// Alias file: one line per evaluated AU, key "au<id>". Exactly the 12
// evaluated ids must be present; aliases lowercase and unique across AUs.
inline AuAliasTable load_au_aliases(const std::filesystem::path& path) {
  AuAliasTable table;
  std::unordered_map<std::string, int> owner; // alias -> AU id

  for (auto& [key, entries] : detail::parse_kv_file(path)) {
    if (key.size() < 3 || key.substr(0, 2) != "au")
      throw data_error(path.string() + ": expected key 'au<id>', got '" + key + "'");
    int id = 0;
    try {
      id = std::stoi(key.substr(2));
    } catch (const std::exception&) {
      throw data_error(path.string() + ": bad AU id in key '" + key + "'");
    }
    if (!is_evaluated_au(id))
      throw data_error(path.string() + ": AU" + std::to_string(id) +
                       " is not one of the 12 evaluated AUs");
    if (table.entries.count(id))
      throw data_error(path.string() + ": duplicate key '" + key + "'");
    for (auto& e : entries) {
      if (!detail::is_lower(e))
        throw data_error(path.string() + ": alias '" + e + "' is not lowercase");
      auto [it, inserted] = owner.emplace(e, id);
      if (!inserted)
        throw data_error(path.string() + ": alias '" + e + "' appears under both AU" +
                         std::to_string(it->second) + " and AU" + std::to_string(id));
    }
    table.entries[id] = entries;
  }
  for (int au : kEvaluatedAus)
    if (!table.entries.count(au))
      throw data_error(path.string() + ": missing entry for AU" + std::to_string(au));
  return table;
}

// Template file: one instruction per line, '#' comments allowed.
inline TemplateBank load_templates(const std::filesystem::path& path, Task task) {
  std::ifstream in(path);
  if (!in)
    throw io_error("cannot open template file: " + path.string());
  TemplateBank bank;
  bank.task = task;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line[0] == '#')
      continue;
    if (!is_valid_utf8(line))
      throw data_error(path.string() + ": template is not valid UTF-8");
    if (line.back() != '?')
      throw data_error(path.string() + ": template is not a question: '" + line + "'");
    bank.templates.push_back(line);
  }
  if (bank.templates.empty())
    throw data_error(path.string() + ": template bank is empty");
  return bank;
}

// Deterministic draw: the same (bank, seed) always yields the same template.
inline const std::string& sample_instruction(const TemplateBank& bank, std::uint64_t seed) {
  if (bank.templates.empty())
    throw data_error("cannot sample from an empty template bank");
  std::mt19937_64 rng(seed);
  return bank.templates[rng() % bank.templates.size()];
}

} // namespace rege
