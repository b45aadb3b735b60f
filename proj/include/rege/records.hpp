#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rege/errors.hpp"
#include "rege/text.hpp"

namespace rege {

enum class Task { emotion, au };

inline std::string to_string(Task t) {
  return t == Task::emotion ? "emotion" : "au";
}

inline Task task_from_string(std::string_view s) {
  if (s == "emotion")
    return Task::emotion;
  if (s == "au")
    return Task::au;
  throw data_error("unknown task '" + std::string(s) + "' (expected 'emotion' or 'au')");
}

// One benchmark item. `hypothesis` is absent in ground-truth files and
// filled in by model-output files.
struct SampleRecord {
  std::string id;
  Task task = Task::emotion;
  std::string instruction;
  std::string reference;
  std::optional<std::string> hypothesis;

  bool operator==(const SampleRecord&) const = default;
};

namespace detail {

inline SampleRecord record_from_json(const nlohmann::json& j, std::size_t line_no) {
  auto fail = [&](const std::string& what) -> data_error {
    return data_error("line " + std::to_string(line_no) + ": " + what);
  };
  if (!j.is_object())
    throw fail("record is not an object");
  SampleRecord rec;
  if (!j.contains("id") || !j["id"].is_string())
    throw fail("missing string field 'id'");
  rec.id = j["id"].get<std::string>();
  if (!j.contains("task") || !j["task"].is_string())
    throw fail("missing string field 'task'");
  try {
    rec.task = task_from_string(j["task"].get<std::string>());
  } catch (const data_error& e) {
    throw fail(e.what());
  }
  if (j.contains("instruction")) {
    if (!j["instruction"].is_string())
      throw fail("field 'instruction' is not a string");
    rec.instruction = j["instruction"].get<std::string>();
  }
  if (!j.contains("reference") || !j["reference"].is_string())
    throw fail("missing string field 'reference'");
  rec.reference = j["reference"].get<std::string>();
  if (j.contains("hypothesis")) {
    if (!j["hypothesis"].is_string())
      throw fail("field 'hypothesis' is not a string");
    rec.hypothesis = j["hypothesis"].get<std::string>();
  }
  return rec;
}

} // namespace detail

// Canonical field order: id, task, instruction, reference, hypothesis.
inline nlohmann::ordered_json record_to_json(const SampleRecord& rec) {
  nlohmann::ordered_json j;
  j["id"] = rec.id;
  j["task"] = to_string(rec.task);
  j["instruction"] = rec.instruction;
  j["reference"] = rec.reference;
  if (rec.hypothesis)
    j["hypothesis"] = *rec.hypothesis;
  return j;
}

// Line-delimited records, one JSON object per line. Rejects duplicate ids
// and records whose task does not match `task`.
inline std::vector<SampleRecord> load_records(const std::filesystem::path& path, Task task) {
  std::ifstream in(path);
  if (!in)
    throw io_error("cannot open records file: " + path.string());

  std::vector<SampleRecord> records;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw data_error(path.string() + ": line " + std::to_string(line_no) +
                       ": invalid JSON: " + e.what());
    }
    SampleRecord rec = detail::record_from_json(j, line_no);
    if (rec.task != task)
      throw data_error(path.string() + ": line " + std::to_string(line_no) + ": record '" +
                       rec.id + "' has task '" + to_string(rec.task) + "', expected '" +
                       to_string(task) + "'");
    if (!seen_ids.insert(rec.id).second)
      throw data_error(path.string() + ": duplicate record id '" + rec.id + "' at line " +
                       std::to_string(line_no));
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::string records_to_jsonl(const std::vector<SampleRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    out += record_to_json(rec).dump();
    out += '\n';
  }
  return out;
}

inline void write_records(const std::filesystem::path& path,
                          const std::vector<SampleRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw io_error("cannot open output file: " + path.string());
  out << records_to_jsonl(records);
  if (!out)
    throw io_error("write failed: " + path.string());
}

struct FilterResult {
  std::vector<SampleRecord> kept;
  std::vector<SampleRecord> dropped;
};

constexpr int kDefaultMinReferenceTokens = 3;

// Drops records whose reference is empty/whitespace or shorter than
// `min_tokens` tokens. kept + dropped partition the input in order.
inline FilterResult filter_annotations(const std::vector<SampleRecord>& records,
                                       int min_tokens = kDefaultMinReferenceTokens) {
  FilterResult res;
  for (const auto& rec : records) {
    if (static_cast<int>(rouge_tokens(rec.reference).size()) < min_tokens)
      res.dropped.push_back(rec);
    else
      res.kept.push_back(rec);
  }
  return res;
}

} // namespace rege
