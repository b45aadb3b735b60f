#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "rege/errors.hpp"
#include "rege/extraction.hpp"
#include "rege/lexicon.hpp"
#include "rege/records.hpp"
#include "rege/text.hpp"

namespace rege {

enum class RougeVariant { l, one, two };

inline std::string to_string(RougeVariant v) {
  switch (v) {
  case RougeVariant::l: return "l";
  case RougeVariant::one: return "1";
  default: return "2";
  }
}

inline RougeVariant rouge_variant_from_string(std::string_view s) {
  if (s == "l" || s == "L")
    return RougeVariant::l;
  if (s == "1")
    return RougeVariant::one;
  if (s == "2")
    return RougeVariant::two;
  throw data_error("unknown ROUGE variant '" + std::string(s) + "' (expected l, 1 or 2)");
}

struct ConfusionCounts {
  struct AuCell {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
  };
  std::map<int, AuCell> per_au; // keyed by the 12 evaluated ids
  std::int64_t emotion_hits = 0;
  std::int64_t emotion_total = 0;

  ConfusionCounts() {
    for (int au : kEvaluatedAus)
      per_au[au] = {};
  }

  void add_emotion(Emotion pred, Emotion gold) {
    emotion_hits += (pred == gold) ? 1 : 0;
    ++emotion_total;
  }

  void add_au(const AuLabelSet& pred, const AuLabelSet& gold) {
    for (int au : kEvaluatedAus) {
      bool p = pred.active.count(au) > 0;
      bool g = gold.active.count(au) > 0;
      if (p && g)
        ++per_au[au].tp;
      else if (p)
        ++per_au[au].fp;
      else if (g)
        ++per_au[au].fn;
    }
  }
};

// Fraction of positions where pred equals gold.
inline double accuracy(const std::vector<Emotion>& pred, const std::vector<Emotion>& gold) {
  if (pred.size() != gold.size())
    throw data_error("accuracy: length mismatch (" + std::to_string(pred.size()) + " vs " +
                     std::to_string(gold.size()) + ")");
  if (pred.empty())
    throw data_error("accuracy: empty input");
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    hits += (pred[i] == gold[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Per-AU F1 = 2tp / (2tp + fp + fn); an AU that never occurs on either
// side scores 0, matching the convention of published per-AU tables.
inline std::map<int, double> per_au_f1(const std::vector<AuLabelSet>& pred,
                                       const std::vector<AuLabelSet>& gold) {
  if (pred.size() != gold.size())
    throw data_error("per_au_f1: length mismatch");
  ConfusionCounts counts;
  for (std::size_t i = 0; i < pred.size(); ++i)
    counts.add_au(pred[i], gold[i]);
  std::map<int, double> f1;
  for (int au : kEvaluatedAus) {
    const auto& c = counts.per_au[au];
    std::int64_t denom = 2 * c.tp + c.fp + c.fn;
    f1[au] = denom > 0 ? 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom) : 0.0;
  }
  return f1;
}

// Unweighted mean over the 12 evaluated AUs.
inline double average_f1(const std::map<int, double>& per_au) {
  double sum = 0.0;
  for (int au : kEvaluatedAus) {
    auto it = per_au.find(au);
    if (it == per_au.end())
      throw data_error("average_f1: missing AU" + std::to_string(au));
    sum += it->second;
  }
  return sum / static_cast<double>(kEvaluatedAus.size());
}

namespace detail {

// LCS length with a rolling two-row table.
inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  if (a.empty() || b.empty())
    return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double f_measure(double precision, double recall) {
  if (precision <= 0.0 && recall <= 0.0)
    return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline std::map<std::string, std::int64_t> ngram_counts(const std::vector<std::string>& tokens,
                                                        std::size_t n) {
  std::map<std::string, std::int64_t> counts;
  if (tokens.size() < n || n == 0)
    return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

} // namespace detail

// ROUGE-L F-measure over lowercased alphanumeric tokens, single reference.
inline double rouge_l(std::string_view hypothesis, std::string_view reference) {
  auto hyp = rouge_tokens(hypothesis);
  auto ref = rouge_tokens(reference);
  if (hyp.empty() || ref.empty())
    return 0.0;
  double lcs = static_cast<double>(detail::lcs_length(hyp, ref));
  double precision = lcs / static_cast<double>(hyp.size());
  double recall = lcs / static_cast<double>(ref.size());
  return detail::f_measure(precision, recall);
}

// ROUGE-N with clipped n-gram counts.
inline double rouge_n(std::string_view hypothesis, std::string_view reference, std::size_t n) {
  auto hyp_counts = detail::ngram_counts(rouge_tokens(hypothesis), n);
  auto ref_counts = detail::ngram_counts(rouge_tokens(reference), n);
  std::int64_t hyp_total = 0, ref_total = 0, overlap = 0;
  for (const auto& [k, c] : hyp_counts)
    hyp_total += c;
  for (const auto& [k, c] : ref_counts)
    ref_total += c;
  if (hyp_total == 0 || ref_total == 0)
    return 0.0;
  for (const auto& [k, c] : hyp_counts) {
    auto it = ref_counts.find(k);
    if (it != ref_counts.end())
      overlap += std::min(c, it->second);
  }
  double precision = static_cast<double>(overlap) / static_cast<double>(hyp_total);
  double recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  return detail::f_measure(precision, recall);
}

inline double rouge_score(std::string_view hypothesis, std::string_view reference,
                          RougeVariant variant) {
  switch (variant) {
  case RougeVariant::l: return rouge_l(hypothesis, reference);
  case RougeVariant::one: return rouge_n(hypothesis, reference, 1);
  default: return rouge_n(hypothesis, reference, 2);
  }
}

// Combined recognition + generation score; inputs are fractions in [0,1].
inline double rege(double s_re, double s_ge) {
  if (!(s_re >= 0.0 && s_re <= 1.0))
    throw data_error("rege: s_re out of [0,1]");
  if (!(s_ge >= 0.0 && s_ge <= 1.0))
    throw data_error("rege: s_ge out of [0,1]");
  return s_re + s_ge;
}

struct ScoreReport {
  Task task = Task::emotion;
  RougeVariant rouge_variant = RougeVariant::l;
  double s_re = 0.0;            // fraction in [0,1]
  double s_ge = 0.0;            // fraction in [0,1]
  double s_rege = 0.0;          // reported units: 100*s_re + 100*s_ge
  std::map<int, double> per_au_f1; // populated for the AU task
  std::int64_t n_samples = 0;
  std::int64_t n_fallbacks = 0; // zero-synonym emotion extractions (ref + hyp sides)
};

struct ScoreOptions {
  RougeVariant rouge_variant = RougeVariant::l;
  int jobs = 1;
};

namespace detail {

struct RecordScore {
  Emotion pred_emotion = Emotion::neutral;
  Emotion gold_emotion = Emotion::neutral;
  AuLabelSet pred_aus;
  AuLabelSet gold_aus;
  double rouge = 0.0;
  int fallbacks = 0;
};

// Values are sorted before the compensated sum, so the mean is bit-stable
// under record shuffling and independent of the worker-thread count.
inline double compensated_mean(const std::vector<RecordScore>& scores) {
  std::vector<double> values;
  values.reserve(scores.size());
  for (const auto& s : scores)
    values.push_back(s.rouge);
  std::sort(values.begin(), values.end());
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    double y = v - comp;
    double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(values.size());
}

} // namespace detail

// Scores hypotheses against references. Gold labels come from running the
// extractor on the reference text; predictions from the hypothesis text.
inline ScoreReport score_file(const std::vector<SampleRecord>& records,
                              const EmotionLexicon& lexicon, const AuAliasTable& aliases,
                              const ScoreOptions& options = {}) {
  if (records.empty())
    throw data_error("score_file: no records");
  const Task task = records.front().task;
  for (const auto& rec : records)
    if (!rec.hypothesis)
      throw data_error("score_file: record '" + rec.id + "' has no hypothesis");

  std::vector<detail::RecordScore> scores(records.size());
  auto score_one = [&](std::size_t i) {
    const auto& rec = records[i];
    detail::RecordScore rs;
    if (task == Task::emotion) {
      auto [gold, gold_trace] = extract_emotion(rec.reference, lexicon);
      auto [pred, pred_trace] = extract_emotion(*rec.hypothesis, lexicon);
      rs.gold_emotion = gold;
      rs.pred_emotion = pred;
      rs.fallbacks = (gold_trace.zero_count_fallback ? 1 : 0) +
                     (pred_trace.zero_count_fallback ? 1 : 0);
    } else {
      auto [gold, gold_trace] = extract_aus(rec.reference, aliases, lexicon.negation_cues);
      auto [pred, pred_trace] = extract_aus(*rec.hypothesis, aliases, lexicon.negation_cues);
      rs.gold_aus = std::move(gold);
      rs.pred_aus = std::move(pred);
    }
    rs.rouge = rouge_score(*rec.hypothesis, rec.reference, options.rouge_variant);
    scores[i] = std::move(rs);
  };

  int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < records.size(); ++i)
      score_one(i);
  } else {
    std::vector<std::thread> workers;
    std::size_t chunk = (records.size() + jobs - 1) / jobs;
    for (int w = 0; w < jobs; ++w) {
      std::size_t b = static_cast<std::size_t>(w) * chunk;
      std::size_t e = std::min(records.size(), b + chunk);
      if (b >= e)
        break;
      workers.emplace_back([&, b, e] {
        for (std::size_t i = b; i < e; ++i)
          score_one(i);
      });
    }
    for (auto& t : workers)
      t.join();
  }

  ScoreReport report;
  report.task = task;
  report.rouge_variant = options.rouge_variant;
  report.n_samples = static_cast<std::int64_t>(records.size());
  for (const auto& s : scores)
    report.n_fallbacks += s.fallbacks;

  if (task == Task::emotion) {
    std::vector<Emotion> pred, gold;
    pred.reserve(scores.size());
    gold.reserve(scores.size());
    for (const auto& s : scores) {
      pred.push_back(s.pred_emotion);
      gold.push_back(s.gold_emotion);
    }
    report.s_re = accuracy(pred, gold);
  } else {
    std::vector<AuLabelSet> pred, gold;
    pred.reserve(scores.size());
    gold.reserve(scores.size());
    for (const auto& s : scores) {
      pred.push_back(s.pred_aus);
      gold.push_back(s.gold_aus);
    }
    report.per_au_f1 = per_au_f1(pred, gold);
    report.s_re = average_f1(report.per_au_f1);
  }
  report.s_ge = detail::compensated_mean(scores);
  report.s_rege = 100.0 * report.s_re + 100.0 * report.s_ge;
  return report;
}

} // namespace rege
