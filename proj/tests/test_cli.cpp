#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rege/lexicon.hpp"
#include "rege/records.hpp"
#include "rege/toy/config.hpp"

#include "oracle_helpers.hpp"
#include "synthetic_text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string bin_path() {
  const char* env = std::getenv("REGE_BENCH_BIN");
  REQUIRE(env != nullptr);
  return env;
}

CliResult run_cli(const std::string& args, const fs::path& dir) {
  fs::path out = dir / "stdout.txt";
  fs::path err = dir / "stderr.txt";
  std::string cmd = bin_path() + " " + args + " > " + out.string() + " 2> " + err.string();
  int rc = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WEXITSTATUS(rc);
  res.out = oracle::read_text(out);
  res.err = oracle::read_text(err);
  return res;
}

fs::path write_emotion_fixture(const fs::path& dir, int n) {
  auto lexicon = rege::load_lexicon(oracle::data_dir() / "emotion_lexicon.txt");
  std::mt19937_64 rng(2025);
  std::vector<rege::SampleRecord> records;
  for (int i = 0; i < n; ++i) {
    auto desc = synthetic_text::make_emotion_description(lexicon, rng);
    rege::SampleRecord rec;
    rec.id = "cli-" + std::to_string(i);
    rec.task = rege::Task::emotion;
    rec.instruction = "What is the emotion in this face?";
    rec.reference = desc.text;
    records.push_back(std::move(rec));
  }
  fs::path path = dir / "refs.jsonl";
  rege::write_records(path, records);
  return path;
}

std::string common_flags() {
  auto data = oracle::data_dir();
  return " --lexicon " + (data / "emotion_lexicon.txt").string() + " --aliases " +
         (data / "au_aliases.txt").string();
}

} // namespace

TEST_CASE("cli: --help exits 0") {
  auto dir = oracle::make_temp_dir("cli_help");
  CHECK(run_cli("--help", dir).exit_code == 0);
  CHECK(run_cli("score --help", dir).exit_code == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli: unknown flag yields exit 64 and a machine-readable error") {
  auto dir = oracle::make_temp_dir("cli_usage");
  auto res = run_cli("score --nonsense", dir);
  CHECK(res.exit_code == 64);
  auto err = json::parse(res.err);
  CHECK(err["error"]["code"] == 64);
  CHECK(err["error"]["kind"] == "usage");
  fs::remove_all(dir);
}

TEST_CASE("cli: missing input file yields exit 66") {
  auto dir = oracle::make_temp_dir("cli_noinput");
  auto res = run_cli("score --task emotion --refs /nonexistent.jsonl --hyps /nonexistent.jsonl" +
                         common_flags() + " --out " + (dir / "r.json").string(),
                     dir);
  CHECK(res.exit_code == 66);
  auto err = json::parse(res.err);
  CHECK(err["error"]["kind"] == "io");
  fs::remove_all(dir);
}

TEST_CASE("cli: self-scoring reports S_rege 200.0") {
  auto dir = oracle::make_temp_dir("cli_self");
  auto refs = write_emotion_fixture(dir, 25);
  fs::path report = dir / "report.json";
  auto res = run_cli("score --task emotion --refs " + refs.string() + " --hyps " +
                         refs.string() + common_flags() + " --out " + report.string(),
                     dir);
  REQUIRE(res.exit_code == 0);
  auto doc = json::parse(oracle::read_text(report));
  CHECK(doc["report"]["s_re"] == 1.0);
  CHECK(doc["report"]["s_ge"] == 1.0);
  CHECK(doc["report"]["s_rege"] == 200.0);
  CHECK(doc["report"]["n_samples"] == 25);
  CHECK(doc["manifest"]["subcommand"] == "score");
  CHECK(doc["manifest"]["inputs"].contains("refs"));
  fs::remove_all(dir);
}

TEST_CASE("cli: extract writes a manifest line plus one line per record") {
  auto dir = oracle::make_temp_dir("cli_extract");
  auto refs = write_emotion_fixture(dir, 10);
  fs::path out = dir / "labels.jsonl";
  auto res = run_cli("extract --task emotion --in " + refs.string() + common_flags() +
                         " --out " + out.string(),
                     dir);
  REQUIRE(res.exit_code == 0);
  std::ifstream in(out);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    if (lines == 0) {
      CHECK(j.contains("manifest"));
    } else {
      CHECK(j.contains("id"));
      CHECK(j.contains("label"));
      CHECK(j.contains("trace"));
    }
    ++lines;
  }
  CHECK(lines == 11);
  fs::remove_all(dir);
}

TEST_CASE("cli: score names the record whose hypothesis is missing") {
  auto dir = oracle::make_temp_dir("cli_missing_hyp");
  auto refs = write_emotion_fixture(dir, 5);
  // Hypothesis file covers only the first three ids.
  auto all = rege::load_records(refs, rege::Task::emotion);
  all.resize(3);
  fs::path hyps = dir / "hyps.jsonl";
  rege::write_records(hyps, all);
  auto res = run_cli("score --task emotion --refs " + refs.string() + " --hyps " +
                         hyps.string() + common_flags() + " --out " +
                         (dir / "r.json").string(),
                     dir);
  CHECK(res.exit_code == 65);
  auto err = json::parse(res.err);
  CHECK(std::string(err["error"]["message"]).find("cli-3") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli: an explicit hypothesis field beats the reference fallback") {
  auto dir = oracle::make_temp_dir("cli_hyp_field");
  std::vector<rege::SampleRecord> refs = {{"r0", rege::Task::emotion, "",
                                           "A beaming joyful smile all around.",
                                           std::nullopt}};
  std::vector<rege::SampleRecord> hyps = {{"r0", rege::Task::emotion, "",
                                           "A beaming joyful smile all around.",
                                           "Gloomy tearful sorrow instead."}};
  fs::path refs_p = dir / "refs.jsonl", hyps_p = dir / "hyps.jsonl";
  rege::write_records(refs_p, refs);
  rege::write_records(hyps_p, hyps);
  auto res = run_cli("score --task emotion --refs " + refs_p.string() + " --hyps " +
                         hyps_p.string() + common_flags() + " --out " +
                         (dir / "r.json").string(),
                     dir);
  REQUIRE(res.exit_code == 0);
  auto doc = json::parse(oracle::read_text(dir / "r.json"));
  CHECK(doc["report"]["s_re"] == 0.0); // sadness predicted, happiness gold
  CHECK(doc["report"]["s_ge"] == 0.0); // disjoint vocabulary
  fs::remove_all(dir);
}

TEST_CASE("cli: au task without --aliases is a data error") {
  auto dir = oracle::make_temp_dir("cli_no_aliases");
  auto data = oracle::data_dir();
  auto res = run_cli("score --task au --refs x.jsonl --hyps x.jsonl --lexicon " +
                         (data / "emotion_lexicon.txt").string() + " --out " +
                         (dir / "r.json").string(),
                     dir);
  CHECK(res.exit_code == 65);
  fs::remove_all(dir);
}

TEST_CASE("cli: self-scoring with rouge-1 also reaches the bound") {
  auto dir = oracle::make_temp_dir("cli_rouge1");
  auto refs = write_emotion_fixture(dir, 10);
  fs::path report = dir / "report1.json";
  auto res = run_cli("score --task emotion --refs " + refs.string() + " --hyps " +
                         refs.string() + common_flags() + " --rouge 1 --out " +
                         report.string(),
                     dir);
  REQUIRE(res.exit_code == 0);
  auto doc = json::parse(oracle::read_text(report));
  CHECK(doc["report"]["rouge_variant"] == "1");
  CHECK(doc["report"]["s_ge"] == 1.0);
  fs::remove_all(dir);
}

TEST_CASE("cli: extract handles the au task") {
  auto dir = oracle::make_temp_dir("cli_extract_au");
  std::vector<rege::SampleRecord> records;
  records.push_back({"a1", rege::Task::au, "", "AU12 with parted lips. No AU4 here.",
                     std::nullopt});
  fs::path refs = dir / "au.jsonl";
  rege::write_records(refs, records);
  fs::path out = dir / "au_labels.jsonl";
  auto res = run_cli("extract --task au --in " + refs.string() + common_flags() + " --out " +
                         out.string(),
                     dir);
  REQUIRE(res.exit_code == 0);
  std::ifstream in(out);
  std::string manifest_line, record_line;
  REQUIRE(std::getline(in, manifest_line));
  REQUIRE(std::getline(in, record_line));
  auto j = json::parse(record_line);
  CHECK(j["aus"] == json::array({12, 25}));
  CHECK(j["trace"]["sentences_dropped_as_negated"].size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli: report reproduces the published row formatting") {
  // A score file shaped like a published per-AU row must print the
  // one-decimal average 56.3 and combined total 91.5.
  auto dir = oracle::make_temp_dir("cli_report_row");
  const std::vector<double> row = {72.8, 37.3, 79.9, 67.3, 69.9, 41.7,
                                   63.6, 56.8, 55.6, 73.4, 56.8, 0.0};
  json per_au;
  double mean = 0;
  for (std::size_t i = 0; i < rege::kEvaluatedAus.size(); ++i) {
    per_au[std::to_string(rege::kEvaluatedAus[i])] = row[i] / 100.0;
    mean += row[i] / 100.0;
  }
  mean /= 12.0;
  json doc;
  doc["manifest"] = {{"subcommand", "score"}};
  doc["report"] = {{"task", "au"},       {"rouge_variant", "l"},
                   {"s_re", mean},       {"s_ge", 0.352},
                   {"s_rege", 100.0 * mean + 35.2}, {"per_au_f1", per_au},
                   {"n_samples", 325},   {"n_fallbacks", 0}};
  fs::path score = dir / "row.json";
  oracle::write_text(score, doc.dump(2));

  auto res = run_cli("report " + score.string(), dir);
  REQUIRE(res.exit_code == 0);
  CHECK(res.out.find("56.3") != std::string::npos);
  CHECK(res.out.find("91.5") != std::string::npos);
  CHECK(res.out.find("35.2") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli: report renders rows and rejects mixed tasks") {
  auto dir = oracle::make_temp_dir("cli_report");
  auto refs = write_emotion_fixture(dir, 12);
  fs::path r1 = dir / "a.json";
  REQUIRE(run_cli("score --task emotion --refs " + refs.string() + " --hyps " + refs.string() +
                      common_flags() + " --out " + r1.string(),
                  dir)
              .exit_code == 0);

  auto res = run_cli("report " + r1.string(), dir);
  REQUIRE(res.exit_code == 0);
  CHECK(res.out.find("S_rege") != std::string::npos);
  CHECK(res.out.find("200.0") != std::string::npos);

  // AU-task fixture scored against itself, then mixed with the emotion row.
  auto aliases = rege::load_au_aliases(oracle::data_dir() / "au_aliases.txt");
  std::mt19937_64 rng(4);
  std::vector<rege::SampleRecord> au_records;
  for (int i = 0; i < 8; ++i) {
    auto desc = synthetic_text::make_au_description(aliases, rng);
    au_records.push_back({"au-" + std::to_string(i), rege::Task::au, "", desc.text,
                          std::nullopt});
  }
  fs::path au_refs = dir / "au_refs.jsonl";
  rege::write_records(au_refs, au_records);
  fs::path r2 = dir / "b.json";
  REQUIRE(run_cli("score --task au --refs " + au_refs.string() + " --hyps " +
                      au_refs.string() + common_flags() + " --out " + r2.string(),
                  dir)
              .exit_code == 0);

  auto mixed = run_cli("report " + r1.string() + " " + r2.string(), dir);
  CHECK(mixed.exit_code == 65);
  fs::remove_all(dir);
}

TEST_CASE("cli: score output is byte-identical across jobs and repeat runs") {
  auto dir = oracle::make_temp_dir("cli_det");
  auto refs = write_emotion_fixture(dir, 30);
  auto run_score = [&](const std::string& name, int jobs) {
    fs::path out = dir / name;
    REQUIRE(run_cli("score --task emotion --refs " + refs.string() + " --hyps " +
                        refs.string() + common_flags() + " --jobs " + std::to_string(jobs) +
                        " --out " + out.string(),
                    dir)
                .exit_code == 0);
    return oracle::read_text(out);
  };
  auto a = run_score("a.json", 1);
  auto b = run_score("b.json", 1);
  auto c = run_score("c.json", 8);
  CHECK(a == b);
  CHECK(a == c);
  fs::remove_all(dir);
}

TEST_CASE("cli: toy-train with zero steps writes init audits and exits 0") {
  auto dir = oracle::make_temp_dir("cli_toy");
  fs::path out = dir / "run.json";
  auto res = run_cli("toy-train --steps 0 --seed 5 --out " + out.string(), dir);
  REQUIRE(res.exit_code == 0);
  auto doc = json::parse(oracle::read_text(out));
  CHECK(doc["losses"].empty());
  CHECK(doc["audits"]["init"]["zero_adapter_identity"] == true);
  CHECK(doc["audits"]["init"]["rank_audit"].size() == 4); // 2 layers x (q, v)
  CHECK(doc["audits"]["final"]["frozen_unchanged"] == true);
  CHECK(doc["manifest"]["subcommand"] == "toy-train");
  fs::remove_all(dir);
}

TEST_CASE("cli: toy-train loads the shipped configs and runs the ablation grid") {
  auto dir = oracle::make_temp_dir("cli_toy_cfg");
  auto desk = oracle::data_dir() / "toy_desk.json";
  fs::path out = dir / "run.json";
  auto res = run_cli("toy-train --config " + desk.string() +
                         " --steps 2 --ablate --ablate-steps 2 --out " + out.string(),
                     dir);
  REQUIRE(res.exit_code == 0);
  auto doc = json::parse(oracle::read_text(out));
  CHECK(doc["losses"].size() == 2);
  CHECK(doc["ablation"]["cells"].size() == 7);
  CHECK(doc["ablation"]["best_cell"].is_string());
  CHECK(doc["config"]["lora_rank"] == 8);

  // The production preset must parse and validate as well.
  CHECK_NOTHROW(rege::toy::load_config(oracle::data_dir() / "toy_production_preset.json"));
  fs::remove_all(dir);
}
