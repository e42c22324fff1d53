#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ahalab/io.hpp"
#include "ahalab/report.hpp"
#include "ahalab/util.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"

using namespace ahalab;
using testsup::TempDir;
using testsup::make_record;
using njson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_lines(const std::string& body) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : body) {
    if (ch == '\n') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

fs::path write_ds(const TempDir& td, const std::string& name,
                  std::vector<TraceRecord> records, const std::string& model = "m1",
                  int g = 8, Domain domain = Domain::math) {
  RunDataset ds;
  ds.domain = domain;
  ds.model = model;
  ds.g = g;
  ds.records = std::move(records);
  std::set<int> steps;
  std::set<double> temps;
  for (const auto& r : ds.records) {
    steps.insert(r.checkpoint_step);
    temps.insert(r.temperature);
  }
  ds.checkpoint_grid.assign(steps.begin(), steps.end());
  ds.temperatures.assign(temps.begin(), temps.end());
  fs::path p = td.file(name);
  save_dataset(ds, p);
  return p;
}

bool has_manifest(const fs::path& out) {
  fs::path p = out;
  p += ".manifest.json";
  return fs::is_regular_file(p);
}

}  // namespace

TEST_CASE("config defaults, file parsing, and single-key overrides") {
  Config c;
  CHECK(c.seed == 714);
  CHECK(c.delta1 == 0.125);
  CHECK(c.delta2 == 0.125);
  CHECK(c.delta3 == "eps");
  CHECK(c.min_prior_steps == 2);
  CHECK(c.bootstrap_resamples == 2000);
  CHECK(c.alpha == 0.05);
  CHECK(c.provisional_halfwidth == 0.08);
  CHECK_FALSE(c.include_provisional);
  CHECK(c.pair_resamples == 2000);
  CHECK(c.gate_quantile == 0.80);
  CHECK(c.gate_source == "sequence");

  SUBCASE("file with comments, blanks, and spaced assignments") {
    TempDir td;
    write_file_atomic(td.file("a.cfg"),
                      "# run knobs\n"
                      "\n"
                      "seed = 99\n"
                      "delta1=0.25\n"
                      " delta3 = 0.05 \n"
                      "include_provisional=true\n"
                      "gate_source=think\n");
    Config f = load_config(td.file("a.cfg"));
    CHECK(f.seed == 99);
    CHECK(f.delta1 == 0.25);
    CHECK(f.delta3 == "0.05");
    CHECK(f.include_provisional);
    CHECK(f.gate_source == "think");
    CHECK(f.delta2 == 0.125);  // untouched keys keep defaults
  }
  SUBCASE("malformed lines carry file and line number") {
    TempDir td;
    write_file_atomic(td.file("bad.cfg"), "seed 99\n");
    try {
      load_config(td.file("bad.cfg"));
      FAIL("expected a parse error");
    } catch (const Error& e) {
      std::string msg = e.what();
      CHECK(msg.find("bad.cfg:1") != std::string::npos);
    }
  }
  SUBCASE("override validation") {
    Config f;
    apply_config_kv(f, "pair_resamples", "64");
    CHECK(f.pair_resamples == 64);
    apply_config_kv(f, "delta3", "none");
    CHECK(f.delta3 == "none");
    CHECK_THROWS_AS(apply_config_kv(f, "delta3", "abc"), Error);
    CHECK_THROWS_AS(apply_config_kv(f, "gate_source", "everything"), Error);
    CHECK_THROWS_AS(apply_config_kv(f, "no_such_key", "1"), Error);
    CHECK_THROWS_AS(apply_config_kv(f, "config_version", "2"), Error);
    CHECK_THROWS_AS(apply_config_kv(f, "include_provisional", "yes"), Error);
    CHECK_THROWS_AS(apply_config_kv(f, "delta1", "0.1x"), Error);
  }
}

TEST_CASE("normalized config is sorted, fixed-width, and digest-stable") {
  Config c;
  std::string norm = normalized_config(c);
  auto lines = split_lines(norm);
  REQUIRE(lines.size() > 10);
  CHECK(lines.front().rfind("alpha=", 0) == 0);
  std::vector<std::string> keys;
  for (const auto& l : lines) keys.push_back(l.substr(0, l.find('=')));
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK(norm.find("delta1=0.125000\n") != std::string::npos);
  CHECK(norm.find("delta3=eps\n") != std::string::npos);

  Config same;
  CHECK(config_digest(c) == config_digest(same));

  Config tweaked;
  tweaked.delta1 = 0.2;
  CHECK(config_digest(c) != config_digest(tweaked));

  // numeric delta3 spellings normalize to one rendering
  Config a, b;
  a.delta3 = "0.05";
  b.delta3 = "0.0500";
  CHECK(config_digest(a) == config_digest(b));
}

TEST_CASE("threshold_config decodes the gain rule") {
  Config c;
  SUBCASE("defaults") {
    ThresholdConfig tc = threshold_config(c);
    CHECK(tc.gain_mode == GainMode::eps);
    CHECK(tc.delta1 == 0.125);
    CHECK(tc.delta2 == 0.125);
    CHECK(tc.min_prior_steps == 2);
    CHECK(tc.bootstrap_resamples == 2000);
    CHECK(tc.alpha == 0.05);
    CHECK(tc.provisional_halfwidth == 0.08);
    CHECK(tc.seed == 714);
  }
  SUBCASE("named modes") {
    c.delta3 = "none";
    CHECK(threshold_config(c).gain_mode == GainMode::none);
    c.delta3 = "eps";
    CHECK(threshold_config(c).gain_mode == GainMode::eps);
  }
  SUBCASE("numeric floor") {
    c.delta3 = "0.5";
    ThresholdConfig tc = threshold_config(c);
    CHECK(tc.gain_mode == GainMode::threshold);
    CHECK(tc.delta3 == 0.5);
  }
  SUBCASE("zero floor degrades to strict positivity") {
    c.delta3 = "0";
    CHECK(threshold_config(c).gain_mode == GainMode::eps);
    c.delta3 = "0.000";
    CHECK(threshold_config(c).gain_mode == GainMode::eps);
  }
  SUBCASE("range checks") {
    c.delta3 = "1.5";
    CHECK_THROWS_AS(threshold_config(c), Error);
    c.delta3 = "-0.1";
    CHECK_THROWS_AS(threshold_config(c), Error);
    c.delta3 = "eps";
    c.min_prior_steps = 0;
    CHECK_THROWS_AS(threshold_config(c), Error);
  }
}

TEST_CASE("manifest shape and sidecar placement") {
  TempDir td;
  write_file_atomic(td.file("in.jsonl"), "{}\n");
  Config c;
  auto m = make_manifest("ahalab demo --x 1", c, {td.file("in.jsonl")});
  njson j = njson::parse(manifest_json(m));
  CHECK(j["ahalab_version"] == kToolkitVersion);
  CHECK(j["command_line"] == "ahalab demo --x 1");
  CHECK(j["config_digest"] == hex64(config_digest(c)));
  CHECK(j["seed"] == 714);
  REQUIRE(j["inputs"].size() == 1);
  CHECK(j["inputs"][0]["path"] == td.file("in.jsonl").string());
  CHECK(j["inputs"][0]["fnv1a64"] == hex64(hash_file(td.file("in.jsonl"))));

  write_manifest(td.file("out.csv"), m);
  CHECK(fs::is_regular_file(td.file("out.csv.manifest.json")));
  CHECK(read_file(td.file("out.csv.manifest.json")) == manifest_json(m));
}

TEST_CASE("ingest command builds a dataset from raw trace files") {
  TempDir td;
  fs::create_directory(td.file("raw"));
  auto raw_line = [](const std::string& problem, std::optional<int> step, double temp,
                     int sample) {
    njson j;
    j["problem_id"] = problem;
    if (step) j["step"] = *step;
    j["temperature"] = temp;
    j["sample"] = sample;
    j["pass"] = "pass1";
    j["completion"] = "<answer>1</answer>";
    j["gold"] = "1";
    return j.dump() + "\n";
  };
  // the stepNNN filename supplies the missing step field
  write_file_atomic(td.file("raw/step100.jsonl"),
                    raw_line("p1", std::nullopt, 0.0, 0) + raw_line("p1", std::nullopt, 0.0, 1));
  write_file_atomic(td.file("raw/extra.jsonl"),
                    raw_line("p1", 200, 0.0, 0) + raw_line("p1", 200, 0.0, 1));

  IngestArgs a;
  a.inputs = {td.file("raw").string()};
  a.domain = "math";
  a.out = td.file("ds.jsonl").string();
  a.g = 4;
  Config c;
  std::ostringstream log;
  CHECK(cmd_ingest(a, c, "ahalab ingest", log) == 0);
  CHECK(log.str().find("ingested 4 records from 2 files") != std::string::npos);
  CHECK(has_manifest(a.out));

  RunDataset ds = load_dataset(a.out);
  CHECK(ds.records.size() == 4);
  CHECK(ds.domain == Domain::math);
  CHECK(ds.g == 4);
  CHECK(ds.checkpoint_grid == std::vector<int>{100, 200});
  CHECK(ds.temperatures == std::vector<double>{0.0});

  SUBCASE("re-ingesting a dataset file is rejected") {
    IngestArgs bad = a;
    bad.inputs = {a.out};
    bad.out = td.file("ds2.jsonl").string();
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_ingest(bad, c, "x", sink), Error);
  }
  SUBCASE("declared domain mismatch is rejected") {
    njson j;
    j["problem_id"] = "p9";
    j["step"] = 100;
    j["temperature"] = 0.0;
    j["sample"] = 0;
    j["pass"] = "pass1";
    j["completion"] = "x";
    j["gold"] = "y";
    j["domain"] = "xword";
    write_file_atomic(td.file("alien.jsonl"), j.dump() + "\n");
    IngestArgs bad = a;
    bad.inputs = {td.file("alien.jsonl").string()};
    bad.out = td.file("ds3.jsonl").string();
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_ingest(bad, c, "x", sink), Error);
  }
  SUBCASE("argument validation") {
    std::ostringstream sink;
    IngestArgs no_out = a;
    no_out.out.clear();
    CHECK_THROWS_AS(cmd_ingest(no_out, c, "x", sink), Error);
    IngestArgs bad_g = a;
    bad_g.g = 0;
    CHECK_THROWS_AS(cmd_ingest(bad_g, c, "x", sink), Error);
    fs::create_directory(td.file("empty"));
    IngestArgs none = a;
    none.inputs = {td.file("empty").string()};
    CHECK_THROWS_AS(cmd_ingest(none, c, "x", sink), Error);
  }
}

TEST_CASE("score command fills correctness bits and the reward table") {
  TempDir td;
  std::vector<TraceRecord> recs;
  for (int s = 0; s < 4; ++s) {
    auto r = make_record("p1", 100, 0.0, s, s < 2, false);
    r.correct.reset();
    r.shift.reset();
    recs.push_back(r);
  }
  fs::path ds_path = write_ds(td, "ds.jsonl", recs);

  ScoreArgs a;
  a.dataset = ds_path.string();
  a.out = td.file("scored.jsonl").string();
  a.rewards_out = td.file("rewards.csv").string();
  Config c;
  std::ostringstream log;
  CHECK(cmd_score(a, c, "ahalab score", log) == 0);
  CHECK(log.str().find("scored 4 records: 2 correct (50.00%)") != std::string::npos);
  CHECK(has_manifest(a.out));

  RunDataset scored = load_dataset(a.out);
  REQUIRE(scored.records.size() == 4);
  for (const auto& r : scored.records) {
    REQUIRE(r.correct.has_value());
    CHECK(*r.correct == (r.gold_answer == "7"));
  }

  auto lines = split_lines(read_file(a.rewards_out));
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "problem_id,step,temperature,sample,pass,correct,reward");
  auto cells = split_cells(lines[1]);
  REQUIRE(cells.size() == 7);
  CHECK(cells[0] == "p1");
  CHECK(cells[5] == "1");
  CHECK(cells[6] == "1.000000");
  CHECK(split_cells(lines[4])[6] == "0.000000");

  SUBCASE("defaults to rewriting in place") {
    ScoreArgs inplace;
    inplace.dataset = ds_path.string();
    std::ostringstream sink;
    CHECK(cmd_score(inplace, c, "x", sink) == 0);
    RunDataset back = load_dataset(ds_path);
    CHECK(back.records[0].correct.has_value());
  }
}

TEST_CASE("annotate command labels, skips, and can be forced") {
  TempDir td;
  auto r0 = make_record("p1", 100, 0.0, 0, true, false);
  r0.completion = "<think>Wait, that seems wrong.</think><answer>7</answer>";
  r0.shift.reset();
  auto r1 = make_record("p1", 100, 0.0, 1, true, false);
  r1.completion = "<think>The sum is 12.</think><answer>7</answer>";
  r1.shift.reset();
  auto r2 = make_record("p1", 100, 0.0, 2, true, true);  // already labeled
  fs::path ds_path = write_ds(td, "ds.jsonl", {r0, r1, r2});

  Config c;
  AnnotateArgs a;
  a.dataset = ds_path.string();
  a.out = td.file("ann1.jsonl").string();
  a.detector = "lexical";
  std::ostringstream log;
  CHECK(cmd_annotate(a, c, "ahalab annotate", log) == 0);
  CHECK(log.str().find("annotated 2 records (1 already labeled), 1 positive, 0 failed") !=
        std::string::npos);

  RunDataset out1 = load_dataset(a.out);
  REQUIRE(out1.records.size() == 3);
  REQUIRE(out1.records[0].shift.has_value());
  CHECK(out1.records[0].shift->label);
  CHECK(out1.records[0].shift->detector == Detector::lexical);
  CHECK_FALSE(out1.records[1].shift->label);
  CHECK(out1.records[2].shift->label);  // untouched

  SUBCASE("second pass with nothing to do leaves the file byte-identical") {
    AnnotateArgs again;
    again.dataset = a.out;
    again.out = td.file("ann2.jsonl").string();
    again.detector = "lexical";
    std::ostringstream log2;
    CHECK(cmd_annotate(again, c, "x", log2) == 0);
    CHECK(log2.str().find("annotated 0 records (3 already labeled)") != std::string::npos);
    CHECK(read_file(again.out) == read_file(a.out));
  }
  SUBCASE("force relabels everything") {
    AnnotateArgs force;
    force.dataset = a.out;
    force.out = td.file("ann3.jsonl").string();
    force.detector = "lexical";
    force.force = true;
    std::ostringstream log3;
    CHECK(cmd_annotate(force, c, "x", log3) == 0);
    CHECK(log3.str().find("annotated 3 records (0 already labeled)") != std::string::npos);
    RunDataset out3 = load_dataset(force.out);
    CHECK(out3.records[2].shift->detector == Detector::lexical);
  }
  SUBCASE("offline judge stub runs without an endpoint") {
    AnnotateArgs judge;
    judge.dataset = ds_path.string();
    judge.out = td.file("annj.jsonl").string();
    judge.detector = "judge";
    std::ostringstream logj;
    CHECK(cmd_annotate(judge, c, "x", logj) == 0);
    RunDataset outj = load_dataset(judge.out);
    for (const auto& r : outj.records) CHECK(r.shift.has_value());
    CHECK(logj.str().find("0 failed calls") != std::string::npos);
  }
  SUBCASE("unknown detector") {
    AnnotateArgs bad;
    bad.dataset = ds_path.string();
    bad.detector = "vibes";
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_annotate(bad, c, "x", sink), Error);
  }
}

TEST_CASE("rq1 command emits one row per dataset plus a pooled row") {
  TempDir td;
  std::vector<TraceRecord> d1;
  // 8 pass-1 records: 3 shifted (1 correct), 5 unshifted (3 correct)
  d1.push_back(make_record("p1", 100, 0.0, 0, true, true));
  d1.push_back(make_record("p1", 100, 0.0, 1, false, true));
  d1.push_back(make_record("p1", 100, 0.0, 2, false, true));
  d1.push_back(make_record("p1", 100, 0.0, 3, true, false));
  d1.push_back(make_record("p1", 100, 0.0, 4, true, false));
  d1.push_back(make_record("p1", 100, 0.0, 5, true, false));
  d1.push_back(make_record("p1", 100, 0.0, 6, false, false));
  d1.push_back(make_record("p1", 100, 0.0, 7, false, false));
  // pass-2 rows must not count
  d1.push_back(make_record("p1", 100, 0.0, 0, true, true, Pass::pass2));
  fs::path ds1 = write_ds(td, "d1.jsonl", d1, "m1");

  std::vector<TraceRecord> d2;
  d2.push_back(make_record("q1", 100, 0.0, 0, true, false));
  d2.push_back(make_record("q1", 100, 0.0, 1, true, false));
  d2.push_back(make_record("q1", 100, 0.0, 2, false, false));
  d2.push_back(make_record("q1", 100, 0.0, 3, false, false));
  fs::path ds2 = write_ds(td, "d2.jsonl", d2, "m2");

  Rq1Args a;
  a.datasets = {ds1.string(), ds2.string()};
  a.out = td.file("rq1.csv").string();
  Config c;
  std::ostringstream log;
  CHECK(cmd_rq1(a, c, "ahalab rq1", log) == 0);
  CHECK(has_manifest(a.out));
  CHECK(log.str().find("pooled n=12 shifted=3 (25.00%)") != std::string::npos);

  auto lines = split_lines(read_file(a.out));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] ==
        "model,domain,n,shifted,pct_shift,p_correct_given_noshift,p_correct_given_shift");
  CHECK(lines[1] == "m1,math,8,3,37.50,0.600,0.333");
  CHECK(lines[2] == "m2,math,4,0,0.00,0.500,");
  CHECK(lines[3] == "pooled,all,12,3,25.00,0.556,0.333");

  SUBCASE("unscored datasets are refused with a pointer to the missing stage") {
    auto r = make_record("z", 100, 0.0, 0, true, true);
    r.correct.reset();
    fs::path raw = write_ds(td, "raw.jsonl", {r});
    Rq1Args bad;
    bad.datasets = {raw.string()};
    bad.out = td.file("bad.csv").string();
    std::ostringstream sink;
    try {
      cmd_rq1(bad, c, "x", sink);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("score") != std::string::npos);
    }
  }
}

namespace {

// two problems, three checkpoints at T=0; the "ev" problem turns from
// all-wrong quiet priors to a last cell where every one of the four shifted
// samples lands correct, the "qu" problem stays all wrong and unshifted
std::vector<TraceRecord> event_run() {
  std::vector<TraceRecord> recs;
  for (int step : {100, 200, 300}) {
    int n = step == 300 ? 8 : 4;
    for (int s = 0; s < n; ++s) {
      bool shifted = step == 300 && s < 4;
      bool correct = shifted;
      recs.push_back(make_record("ev", step, 0.0, s, correct, shifted));
    }
    for (int s = 0; s < 4; ++s) recs.push_back(make_record("qu", step, 0.0, s, false, false));
  }
  return recs;
}

}  // namespace

TEST_CASE("aha command writes events, heatmap, and trace labels") {
  TempDir td;
  fs::path ds_path = write_ds(td, "ds.jsonl", event_run());
  Config c;
  c.bootstrap_resamples = 0;  // exact flags, no interval gating

  AhaArgs a;
  a.dataset = ds_path.string();
  a.events_out = td.file("events.csv").string();
  a.heatmap_out = td.file("heat.csv").string();
  a.trace_labels_out = td.file("labels.jsonl").string();
  std::ostringstream log;
  CHECK(cmd_aha(a, c, "ahalab aha", log) == 0);
  CHECK(has_manifest(a.events_out));
  CHECK(log.str().find("aha over 2 pairs at T=0.000: 1 events, 0 provisional") !=
        std::string::npos);

  auto ev_lines = split_lines(read_file(a.events_out));
  REQUIRE(ev_lines.size() == 3);
  CHECK(split_cells(ev_lines[0])[0] == "problem_id");
  auto ev = split_cells(ev_lines[1]);
  CHECK(ev[0] == "ev");
  CHECK(ev[1] == "300");
  CHECK(ev[2] == "1");   // flagged
  CHECK(ev[3] == "0");   // provisional
  CHECK(ev[13] == "4");  // shifted at k
  CHECK(ev[14] == "8");  // samples at k
  auto qu = split_cells(ev_lines[2]);
  CHECK(qu[0] == "qu");
  CHECK(qu[2] == "0");

  SUBCASE("heatmap counts are exact over the default grid") {
    auto heat = split_lines(read_file(a.heatmap_out));
    REQUIRE(heat.size() == 10);
    CHECK(heat[0] ==
          "delta1,delta2,delta3,events,pairs,prevalence_pct,mean_gain_pp,ci_lo_pp,ci_hi_pp");
    std::map<std::pair<std::string, std::string>, std::string> events;
    for (std::size_t i = 1; i < heat.size(); ++i) {
      auto cells = split_cells(heat[i]);
      REQUIRE(cells.size() == 9);
      CHECK(cells[2] == "eps");
      CHECK(cells[4] == "2");
      events[{cells[0], cells[1]}] = cells[3];
    }
    for (const auto& d1 : {"0.000", "0.125", "0.250"})
      for (const auto& d2 : {"0.000", "0.125", "0.250"}) {
        bool hit = std::string(d1) != "0.000" && std::string(d2) != "0.000";
        CHECK(events[{d1, d2}] == (hit ? "1" : "0"));
      }
  }
  SUBCASE("trace labels project the flagged cell onto shifted traces") {
    auto lines = split_lines(read_file(a.trace_labels_out));
    REQUIRE(lines.size() == 28);  // every pass-1 record at the run temperature
    int on = 0;
    for (const auto& l : lines) {
      njson j = njson::parse(l);
      CHECK(j["detector"] == "formal_input_judge");
      if (j["label"].get<bool>()) {
        ++on;
        CHECK(j["problem_id"] == "ev");
        CHECK(j["step"] == 300);
      }
    }
    CHECK(on == 4);
  }
  SUBCASE("reruns are byte-identical") {
    std::string first = read_file(a.events_out);
    std::ostringstream sink;
    CHECK(cmd_aha(a, c, "ahalab aha", sink) == 0);
    CHECK(read_file(a.events_out) == first);
  }
  SUBCASE("requesting an absent temperature fails with the available list") {
    AhaArgs bad = a;
    bad.temperature = 0.7;
    std::ostringstream sink;
    try {
      cmd_aha(bad, c, "x", sink);
      FAIL("expected an error");
    } catch (const Error& e) {
      std::string msg = e.what();
      CHECK(msg.find("0.700") != std::string::npos);
      CHECK(msg.find("0.000") != std::string::npos);
    }
  }
  SUBCASE("gated run marks the small cell provisional") {
    Config gated;  // default 2000 resamples
    AhaArgs g = a;
    g.events_out = td.file("events_gated.csv").string();
    g.heatmap_out.clear();
    g.trace_labels_out.clear();
    std::ostringstream sink;
    CHECK(cmd_aha(g, gated, "x", sink) == 0);
    CHECK(sink.str().find(", gated)") != std::string::npos);
    auto rows = split_lines(read_file(g.events_out));
    auto cells = split_cells(rows[1]);
    CHECK(cells[0] == "ev");
    CHECK(cells[2] == "1");  // the interval stays clear of zero
    CHECK(cells[3] == "1");  // but eight samples leave it wide
  }
  SUBCASE("no_gate reports an ungated run") {
    AhaArgs g = a;
    g.no_gate = true;
    g.events_out = td.file("events_ng.csv").string();
    g.heatmap_out.clear();
    g.trace_labels_out.clear();
    std::ostringstream sink;
    CHECK(cmd_aha(g, c, "x", sink) == 0);
    CHECK(sink.str().find(", ungated)") != std::string::npos);
  }
}

TEST_CASE("grid-search command ranks, tie-breaks, and reports prevalence") {
  TempDir td;
  fs::path ds_path = write_ds(td, "ds.jsonl", event_run());
  Config c;
  c.bootstrap_resamples = 0;

  GridArgs a;
  a.dataset = ds_path.string();
  a.out = td.file("grid.csv").string();
  std::ostringstream log;
  CHECK(cmd_grid_search(a, c, "ahalab grid-search", log) == 0);
  CHECK(has_manifest(a.out));
  CHECK(log.str().find("grid-search at T=0.000: best (delta1=0.125, delta2=0.125, "
                       "delta3=none) with 1/2 events") != std::string::npos);

  auto lines = split_lines(read_file(a.out));
  REQUIRE(lines.size() == 37);  // header + 3 x 3 x 4 rules
  CHECK(lines[1] == "0.125,0.125,none,1,2,50.00,+50.00,+50.00,+50.00");
  CHECK(lines[2] == "0.125,0.125,eps,1,2,50.00,+50.00,+50.00,+50.00");

  // sixteen flagged rows, then the zero-event rows in plain grid order
  for (std::size_t i = 1; i <= 16; ++i) CHECK(split_cells(lines[i])[3] == "1");
  CHECK(lines[17] == "0.000,0.000,none,0,2,0.00,,,");
  CHECK(lines[36] == "0.250,0.000,0.125,0,2,0.00,,,");

  SUBCASE("reruns are byte-identical") {
    std::string first = read_file(a.out);
    std::ostringstream sink;
    CHECK(cmd_grid_search(a, c, "ahalab grid-search", sink) == 0);
    CHECK(read_file(a.out) == first);
  }
}

namespace {

TraceRecord with_entropy(TraceRecord r, double value) {
  r.token_entropies = {value};
  return r;
}

}  // namespace

TEST_CASE("regress command covers every formula") {
  TempDir td;
  Config c;
  std::ostringstream log;

  SUBCASE("rq1_pooled recovers the tabulated odds ratio") {
    std::vector<TraceRecord> recs;
    for (int i = 0; i < 200; ++i) {
      bool shifted = i < 100;
      bool correct = shifted ? i < 30 : i < 150;
      recs.push_back(
          make_record("p" + std::to_string(i % 4), 100, 0.0, i / 4, correct, shifted));
    }
    fs::path ds = write_ds(td, "pool.jsonl", recs, "m1", 64);
    RegressArgs a;
    a.dataset = ds.string();
    a.formula = "rq1_pooled";
    a.out = td.file("rq1.json").string();
    CHECK(cmd_regress(a, c, "x", log) == 0);
    CHECK(has_manifest(a.out));
    njson j = njson::parse(read_file(a.out));
    CHECK(j["formula"] == "rq1_pooled");
    CHECK(j["formula_string"] == "correct ~ shift");
    CHECK(j["fit"]["converged"].get<bool>());
    CHECK(j["fit"]["n_rows"] == 200);
    CHECK(j["fit"]["groups_dropped"] == 0);
    auto focal = j["fit"]["focal"];
    CHECK(focal["name"] == "shift");
    CHECK(focal["beta"].get<double>() ==
          doctest::Approx(std::log(3.0 / 7.0)).epsilon(1e-6));
    CHECK(focal["or"].get<double>() == doctest::Approx(3.0 / 7.0).epsilon(1e-6));
    CHECK(focal.contains("ame"));
    CHECK(j["fit"]["covariance"] == "CR1");
  }

  SUBCASE("rq2_stage and rq2_temp standardize the trend column") {
    std::vector<TraceRecord> recs;
    for (int p = 0; p < 4; ++p)
      for (int step : {100, 200})
        for (int s = 0; s < 6; ++s) {
          bool shifted = s % 3 == 0;
          bool correct = (s + p + step / 100) % 2 == 0;
          recs.push_back(make_record("p" + std::to_string(p), step, 0.0, s, correct, shifted));
        }
    fs::path ds = write_ds(td, "stage.jsonl", recs);
    RegressArgs a;
    a.dataset = ds.string();
    a.formula = "rq2_stage";
    a.out = td.file("stage.json").string();
    CHECK(cmd_regress(a, c, "x", log) == 0);
    njson j = njson::parse(read_file(a.out));
    CHECK(j["formula_string"] == "correct ~ C(problem) + step_std + shift");
    CHECK(j["fit"]["converged"].get<bool>());
    CHECK(j["fit"]["n_rows"] == 48);
    CHECK(j["fit"]["groups_used"] == 4);
    std::set<std::string> names;
    for (const auto& row : j["fit"]["coefficients"]) names.insert(row["name"]);
    CHECK(names.count("shift") == 1);
    CHECK(names.count("step_std") == 1);
    CHECK(j["fit"]["coefficients"].size() == 3);  // indicators stay out of the report

    std::vector<TraceRecord> trecs;
    for (int p = 0; p < 4; ++p)
      for (double temp : {0.0, 0.7})
        for (int s = 0; s < 6; ++s) {
          bool shifted = s % 3 == 1;
          bool correct = (s + p + (temp > 0 ? 1 : 0)) % 2 == 0;
          trecs.push_back(make_record("p" + std::to_string(p), 100, temp, s, correct, shifted));
        }
    fs::path tds = write_ds(td, "temp.jsonl", trecs);
    RegressArgs t;
    t.dataset = tds.string();
    t.formula = "rq2_temp";
    t.out = td.file("temp.json").string();
    CHECK(cmd_regress(t, c, "x", log) == 0);
    njson tj = njson::parse(read_file(t.out));
    CHECK(tj["formula_string"] == "correct ~ C(problem) + temp_std + shift");
    CHECK(tj["fit"]["converged"].get<bool>());
  }

  SUBCASE("rq3_prevalence regresses shift on standardized entropy") {
    std::vector<TraceRecord> recs;
    for (int p = 0; p < 4; ++p)
      for (int s = 0; s < 8; ++s) {
        bool shifted = s % 2 == 1;
        recs.push_back(
            with_entropy(make_record("p" + std::to_string(p), 100, 0.0, s, s < 4, shifted),
                         static_cast<double>(s + s % 3)));
      }
    fs::path ds = write_ds(td, "prev.jsonl", recs);
    RegressArgs a;
    a.dataset = ds.string();
    a.formula = "rq3_prevalence";
    a.out = td.file("prev.json").string();
    CHECK(cmd_regress(a, c, "x", log) == 0);
    njson j = njson::parse(read_file(a.out));
    CHECK(j["formula_string"] == "shift ~ C(problem) + entropy_std");
    CHECK(j["fit"]["converged"].get<bool>());
    CHECK_FALSE(j["fit"]["separation"].get<bool>());
    auto focal = j["fit"]["focal"];
    CHECK(focal["name"] == "entropy_std");
    CHECK(focal.contains("or_per_1sigma"));
    CHECK_FALSE(focal.contains("ame"));  // continuous exposure
  }

  SUBCASE("pass2_entropy joins pass-2 outcomes to pass-1 entropy") {
    std::vector<TraceRecord> p1recs, p2recs;
    for (int p = 0; p < 3; ++p)
      for (int s = 0; s < 10; ++s) {
        p1recs.push_back(with_entropy(
            make_record("p" + std::to_string(p), 100, 0.0, s, false, false),
            static_cast<double>(s)));
        p2recs.push_back(make_record("p" + std::to_string(p), 100, 0.0, s, s % 2 == 0,
                                     false, Pass::pass2));
      }
    fs::path ds1 = write_ds(td, "p1.jsonl", p1recs, "m1", 16);
    fs::path ds2 = write_ds(td, "p2.jsonl", p2recs, "m1", 16);
    RegressArgs a;
    a.dataset = ds1.string();
    a.pass2_dataset = ds2.string();
    a.formula = "pass2_entropy";
    a.out = td.file("p2e.json").string();
    CHECK(cmd_regress(a, c, "x", log) == 0);
    njson j = njson::parse(read_file(a.out));
    CHECK(j["formula_string"] == "correct_p2 ~ C(problem) + entropy_p1_std");
    CHECK(j["fit"]["n_rows"] == 30);
    CHECK(j["fit"]["focal"]["name"] == "entropy_p1_std");

    // a pass-2 record with no pass-1 partner is a hard error
    p2recs.push_back(make_record("p0", 100, 0.0, 11, true, false, Pass::pass2));
    fs::path ds2b = write_ds(td, "p2b.jsonl", p2recs, "m1", 16);
    RegressArgs bad = a;
    bad.pass2_dataset = ds2b.string();
    bad.out = td.file("p2bad.json").string();
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_regress(bad, c, "x", sink), UnmatchedPairs);
  }

  SUBCASE("rq3_strata splits on the entropy gate") {
    std::vector<TraceRecord> recs;
    for (int s = 0; s < 20; ++s)
      recs.push_back(with_entropy(
          make_record("s", 100, 0.0, s, s % 4 < 2, s % 2 == 1), static_cast<double>(s + 1)));
    fs::path ds = write_ds(td, "strata.jsonl", recs, "m1", 32);
    RegressArgs a;
    a.dataset = ds.string();
    a.formula = "rq3_strata";
    a.out = td.file("strata.json").string();
    CHECK(cmd_regress(a, c, "x", log) == 0);
    njson j = njson::parse(read_file(a.out));
    CHECK(j["formula_string"] == "correct ~ shift | entropy stratum");
    CHECK(j["threshold"].get<double>() == 16.0);
    REQUIRE(j["strata"].size() == 2);
    CHECK(j["strata"][0]["name"] == "high");
    CHECK(j["strata"][0]["n"] == 4);
    CHECK(j["strata"][1]["name"] == "low");
    CHECK(j["strata"][1]["n"] == 16);
    CHECK(j["strata"][0]["delta_pp"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(j["strata"][1]["delta_pp"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("unknown formula and missing output are rejected") {
    fs::path ds = write_ds(td, "any.jsonl", {make_record("p", 100, 0.0, 0, true, false)});
    RegressArgs a;
    a.dataset = ds.string();
    a.formula = "rq9_wishful";
    a.out = td.file("x.json").string();
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_regress(a, c, "x", sink), Error);
    a.formula = "rq1_pooled";
    a.out.clear();
    CHECK_THROWS_AS(cmd_regress(a, c, "x", sink), Error);
  }
}

TEST_CASE("intervene command pairs the two passes") {
  TempDir td;
  std::vector<TraceRecord> p1recs, p2recs;
  for (int s = 0; s < 12; ++s) {
    p1recs.push_back(
        with_entropy(make_record("iv", 100, 0.0, s, s < 6, false), static_cast<double>(s)));
    p2recs.push_back(
        make_record("iv", 100, 0.0, s, s >= 2 && s < 10, false, Pass::pass2));
  }
  fs::path ds1 = write_ds(td, "p1.jsonl", p1recs, "m1", 16);
  fs::path ds2 = write_ds(td, "p2.jsonl", p2recs, "m1", 16);

  Config c;
  InterveneArgs a;
  a.pass1 = ds1.string();
  a.pass2 = ds2.string();
  a.out = td.file("iv.json").string();
  std::ostringstream log;
  CHECK(cmd_intervene(a, c, "ahalab intervene", log) == 0);
  CHECK(has_manifest(a.out));
  CHECK(log.str().find("intervene: n=12") != std::string::npos);

  njson j = njson::parse(read_file(a.out));
  auto overall = j["overall"];
  CHECK(overall["n"] == 12);
  CHECK(overall["correct_p1"] == 6);
  CHECK(overall["correct_p2"] == 8);
  CHECK(overall["wins_p1"] == 2);
  CHECK(overall["wins_p2"] == 4);
  CHECK(overall["delta_pp"].get<double>() == doctest::Approx(100.0 * 2 / 12).epsilon(1e-12));
  CHECK(overall.contains("ci_lo_pp"));
  CHECK(overall.contains("ci_hi_pp"));
  CHECK_FALSE(j.contains("buckets"));

  SUBCASE("entropy gate adds per-stratum reports") {
    InterveneArgs g = a;
    g.gate = true;
    g.out = td.file("ivg.json").string();
    std::ostringstream sink;
    CHECK(cmd_intervene(g, c, "x", sink) == 0);
    njson gj = njson::parse(read_file(g.out));
    REQUIRE(gj.contains("buckets"));
    CHECK(gj["buckets"]["threshold"].get<double>() == 9.0);
    CHECK(gj["buckets"]["high"]["n"] == 2);
    CHECK(gj["buckets"]["low"]["n"] == 10);
  }
  SUBCASE("any orphan pair is a hard error") {
    p2recs.pop_back();
    fs::path short2 = write_ds(td, "p2short.jsonl", p2recs, "m1", 16);
    InterveneArgs bad = a;
    bad.pass2 = short2.string();
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_intervene(bad, c, "x", sink), UnmatchedPairs);
  }
  SUBCASE("wrong-pass inputs are caught") {
    InterveneArgs swapped = a;
    swapped.pass1 = ds2.string();
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_intervene(swapped, c, "x", sink), Error);
  }
}

TEST_CASE("agreement command compares labelers pairwise") {
  TempDir td;
  const int kItems = 20;
  auto build = [&](const std::string& name, const std::set<int>& shifted) {
    std::vector<TraceRecord> recs;
    for (int i = 0; i < kItems; ++i) {
      std::string problem(1, static_cast<char>('a' + i));
      recs.push_back(make_record(problem, 100, 0.0, 0, true, shifted.count(i) > 0));
    }
    return write_ds(td, name, recs);
  };
  std::set<int> base;
  for (int i = 0; i < 10; ++i) base.insert(i);
  std::set<int> second = base;
  second.erase(3);
  second.insert(12);
  fs::path l1 = build("l1.jsonl", base);
  fs::path l2 = build("l2.jsonl", second);

  // a third labeler supplied as a bare key/label file
  std::string keyed;
  for (int i = 0; i < kItems; ++i) {
    njson j;
    j["key"] = std::string(1, static_cast<char>('a' + i)) + "|100|0.000000|0|pass1";
    bool label = base.count(i) > 0;
    if (i == 7) label = !label;
    j["label"] = label;
    keyed += j.dump() + "\n";
  }
  write_file_atomic(td.file("l3.jsonl"), keyed);

  Config c;
  AgreementArgs a;
  a.label_files = {l1.string(), l2.string(), td.file("l3.jsonl").string()};
  a.out = td.file("agree.json").string();
  std::ostringstream log;
  CHECK(cmd_agreement(a, c, "ahalab agreement", log) == 0);
  CHECK(has_manifest(a.out));

  njson j = njson::parse(read_file(a.out));
  CHECK(j["labelers"] == 3);
  CHECK(j["items"] == kItems);
  CHECK(j["pairs_total"] == 3);
  CHECK(j["pairs_degenerate"] == 0);
  REQUIRE(j["pairs"].size() == 3);
  CHECK(j["pairs"][0]["po"].get<double>() == doctest::Approx(0.90).epsilon(1e-12));
  CHECK(j["pairs"][1]["po"].get<double>() == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(j["pairs"][2]["po"].get<double>() == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(j["mean_po"].get<double>() == doctest::Approx(0.90).epsilon(1e-12));
  CHECK(j["mean_kappa"].is_number());
  REQUIRE(j["kappa_ci"].is_array());
  CHECK(j["kappa_ci"].size() == 2);
  CHECK(j["kappa_ci"][0].get<double>() <= j["kappa_ci"][1].get<double>());

  SUBCASE("fewer than two labelers") {
    AgreementArgs bad;
    bad.label_files = {l1.string()};
    bad.out = td.file("x.json").string();
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_agreement(bad, c, "x", sink), Error);
  }
  SUBCASE("misaligned keys") {
    std::string other;
    for (int i = 0; i < kItems; ++i) {
      njson row;
      std::string problem(1, static_cast<char>(i == 5 ? 'z' : 'a' + i));
      row["key"] = problem + "|100|0.000000|0|pass1";
      row["label"] = false;
      other += row.dump() + "\n";
    }
    write_file_atomic(td.file("lz.jsonl"), other);
    AgreementArgs bad = a;
    bad.label_files = {l1.string(), td.file("lz.jsonl").string()};
    std::ostringstream sink;
    try {
      cmd_agreement(bad, c, "x", sink);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("misaligned") != std::string::npos);
    }
  }
  SUBCASE("item-count mismatch") {
    std::string shorter;
    for (int i = 0; i < kItems - 1; ++i) {
      njson row;
      row["key"] = std::string(1, static_cast<char>('a' + i)) + "|100|0.000000|0|pass1";
      row["label"] = true;
      shorter += row.dump() + "\n";
    }
    write_file_atomic(td.file("lshort.jsonl"), shorter);
    AgreementArgs bad = a;
    bad.label_files = {l1.string(), td.file("lshort.jsonl").string()};
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_agreement(bad, c, "x", sink), Error);
  }
  SUBCASE("duplicate keys in a label file") {
    write_file_atomic(td.file("ldup.jsonl"),
                      "{\"key\":\"a|100|0.000000|0|pass1\",\"label\":true}\n"
                      "{\"key\":\"a|100|0.000000|0|pass1\",\"label\":false}\n");
    AgreementArgs bad = a;
    bad.label_files = {l1.string(), td.file("ldup.jsonl").string()};
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_agreement(bad, c, "x", sink), DuplicateKey);
  }
  SUBCASE("malformed label rows") {
    write_file_atomic(td.file("lbad.jsonl"), "{\"key\":\"a\"}\n");
    AgreementArgs bad = a;
    bad.label_files = {l1.string(), td.file("lbad.jsonl").string()};
    std::ostringstream sink;
    CHECK_THROWS_AS(cmd_agreement(bad, c, "x", sink), Error);
  }
}

TEST_CASE("entropy command reports span means and gate flags") {
  TempDir td;
  std::vector<TraceRecord> recs;
  for (int s = 0; s < 4; ++s) {
    auto r = make_record("e", 100, 0.0, s, true, false);
    r.token_entropies = {static_cast<double>(s + 1)};
    r.think_span = Span{0, 1};
    recs.push_back(r);
  }
  recs.push_back(make_record("e", 100, 0.0, 4, true, false));  // no entropies
  auto p2 = make_record("e", 100, 0.0, 0, true, false, Pass::pass2);
  p2.token_entropies = {9.0};
  recs.push_back(p2);
  fs::path ds = write_ds(td, "ds.jsonl", recs);

  Config c;
  EntropyArgs a;
  a.dataset = ds.string();
  a.out = td.file("entropy.csv").string();
  std::ostringstream log;
  CHECK(cmd_entropy(a, c, "ahalab entropy", log) == 0);
  CHECK(has_manifest(a.out));
  CHECK(log.str().find("gate population 4") != std::string::npos);
  CHECK(log.str().find("threshold=4.000000") != std::string::npos);

  auto lines = split_lines(read_file(a.out));
  REQUIRE(lines.size() == 7);
  CHECK(lines[0] ==
        "problem_id,step,temperature,sample,pass,think_mean,answer_mean,sequence_mean,"
        "gate_high");
  // canonical order puts pass-1 sample 0 first, its pass-2 twin second
  auto first = split_cells(lines[1]);
  CHECK(first[4] == "pass1");
  CHECK(first[5] == "1.000000");
  CHECK(first[6] == "");
  CHECK(first[7] == "1.000000");
  CHECK(first[8] == "0");
  auto twin = split_cells(lines[2]);
  CHECK(twin[4] == "pass2");
  CHECK(twin[7] == "9.000000");
  CHECK(twin[8] == "");  // not part of the gate population
  auto bare = split_cells(lines[6]);
  CHECK(bare[3] == "4");
  CHECK(bare[7] == "");
  CHECK(bare[8] == "");

  SUBCASE("datasets with no usable scores still render") {
    std::vector<TraceRecord> none = {make_record("n", 100, 0.0, 0, true, false)};
    fs::path nds = write_ds(td, "none.jsonl", none);
    EntropyArgs b;
    b.dataset = nds.string();
    b.out = td.file("none.csv").string();
    std::ostringstream log2;
    CHECK(cmd_entropy(b, c, "x", log2) == 0);
    CHECK(log2.str().find("no gate scores") != std::string::npos);
  }
}

TEST_CASE("cues command dumps the built-in whitelist") {
  TempDir td;
  Config c;
  CuesArgs a;
  a.out = td.file("cues.json").string();
  std::ostringstream log;
  CHECK(cmd_cues(a, c, "ahalab cues", log) == 0);
  CHECK(has_manifest(a.out));

  std::string body = read_file(a.out);
  CHECK(body == cues_to_json(builtin_cues()));
  njson j = njson::parse(body);
  REQUIRE(j.is_object());
  REQUIRE(j.contains("cues"));
  CHECK(j["cues"].size() == builtin_cues().size());
  CHECK(log.str().find("wrote") != std::string::npos);
}
