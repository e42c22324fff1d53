#include "ahalab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <ostream>
#include <set>

#include "ahalab/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace ahalab {

namespace {

double parse_double_kv(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw Error("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
}

long long parse_int_kv(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size()) throw Error("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': cannot parse '" + value + "' as an integer");
  }
}

bool parse_bool_kv(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw Error("config key '" + key + "': expected a boolean, got '" + value + "'");
}

}  // namespace

void apply_config_kv(Config& c, const std::string& key, const std::string& value) {
  if (key == "config_version") {
    c.config_version = static_cast<int>(parse_int_kv(key, value));
    if (c.config_version != 1)
      throw Error("unsupported config_version " + std::to_string(c.config_version));
  } else if (key == "seed") {
    c.seed = static_cast<std::uint64_t>(parse_int_kv(key, value));
  } else if (key == "delta1") {
    c.delta1 = parse_double_kv(key, value);
  } else if (key == "delta2") {
    c.delta2 = parse_double_kv(key, value);
  } else if (key == "delta3") {
    if (value != "none" && value != "eps") parse_double_kv(key, value);  // must be numeric
    c.delta3 = value;
  } else if (key == "min_prior_steps") {
    c.min_prior_steps = static_cast<int>(parse_int_kv(key, value));
  } else if (key == "bootstrap_resamples") {
    c.bootstrap_resamples = static_cast<int>(parse_int_kv(key, value));
  } else if (key == "alpha") {
    c.alpha = parse_double_kv(key, value);
  } else if (key == "provisional_halfwidth") {
    c.provisional_halfwidth = parse_double_kv(key, value);
  } else if (key == "include_provisional") {
    c.include_provisional = parse_bool_kv(key, value);
  } else if (key == "pair_resamples") {
    c.pair_resamples = static_cast<int>(parse_int_kv(key, value));
  } else if (key == "gate_quantile") {
    c.gate_quantile = parse_double_kv(key, value);
  } else if (key == "gate_source") {
    if (value != "sequence" && value != "think" && value != "answer")
      throw Error("config key 'gate_source': expected sequence|think|answer");
    c.gate_source = value;
  } else if (key == "rush_exact") {
    c.rush.exact = parse_double_kv(key, value);
  } else if (key == "rush_solve") {
    c.rush.solve = parse_double_kv(key, value);
  } else if (key == "rush_prefix") {
    c.rush.prefix = parse_double_kv(key, value);
  } else if (key == "rush_phi") {
    c.rush.phi = parse_double_kv(key, value);
  } else if (key == "xword_contain") {
    c.xword.eps_contain = parse_double_kv(key, value);
  } else if (key == "xword_len") {
    c.xword.eps_len = parse_double_kv(key, value);
  } else if (key == "xword_ramp_tokens") {
    c.xword.ramp_tokens = parse_double_kv(key, value);
  } else {
    throw Error("unknown config key '" + key + "'");
  }
}

Config load_config(const fs::path& path) {
  Config c;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(path.string() + ":" + std::to_string(i + 1) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      apply_config_kv(c, key, value);
    } catch (const Error& e) {
      throw Error(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return c;
}

std::string normalized_config(const Config& c) {
  // alphabetical key order; fixed six-decimal rendering so the digest is a
  // pure function of the effective values
  std::string out;
  auto put = [&out](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  put("alpha", fmt_fixed(c.alpha, 6));
  put("bootstrap_resamples", std::to_string(c.bootstrap_resamples));
  put("config_version", std::to_string(c.config_version));
  put("delta1", fmt_fixed(c.delta1, 6));
  put("delta2", fmt_fixed(c.delta2, 6));
  put("delta3", c.delta3 == "none" || c.delta3 == "eps"
                    ? c.delta3
                    : fmt_fixed(parse_double_kv("delta3", c.delta3), 6));
  put("gate_quantile", fmt_fixed(c.gate_quantile, 6));
  put("gate_source", c.gate_source);
  put("include_provisional", c.include_provisional ? "1" : "0");
  put("min_prior_steps", std::to_string(c.min_prior_steps));
  put("pair_resamples", std::to_string(c.pair_resamples));
  put("provisional_halfwidth", fmt_fixed(c.provisional_halfwidth, 6));
  put("rush_exact", fmt_fixed(c.rush.exact, 6));
  put("rush_phi", fmt_fixed(c.rush.phi, 6));
  put("rush_prefix", fmt_fixed(c.rush.prefix, 6));
  put("rush_solve", fmt_fixed(c.rush.solve, 6));
  put("seed", std::to_string(c.seed));
  put("xword_contain", fmt_fixed(c.xword.eps_contain, 6));
  put("xword_len", fmt_fixed(c.xword.eps_len, 6));
  put("xword_ramp_tokens", fmt_fixed(c.xword.ramp_tokens, 6));
  return out;
}

std::uint64_t config_digest(const Config& c) { return fnv1a64(normalized_config(c)); }

ThresholdConfig threshold_config(const Config& c) {
  ThresholdConfig tc;
  tc.delta1 = c.delta1;
  tc.delta2 = c.delta2;
  if (c.delta3 == "none") {
    tc.gain_mode = GainMode::none;
  } else if (c.delta3 == "eps") {
    tc.gain_mode = GainMode::eps;
  } else {
    double v = parse_double_kv("delta3", c.delta3);
    if (v < 0 || v > 1) throw Error("delta3 must lie in [0, 1]");
    if (v == 0) {
      tc.gain_mode = GainMode::eps;  // strict positivity; a zero floor is the same test
    } else {
      tc.gain_mode = GainMode::threshold;
      tc.delta3 = v;
    }
  }
  if (c.min_prior_steps < 1) throw Error("min_prior_steps must be >= 1");
  tc.min_prior_steps = c.min_prior_steps;
  tc.bootstrap_resamples = c.bootstrap_resamples;
  tc.alpha = c.alpha;
  tc.provisional_halfwidth = c.provisional_halfwidth;
  tc.seed = c.seed;
  return tc;
}

std::string manifest_json(const RunManifest& m) {
  json j;
  j["ahalab_version"] = kToolkitVersion;
  j["command_line"] = m.command_line;
  j["config_digest"] = hex64(m.digest);
  j["seed"] = m.seed;
  json inputs = json::array();
  for (const auto& [path, hash] : m.inputs) {
    json entry;
    entry["path"] = path;
    entry["fnv1a64"] = hex64(hash);
    inputs.push_back(entry);
  }
  j["inputs"] = inputs;
  return j.dump() + "\n";
}

void write_manifest(const fs::path& primary_out, const RunManifest& m) {
  fs::path p = primary_out;
  p += ".manifest.json";
  write_file_atomic(p, manifest_json(m));
}

RunManifest make_manifest(const std::string& command_line, const Config& c,
                          const std::vector<fs::path>& inputs) {
  RunManifest m;
  m.command_line = command_line;
  m.digest = config_digest(c);
  m.seed = c.seed;
  for (const auto& p : inputs) m.inputs.emplace_back(p.string(), hash_file(p));
  return m;
}

namespace {

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += "\"\"";
    else q += ch;
  }
  q += "\"";
  return q;
}

void csv_row(std::string& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += csv_cell(cells[i]);
  }
  out += '\n';
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".jsonl") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw Error("input not found: " + in);
    }
  }
  return files;
}

std::string first_nonempty_line(const fs::path& p) {
  for (const auto& line : read_lines(p))
    if (!trim(line).empty()) return line;
  return "";
}

std::string fmt_temp(double t) { return fmt_fixed(t, 3); }

std::string opt_cell(const std::optional<double>& v, int prec, bool sign = false) {
  if (!v) return "";
  return sign ? fmt_signed(*v, prec) : fmt_fixed(*v, prec);
}

struct JoinKey {
  std::string problem;
  int step = 0;
  std::uint64_t temp_bits = 0;
  int sample = 0;
  auto operator<=>(const JoinKey&) const = default;
};

JoinKey join_key(const TraceRecord& r) {
  std::uint64_t bits;
  double t = r.temperature;
  std::memcpy(&bits, &t, sizeof bits);
  return JoinKey{r.problem_id, r.checkpoint_step, bits, r.sample_index};
}

std::string key_string(const TraceRecord& r) {
  return r.problem_id + "|" + std::to_string(r.checkpoint_step) + "|" +
         fmt_fixed(r.temperature, 6) + "|" + std::to_string(r.sample_index) + "|" +
         pass_name(r.pass);
}

std::optional<double> gate_score(const TraceRecord& r, const std::string& source) {
  EntropySummary s = entropy_summary(r);
  if (source == "think") return s.mean_think;
  if (source == "answer") return s.mean_answer;
  return s.sequence;
}

double gate_score_or_throw(const TraceRecord& r, const std::string& source,
                           const std::string& what) {
  auto v = gate_score(r, source);
  if (!v)
    throw Error(what + " requires token entropies (" + source + " scope) on every record; " +
                "record " + key_string(r) + " lacks them");
  return *v;
}

void require_scored(const TraceRecord& r, const std::string& what) {
  if (!r.correct)
    throw Error(what + " requires a scored dataset; record " + key_string(r) +
                " has no correctness bit (run the score command first)");
}

void require_annotated(const TraceRecord& r, const std::string& what) {
  if (!r.shift)
    throw Error(what + " requires an annotated dataset; record " + key_string(r) +
                " has no shift verdict (run the annotate command first)");
}

const std::vector<double> kDeltaGrid = {0.0, 0.125, 0.25};

double pick_temperature(const RunDataset& ds, const std::optional<double>& requested) {
  if (ds.temperatures.empty()) throw Error("dataset has no records");
  if (!requested) return ds.temperatures.front();
  for (double t : ds.temperatures)
    if (t == *requested) return t;
  std::string have;
  for (double t : ds.temperatures) have += (have.empty() ? "" : ", ") + fmt_temp(t);
  throw Error("temperature " + fmt_temp(*requested) + " not present (have: " + have + ")");
}

}  // namespace

int cmd_ingest(const IngestArgs& a, const Config& c, const std::string& command_line,
               std::ostream& log) {
  if (a.out.empty()) throw Error("ingest: --out is required");
  Domain domain = domain_from_name(a.domain);
  if (a.g < 1) throw Error("ingest: --g must be >= 1");
  auto files = expand_inputs(a.inputs);
  if (files.empty()) throw Error("ingest: no .jsonl input files found");
  for (const auto& f : files) {
    std::string head = first_nonempty_line(f);
    if (head.empty()) continue;
    json j = json::parse(head, nullptr, false);
    if (j.is_object()) {
      if (j.contains("ahalab_dataset"))
        throw Error(f.string() + " is already a dataset file; ingest takes raw trace lines");
      if (j.contains("domain") && j["domain"].is_string() &&
          j["domain"].get<std::string>() != a.domain)
        throw Error("mixed-domain input: " + f.string() + " declares domain '" +
                    j["domain"].get<std::string>() + "', expected '" + a.domain + "'");
    }
  }
  RunDataset ds = load_run(files, domain, a.model, a.g);
  save_dataset(ds, a.out);
  write_manifest(a.out, make_manifest(command_line, c, files));
  log << "ingested " << ds.records.size() << " records from " << files.size() << " files into "
      << a.out << " (domain " << domain_name(ds.domain) << ", " << ds.checkpoint_grid.size()
      << " checkpoints, " << ds.temperatures.size() << " temperatures)\n";
  return 0;
}

namespace {

double reward_record(const TraceRecord& r, Domain domain, const Config& c) {
  switch (domain) {
    case Domain::math: {
      auto ans = extract_tagged_block(r.completion, "answer");
      return ans && score_math(*ans, r.gold_answer) ? 1.0 : 0.0;
    }
    case Domain::xword:
      return xword_reward(r.completion, r.gold_answer, c.xword);
    case Domain::rushhour: {
      auto ans = extract_tagged_block(r.completion, "answer");
      if (!ans) return 0.0;
      std::optional<Board> board;
      if (r.board) board = parse_board(*r.board);
      return rush_reward(*ans, r.gold_answer, board, c.rush);
    }
  }
  throw Error("unreachable domain");
}

}  // namespace

int cmd_score(const ScoreArgs& a, const Config& c, const std::string& command_line,
              std::ostream& log) {
  RunDataset ds = load_dataset(a.dataset);
  long long n_correct = 0;
  for (auto& r : ds.records) {
    r.correct = score_record(r, ds.domain);
    n_correct += *r.correct;
  }
  std::string out = a.out.empty() ? a.dataset : a.out;
  if (!a.rewards_out.empty()) {
    std::string csv;
    csv_row(csv, {"problem_id", "step", "temperature", "sample", "pass", "correct", "reward"});
    for (const auto& r : ds.records)
      csv_row(csv, {r.problem_id, std::to_string(r.checkpoint_step), fmt_temp(r.temperature),
                    std::to_string(r.sample_index), pass_name(r.pass),
                    *r.correct ? "1" : "0", fmt_fixed(reward_record(r, ds.domain, c), 6)});
    write_file_atomic(a.rewards_out, csv);
  }
  save_dataset(ds, out);
  write_manifest(out, make_manifest(command_line, c, {fs::path(a.dataset)}));
  log << "scored " << ds.records.size() << " records: " << n_correct << " correct ("
      << fmt_fixed(ds.records.empty() ? 0.0
                                      : 100.0 * static_cast<double>(n_correct) /
                                            static_cast<double>(ds.records.size()),
                   2)
      << "%)\n";
  return 0;
}

int cmd_annotate(const AnnotateArgs& a, const Config& c, const std::string& command_line,
                 std::ostream& log) {
  if (a.detector != "judge" && a.detector != "lexical")
    throw Error("annotate: --detector must be judge or lexical");
  RunDataset ds = load_dataset(a.dataset);
  std::vector<CueSpec> cues =
      a.cues_path.empty() ? builtin_cues() : cues_from_json(read_file(a.cues_path));

  std::unique_ptr<JudgeTransport> transport;
  if (a.detector == "judge") {
    if (a.endpoint.empty())
      transport = std::make_unique<StubJudgeTransport>();
    else
      transport = std::make_unique<HttpJudgeTransport>(a.endpoint, a.timeout_s);
  }
  JudgeOptions opts;
  opts.seed = c.seed;

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (a.force || !ds.records[i].shift) todo.push_back(i);
  // visit in a seeded shuffle so endpoint load is order-independent; the
  // rewritten dataset keeps its canonical record order regardless
  Rng shuffle_rng(hash_mix(c.seed, fnv1a64("annotate")));
  for (std::size_t i = todo.size(); i > 1; --i)
    std::swap(todo[i - 1], todo[shuffle_rng.below(i)]);

  std::vector<std::string> failed;
  long long positives = 0;
  for (std::size_t idx : todo) {
    TraceRecord& r = ds.records[idx];
    r.shift = a.detector == "lexical" ? lexical_detect(r, cues)
                                      : detect_shift(r, *transport, opts, &failed, cues);
    positives += r.shift->label;
  }

  std::string out = a.out.empty() ? a.dataset : a.out;
  save_dataset(ds, out);
  if (!failed.empty()) {
    std::string path = a.failed_log.empty() ? out + ".failed.jsonl" : a.failed_log;
    std::string body;
    for (const auto& prompt : failed) {
      json j;
      j["prompt"] = prompt;
      body += j.dump();
      body += '\n';
    }
    write_file_atomic(path, body);
  }
  write_manifest(out, make_manifest(command_line, c, {fs::path(a.dataset)}));
  log << "annotated " << todo.size() << " records (" << (ds.records.size() - todo.size())
      << " already labeled), " << positives << " positive, " << failed.size()
      << " failed calls\n";
  return 0;
}

int cmd_rq1(const Rq1Args& a, const Config& c, const std::string& command_line,
            std::ostream& log) {
  if (a.datasets.empty()) throw Error("rq1: at least one dataset is required");
  if (a.out.empty()) throw Error("rq1: --out is required");
  struct Counts {
    long long n = 0, shifted = 0, correct_shifted = 0, correct_unshifted = 0;
  };
  std::string csv;
  csv_row(csv, {"model", "domain", "n", "shifted", "pct_shift", "p_correct_given_noshift",
                "p_correct_given_shift"});
  auto emit = [&csv](const std::string& model, const std::string& domain, const Counts& k) {
    std::string pct = k.n ? fmt_fixed(100.0 * static_cast<double>(k.shifted) /
                                          static_cast<double>(k.n),
                                      2)
                          : "";
    long long unshifted = k.n - k.shifted;
    std::string p0 = unshifted ? fmt_fixed(static_cast<double>(k.correct_unshifted) /
                                               static_cast<double>(unshifted),
                                           3)
                               : "";
    std::string p1 = k.shifted ? fmt_fixed(static_cast<double>(k.correct_shifted) /
                                               static_cast<double>(k.shifted),
                                           3)
                               : "";
    csv_row(csv, {model, domain, std::to_string(k.n), std::to_string(k.shifted), pct, p0, p1});
  };

  Counts pooled;
  std::vector<fs::path> inputs;
  for (const auto& path : a.datasets) {
    RunDataset ds = load_dataset(path);
    inputs.emplace_back(path);
    Counts k;
    for (const auto& r : ds.records) {
      if (r.pass != Pass::pass1) continue;
      require_scored(r, "rq1");
      require_annotated(r, "rq1");
      ++k.n;
      if (r.shift->label) {
        ++k.shifted;
        k.correct_shifted += *r.correct;
      } else {
        k.correct_unshifted += *r.correct;
      }
    }
    emit(ds.model, domain_name(ds.domain), k);
    pooled.n += k.n;
    pooled.shifted += k.shifted;
    pooled.correct_shifted += k.correct_shifted;
    pooled.correct_unshifted += k.correct_unshifted;
  }
  emit("pooled", "all", pooled);
  write_file_atomic(a.out, csv);
  write_manifest(a.out, make_manifest(command_line, c, inputs));
  log << "rq1 over " << a.datasets.size() << " dataset(s): pooled n=" << pooled.n
      << " shifted=" << pooled.shifted << " ("
      << (pooled.n ? fmt_fixed(100.0 * static_cast<double>(pooled.shifted) /
                                   static_cast<double>(pooled.n),
                               2)
                   : "0")
      << "%)\n";
  return 0;
}

namespace {

std::string heat_grid_header() {
  return "delta1,delta2,delta3,events,pairs,prevalence_pct,mean_gain_pp,ci_lo_pp,ci_hi_pp\n";
}

}  // namespace

int cmd_aha(const AhaArgs& a, const Config& c, const std::string& command_line,
            std::ostream& log) {
  if (a.events_out.empty()) throw Error("aha: --events is required");
  RunDataset ds = load_dataset(a.dataset);
  double T = pick_temperature(ds, a.temperature);
  ThresholdConfig tc = threshold_config(c);
  if (a.no_gate) tc.bootstrap_gate = false;

  auto histories = build_histories(ds, T);
  auto events = aha_scan(histories, tc);

  std::string csv;
  csv_row(csv, {"problem_id", "step", "flagged", "provisional", "prior_p_max",
                "prior_shift_max", "prior_failure_margin", "stability_margin", "p_uncond",
                "p_cond", "gain", "gain_ci_lo", "gain_ci_hi", "shifted_at_k", "m_at_k"});
  long long flagged = 0, provisional = 0;
  for (const auto& ev : events) {
    flagged += ev.flagged && !ev.provisional;
    provisional += ev.provisional;
    csv_row(csv, {ev.problem_id, std::to_string(ev.step), ev.flagged ? "1" : "0",
                  ev.provisional ? "1" : "0", fmt_fixed(ev.prior_p_max, 6),
                  fmt_fixed(ev.prior_shift_max, 6), fmt_signed(ev.prior_failure_margin, 6),
                  fmt_signed(ev.stability_margin, 6), fmt_fixed(ev.p_uncond, 6),
                  fmt_fixed(ev.p_cond, 6), fmt_signed(ev.gain, 6),
                  opt_cell(ev.gain_ci_lo, 6, true), opt_cell(ev.gain_ci_hi, 6, true),
                  std::to_string(ev.shifted_at_k), std::to_string(ev.m_at_k)});
  }
  write_file_atomic(a.events_out, csv);

  if (!a.heatmap_out.empty()) {
    auto cells = heatmap(histories, tc, kDeltaGrid, kDeltaGrid, c.include_provisional);
    std::string heat = heat_grid_header();
    for (const auto& cell : cells) {
      std::string prev = cell.pairs ? fmt_fixed(100.0 * static_cast<double>(cell.events) /
                                                    static_cast<double>(cell.pairs),
                                                2)
                                    : "";
      csv_row(heat, {fmt_fixed(cell.delta1, 3), fmt_fixed(cell.delta2, 3),
                     gain_mode_label(tc.gain_mode, tc.delta3), std::to_string(cell.events),
                     std::to_string(cell.pairs), prev, "", "", ""});
    }
    write_file_atomic(a.heatmap_out, heat);
  }

  if (!a.trace_labels_out.empty()) {
    std::set<std::pair<std::string, int>> cells_on;
    for (const auto& ev : events)
      if (ev.flagged && (c.include_provisional || !ev.provisional))
        cells_on.emplace(ev.problem_id, ev.step);
    std::string body;
    for (const auto& r : ds.records) {
      if (r.pass != Pass::pass1 || r.temperature != T) continue;
      bool on = r.shift && r.shift->label &&
                cells_on.count({r.problem_id, r.checkpoint_step}) > 0;
      json j;
      j["problem_id"] = r.problem_id;
      j["step"] = r.checkpoint_step;
      j["temperature"] = r.temperature;
      j["sample"] = r.sample_index;
      j["detector"] = detector_name(Detector::formal_input_judge);
      j["label"] = on;
      body += j.dump();
      body += '\n';
    }
    write_file_atomic(a.trace_labels_out, body);
  }

  write_manifest(a.events_out, make_manifest(command_line, c, {fs::path(a.dataset)}));
  log << "aha over " << events.size() << " pairs at T=" << fmt_temp(T) << ": " << flagged
      << " events, " << provisional << " provisional (delta1=" << fmt_fixed(tc.delta1, 3)
      << ", delta2=" << fmt_fixed(tc.delta2, 3)
      << ", delta3=" << gain_mode_label(tc.gain_mode, tc.delta3)
      << (tc.bootstrap_gate ? ", gated" : ", ungated") << ")\n";
  return 0;
}

int cmd_grid_search(const GridArgs& a, const Config& c, const std::string& command_line,
                    std::ostream& log) {
  if (a.out.empty()) throw Error("grid-search: --out is required");
  RunDataset ds = load_dataset(a.dataset);
  double T = pick_temperature(ds, a.temperature);
  ThresholdConfig tc = threshold_config(c);
  auto histories = build_histories(ds, T);
  auto rows = grid_search(histories, tc, kDeltaGrid, kDeltaGrid, default_gain_rules(),
                          c.pair_resamples, c.include_provisional);

  std::string csv = heat_grid_header();
  for (const auto& row : rows) {
    std::string prev = row.pairs ? fmt_fixed(100.0 * static_cast<double>(row.events) /
                                                 static_cast<double>(row.pairs),
                                             2)
                                 : "";
    csv_row(csv, {fmt_fixed(row.point.delta1, 3), fmt_fixed(row.point.delta2, 3),
                  gain_mode_label(row.point.gain_mode, row.point.delta3),
                  std::to_string(row.events), std::to_string(row.pairs), prev,
                  opt_cell(row.mean_gain_pp, 2, true), opt_cell(row.ci_lo_pp, 2, true),
                  opt_cell(row.ci_hi_pp, 2, true)});
  }
  write_file_atomic(a.out, csv);
  write_manifest(a.out, make_manifest(command_line, c, {fs::path(a.dataset)}));
  if (!rows.empty()) {
    const auto& top = rows.front();
    log << "grid-search at T=" << fmt_temp(T) << ": best (delta1="
        << fmt_fixed(top.point.delta1, 3) << ", delta2=" << fmt_fixed(top.point.delta2, 3)
        << ", delta3=" << gain_mode_label(top.point.gain_mode, top.point.delta3) << ") with "
        << top.events << "/" << top.pairs << " events"
        << (top.mean_gain_pp ? ", mean gain " + fmt_signed(*top.mean_gain_pp, 2) + "pp" : "")
        << "\n";
  }
  return 0;
}

namespace {

json fit_to_json(const FitResult& fit, const std::string& focal_label,
                 bool continuous_focal) {
  json j;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["n_rows"] = fit.n_rows;
  j["k_cols"] = fit.k_cols;
  j["groups_used"] = fit.groups_used;
  j["groups_dropped"] = fit.groups_dropped;
  j["separation"] = fit.separation;
  j["loglik"] = fit.loglik;
  j["cluster"] = "problem";
  j["covariance"] = "CR1";
  json coefs = json::array();
  std::vector<std::size_t> named;
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    if (fit.names[i].rfind("fe:", 0) == 0) continue;
    named.push_back(i);
    json row;
    row["name"] = fit.names[i];
    row["beta"] = fit.beta[i];
    row["se"] = fit.se[i];
    row["z"] = fit.z[i];
    row["p"] = fit.p[i];
    row["log10_p"] = fit.log10_p[i];
    coefs.push_back(row);
  }
  j["coefficients"] = coefs;
  json focal;
  focal["name"] = focal_label;
  focal["beta"] = fit.beta[1];
  focal["se"] = fit.se[1];
  focal["z"] = fit.z[1];
  focal["p"] = fit.p[1];
  focal["log10_p"] = fit.log10_p[1];
  focal[continuous_focal ? "or_per_1sigma" : "or"] = std::exp(fit.beta[1]);
  if (fit.ame) focal["ame"] = *fit.ame;
  j["focal"] = focal;
  auto k = static_cast<std::size_t>(fit.k_cols);
  json cov = json::array();
  for (std::size_t r : named) {
    json line = json::array();
    for (std::size_t col : named) line.push_back(fit.cov[r * k + col]);
    cov.push_back(line);
  }
  j["cov_block"] = cov;
  return j;
}

json paired_to_json(const PairedResult& pr) {
  json j;
  j["n"] = pr.n;
  j["correct_p1"] = pr.correct1;
  j["correct_p2"] = pr.correct2;
  j["acc_p1"] = pr.acc1;
  j["acc_p2"] = pr.acc2;
  j["delta_pp"] = pr.delta_pp;
  j["wins_p1"] = pr.wins1;
  j["wins_p2"] = pr.wins2;
  if (pr.ci_lo_pp) j["ci_lo_pp"] = *pr.ci_lo_pp;
  if (pr.ci_hi_pp) j["ci_hi_pp"] = *pr.ci_hi_pp;
  return j;
}

}  // namespace

int cmd_regress(const RegressArgs& a, const Config& c, const std::string& command_line,
                std::ostream& log) {
  if (a.out.empty()) throw Error("regress: --out is required");
  RunDataset ds = load_dataset(a.dataset);
  const std::string& f = a.formula;
  std::vector<fs::path> inputs = {fs::path(a.dataset)};

  json report;
  report["formula"] = f;

  auto pass1_rows = [&](bool need_shift, bool need_correct) {
    std::vector<const TraceRecord*> rows;
    for (const auto& r : ds.records) {
      if (r.pass != Pass::pass1) continue;
      if (need_correct) require_scored(r, "formula '" + f + "'");
      if (need_shift) require_annotated(r, "formula '" + f + "'");
      rows.push_back(&r);
    }
    if (rows.empty()) throw Error("formula '" + f + "': no pass-1 records");
    return rows;
  };

  if (f == "rq1_pooled" || f == "rq2_stage" || f == "rq2_temp") {
    auto recs = pass1_rows(true, true);
    std::vector<RegRow> rows(recs.size());
    std::vector<std::string> cov_names;
    FitOptions fo;
    std::string formula_string;
    if (f == "rq1_pooled") {
      fo.fixed_effects = false;
      formula_string = "correct ~ shift";
    } else {
      std::vector<double> raw(recs.size());
      for (std::size_t i = 0; i < recs.size(); ++i)
        raw[i] = f == "rq2_stage" ? static_cast<double>(recs[i]->checkpoint_step)
                                  : recs[i]->temperature;
      std::string cov = f == "rq2_stage" ? "step_std" : "temp_std";
      auto std_col = standardize(raw, cov);
      for (std::size_t i = 0; i < recs.size(); ++i) rows[i].covariates = {std_col[i]};
      cov_names = {cov};
      formula_string = "correct ~ C(problem) + " + cov + " + shift";
    }
    for (std::size_t i = 0; i < recs.size(); ++i) {
      rows[i].y = *recs[i]->correct ? 1.0 : 0.0;
      rows[i].focal = recs[i]->shift->label ? 1.0 : 0.0;
      rows[i].group = recs[i]->problem_id;
    }
    FitResult fit = fit_logit_fe(rows, cov_names, "shift", fo);
    report["formula_string"] = formula_string;
    report["fit"] = fit_to_json(fit, "shift", false);
    log << f << ": beta(shift)=" << fmt_signed(fit.beta[1], 2)
        << " se=" << fmt_fixed(fit.se[1], 3) << " or=" << fmt_fixed(std::exp(fit.beta[1]), 2)
        << (fit.ame ? " ame=" + fmt_signed(*fit.ame, 4) : "") << "\n";
  } else if (f == "rq3_prevalence") {
    auto recs = pass1_rows(true, false);
    std::vector<double> raw(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i)
      raw[i] = gate_score_or_throw(*recs[i], c.gate_source, "formula '" + f + "'");
    auto ent = standardize(raw, "entropy_std");
    std::vector<RegRow> rows(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      rows[i].y = recs[i]->shift->label ? 1.0 : 0.0;
      rows[i].focal = ent[i];
      rows[i].group = recs[i]->problem_id;
    }
    FitResult fit = fit_logit_fe(rows, {}, "entropy_std", {});
    report["formula_string"] = "shift ~ C(problem) + entropy_std";
    report["fit"] = fit_to_json(fit, "entropy_std", true);
    log << f << ": beta(entropy_std)=" << fmt_signed(fit.beta[1], 3)
        << " or_per_1sigma=" << fmt_fixed(std::exp(fit.beta[1]), 2) << "\n";
  } else if (f == "pass2_entropy") {
    RunDataset p2ds = a.pass2_dataset.empty() ? ds : load_dataset(a.pass2_dataset);
    if (!a.pass2_dataset.empty()) inputs.emplace_back(a.pass2_dataset);
    std::map<JoinKey, const TraceRecord*> p1;
    for (const auto& r : ds.records)
      if (r.pass == Pass::pass1) p1[join_key(r)] = &r;
    std::vector<const TraceRecord*> p2recs;
    std::vector<double> raw;
    for (const auto& r : p2ds.records) {
      if (r.pass != Pass::pass2) continue;
      auto it = p1.find(join_key(r));
      if (it == p1.end())
        throw UnmatchedPairs("formula 'pass2_entropy': pass-2 record " + key_string(r) +
                             " has no pass-1 partner");
      require_scored(r, "formula '" + f + "'");
      raw.push_back(gate_score_or_throw(*it->second, c.gate_source, "formula '" + f + "'"));
      p2recs.push_back(&r);
    }
    if (p2recs.empty()) throw Error("formula 'pass2_entropy': no pass-2 records");
    auto ent = standardize(raw, "entropy_p1_std");
    std::vector<RegRow> rows(p2recs.size());
    for (std::size_t i = 0; i < p2recs.size(); ++i) {
      rows[i].y = *p2recs[i]->correct ? 1.0 : 0.0;
      rows[i].focal = ent[i];
      rows[i].group = p2recs[i]->problem_id;
    }
    FitResult fit = fit_logit_fe(rows, {}, "entropy_p1_std", {});
    report["formula_string"] = "correct_p2 ~ C(problem) + entropy_p1_std";
    report["fit"] = fit_to_json(fit, "entropy_p1_std", true);
    log << f << ": beta(entropy_p1_std)=" << fmt_signed(fit.beta[1], 3)
        << " or_per_1sigma=" << fmt_fixed(std::exp(fit.beta[1]), 2) << "\n";
  } else if (f == "rq3_strata") {
    auto recs = pass1_rows(true, true);
    std::vector<double> scores(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i)
      scores[i] = gate_score_or_throw(*recs[i], c.gate_source, "formula '" + f + "'");
    GateResult gate = entropy_gate(scores, c.gate_quantile);
    report["formula_string"] = "correct ~ shift | entropy stratum";
    report["gate_source"] = c.gate_source;
    report["gate_quantile"] = c.gate_quantile;
    report["threshold"] = gate.threshold;
    json strata = json::array();
    for (int side = 1; side >= 0; --side) {
      json s;
      s["name"] = side ? "high" : "low";
      std::vector<std::uint8_t> correct, shifted;
      std::vector<RegRow> rows;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        if ((gate.high[i] != 0) != (side != 0)) continue;
        correct.push_back(*recs[i]->correct ? 1 : 0);
        shifted.push_back(recs[i]->shift->label ? 1 : 0);
        RegRow row;
        row.y = correct.back();
        row.focal = shifted.back();
        row.group = recs[i]->problem_id;
        rows.push_back(std::move(row));
      }
      s["n"] = correct.size();
      long long n_shift = 0;
      for (auto b : shifted) n_shift += b;
      s["shifted"] = n_shift;
      try {
        s["delta_pp"] = shift_contrast_pp(correct, shifted);
      } catch (const EmptyStratumSide&) {
        s["delta_pp"] = nullptr;
      }
      try {
        FitOptions fo;
        fo.fixed_effects = false;
        FitResult fit = fit_logit_fe(rows, {}, "shift", fo);
        s["fit"] = fit_to_json(fit, "shift", false);
      } catch (const Error& e) {
        s["fit"] = nullptr;
        s["fit_error"] = e.what();
      }
      strata.push_back(s);
    }
    report["strata"] = strata;
    log << f << ": threshold=" << fmt_fixed(gate.threshold, 6) << "\n";
  } else {
    throw Error("unknown formula '" + f +
                "' (expected rq1_pooled, rq2_stage, rq2_temp, rq3_prevalence, rq3_strata, "
                "or pass2_entropy)");
  }

  write_file_atomic(a.out, report.dump(2) + "\n");
  write_manifest(a.out, make_manifest(command_line, c, inputs));
  return 0;
}

int cmd_intervene(const InterveneArgs& a, const Config& c, const std::string& command_line,
                  std::ostream& log) {
  if (a.out.empty()) throw Error("intervene: --out is required");
  RunDataset ds1 = load_dataset(a.pass1);
  RunDataset ds2 = load_dataset(a.pass2);
  std::map<JoinKey, const TraceRecord*> p1, p2;
  for (const auto& r : ds1.records)
    if (r.pass == Pass::pass1) p1[join_key(r)] = &r;
  for (const auto& r : ds2.records)
    if (r.pass == Pass::pass2) p2[join_key(r)] = &r;
  if (p1.empty()) throw Error("intervene: " + a.pass1 + " holds no pass-1 records");
  if (p2.empty()) throw Error("intervene: " + a.pass2 + " holds no pass-2 records");

  std::vector<std::string> orphans;
  for (const auto& [k, r] : p1)
    if (!p2.count(k)) orphans.push_back("pass-1 only: " + key_string(*r));
  for (const auto& [k, r] : p2)
    if (!p1.count(k)) orphans.push_back("pass-2 only: " + key_string(*r));
  if (!orphans.empty()) {
    std::string msg = "intervene: " + std::to_string(orphans.size()) + " unmatched pairs";
    for (std::size_t i = 0; i < orphans.size() && i < 8; ++i) msg += "\n  " + orphans[i];
    if (orphans.size() > 8) msg += "\n  ...";
    throw UnmatchedPairs(msg);
  }

  std::vector<std::uint8_t> bits1, bits2;
  std::vector<const TraceRecord*> joined1;
  for (const auto& [k, r1] : p1) {
    const TraceRecord* r2 = p2.at(k);
    require_scored(*r1, "intervene");
    require_scored(*r2, "intervene");
    bits1.push_back(*r1->correct ? 1 : 0);
    bits2.push_back(*r2->correct ? 1 : 0);
    joined1.push_back(r1);
  }

  PairedResult overall =
      paired_intervention(bits1, bits2, c.bootstrap_resamples, c.alpha, c.seed);
  json report;
  report["overall"] = paired_to_json(overall);

  if (a.gate) {
    std::vector<double> scores(joined1.size());
    for (std::size_t i = 0; i < joined1.size(); ++i)
      scores[i] = gate_score_or_throw(*joined1[i], c.gate_source, "intervene --gate");
    GateResult gate = entropy_gate(scores, c.gate_quantile);
    json buckets;
    buckets["threshold"] = gate.threshold;
    for (int side = 1; side >= 0; --side) {
      std::vector<std::uint8_t> b1, b2;
      for (std::size_t i = 0; i < joined1.size(); ++i) {
        if ((gate.high[i] != 0) != (side != 0)) continue;
        b1.push_back(bits1[i]);
        b2.push_back(bits2[i]);
      }
      const char* name = side ? "high" : "low";
      if (b1.empty()) {
        buckets[name] = nullptr;
        continue;
      }
      buckets[name] = paired_to_json(paired_intervention(
          b1, b2, c.bootstrap_resamples, c.alpha, hash_mix(c.seed, side ? 1 : 2)));
    }
    report["buckets"] = buckets;
  }

  write_file_atomic(a.out, report.dump(2) + "\n");
  write_manifest(a.out,
                 make_manifest(command_line, c, {fs::path(a.pass1), fs::path(a.pass2)}));
  log << "intervene: n=" << overall.n << " acc_p1=" << fmt_fixed(overall.acc1, 4)
      << " acc_p2=" << fmt_fixed(overall.acc2, 4)
      << " delta=" << fmt_signed(overall.delta_pp, 2) << "pp wins=" << overall.wins2 << "/"
      << overall.wins1 << "\n";
  return 0;
}

namespace {

// a label source is either an annotated dataset or a {key, label} JSONL file
std::pair<std::vector<std::string>, std::vector<std::uint8_t>> load_labels(
    const fs::path& path) {
  std::string head = first_nonempty_line(path);
  json probe = json::parse(head, nullptr, false);
  std::vector<std::string> keys;
  std::vector<std::uint8_t> labels;
  if (probe.is_object() && probe.contains("ahalab_dataset")) {
    RunDataset ds = load_dataset(path);
    for (const auto& r : ds.records) {
      require_annotated(r, "agreement");
      keys.push_back(key_string(r));
      labels.push_back(r.shift->label ? 1 : 0);
    }
  } else {
    auto lines = read_lines(path);
    std::vector<std::pair<std::string, std::uint8_t>> pairs;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      json j = json::parse(lines[i], nullptr, false);
      if (!j.is_object() || !j.contains("key") || !j.contains("label") ||
          !j["key"].is_string() || !j["label"].is_boolean())
        throw Error(path.string() + ":" + std::to_string(i + 1) +
                    ": expected {\"key\": string, \"label\": bool}");
      pairs.emplace_back(j["key"].get<std::string>(), j["label"].get<bool>() ? 1 : 0);
    }
    std::sort(pairs.begin(), pairs.end());
    for (std::size_t i = 1; i < pairs.size(); ++i)
      if (pairs[i].first == pairs[i - 1].first)
        throw DuplicateKey(path.string() + ": duplicate key '" + pairs[i].first + "'");
    for (auto& [k, v] : pairs) {
      keys.push_back(std::move(k));
      labels.push_back(v);
    }
  }
  if (keys.empty()) throw Error(path.string() + ": no labels");
  return {std::move(keys), std::move(labels)};
}

}  // namespace

int cmd_agreement(const AgreementArgs& a, const Config& c, const std::string& command_line,
                  std::ostream& log) {
  if (a.label_files.size() < 2) throw Error("agreement: need at least two label files");
  if (a.out.empty()) throw Error("agreement: --out is required");

  std::vector<std::vector<std::string>> keys;
  std::vector<std::vector<std::uint8_t>> labels;
  for (const auto& path : a.label_files) {
    auto [k, l] = load_labels(path);
    keys.push_back(std::move(k));
    labels.push_back(std::move(l));
  }
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (keys[i].size() != keys[0].size())
      throw Error("agreement: " + a.label_files[i] + " has " + std::to_string(keys[i].size()) +
                  " items, " + a.label_files[0] + " has " + std::to_string(keys[0].size()));
    for (std::size_t j = 0; j < keys[0].size(); ++j)
      if (keys[i][j] != keys[0][j])
        throw Error("agreement: misaligned label files: item " + std::to_string(j) + " is '" +
                    keys[0][j] + "' in " + a.label_files[0] + " but '" + keys[i][j] + "' in " +
                    a.label_files[i]);
  }

  AgreementReport rep = ensemble_labels(labels, c.bootstrap_resamples, c.alpha, c.seed);

  json out;
  out["labelers"] = rep.labelers;
  out["items"] = rep.items;
  json pairs = json::array();
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      json pj;
      pj["a"] = a.label_files[i];
      pj["b"] = a.label_files[j];
      long long agree = 0;
      for (std::size_t t = 0; t < labels[i].size(); ++t) agree += labels[i][t] == labels[j][t];
      pj["po"] = static_cast<double>(agree) / static_cast<double>(labels[i].size());
      try {
        pj["kappa"] = cohen_kappa(labels[i], labels[j]);
      } catch (const KappaUndefined&) {
        pj["kappa"] = nullptr;
      }
      pairs.push_back(pj);
    }
  out["pairs"] = pairs;
  out["pairs_total"] = rep.pairs_total;
  out["mean_po"] = rep.mean_po;
  if (rep.mean_kappa) out["mean_kappa"] = *rep.mean_kappa;
  else out["mean_kappa"] = nullptr;
  out["pairs_degenerate"] = rep.pairs_degenerate;
  if (rep.kappa_ci_lo && rep.kappa_ci_hi)
    out["kappa_ci"] = {*rep.kappa_ci_lo, *rep.kappa_ci_hi};
  else
    out["kappa_ci"] = nullptr;

  write_file_atomic(a.out, out.dump(2) + "\n");
  std::vector<fs::path> inputs;
  for (const auto& p : a.label_files) inputs.emplace_back(p);
  write_manifest(a.out, make_manifest(command_line, c, inputs));
  log << "agreement over " << rep.labelers << " labelers, " << rep.items
      << " items: mean_po=" << fmt_fixed(rep.mean_po, 3)
      << (rep.mean_kappa ? " mean_kappa=" + fmt_fixed(*rep.mean_kappa, 3)
                         : " mean_kappa=undefined")
      << "\n";
  return 0;
}

int cmd_entropy(const EntropyArgs& a, const Config& c, const std::string& command_line,
                std::ostream& log) {
  if (a.out.empty()) throw Error("entropy: --out is required");
  RunDataset ds = load_dataset(a.dataset);

  // the gate population is pass-1 records carrying the configured score
  std::vector<double> scores;
  std::vector<std::size_t> gate_rows;
  std::vector<EntropySummary> summaries(ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    summaries[i] = entropy_summary(ds.records[i]);
    if (ds.records[i].pass != Pass::pass1) continue;
    auto v = gate_score(ds.records[i], c.gate_source);
    if (v) {
      scores.push_back(*v);
      gate_rows.push_back(i);
    }
  }
  std::vector<std::string> gate_cell(ds.records.size(), "");
  std::optional<double> threshold;
  if (!scores.empty()) {
    GateResult gate = entropy_gate(scores, c.gate_quantile);
    threshold = gate.threshold;
    for (std::size_t i = 0; i < gate_rows.size(); ++i)
      gate_cell[gate_rows[i]] = gate.high[i] ? "1" : "0";
  }

  std::string csv;
  csv_row(csv, {"problem_id", "step", "temperature", "sample", "pass", "think_mean",
                "answer_mean", "sequence_mean", "gate_high"});
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    csv_row(csv, {r.problem_id, std::to_string(r.checkpoint_step), fmt_temp(r.temperature),
                  std::to_string(r.sample_index), pass_name(r.pass),
                  opt_cell(summaries[i].mean_think, 6), opt_cell(summaries[i].mean_answer, 6),
                  opt_cell(summaries[i].sequence, 6), gate_cell[i]});
  }
  write_file_atomic(a.out, csv);
  write_manifest(a.out, make_manifest(command_line, c, {fs::path(a.dataset)}));
  log << "entropy over " << ds.records.size() << " records; gate population "
      << scores.size()
      << (threshold ? ", threshold=" + fmt_fixed(*threshold, 6) : ", no gate scores") << "\n";
  return 0;
}

int cmd_cues(const CuesArgs& a, const Config& c, const std::string& command_line,
             std::ostream& log) {
  if (a.out.empty()) throw Error("cues: --out is required");
  write_file_atomic(a.out, cues_to_json(builtin_cues()));
  write_manifest(a.out, make_manifest(command_line, c, {}));
  log << "wrote " << builtin_cues().size() << " cue patterns to " << a.out << "\n";
  return 0;
}

}  // namespace ahalab
