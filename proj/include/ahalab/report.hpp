#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ahalab/aha_formal.hpp"
#include "ahalab/ingest.hpp"
#include "ahalab/scoring.hpp"
#include "ahalab/shift_detect.hpp"
#include "ahalab/stats.hpp"

namespace ahalab {

inline constexpr const char* kToolkitVersion = "0.1.0";

// runtime knobs shared by all commands; a versioned key=value file seeds
// them and individual CLI flags override single keys afterwards
struct Config {
  int config_version = 1;
  std::uint64_t seed = 714;

  // formal event detection
  double delta1 = 0.125;
  double delta2 = 0.125;
  std::string delta3 = "eps";  // "none" | "eps" | nonnegative number
  int min_prior_steps = 2;
  int bootstrap_resamples = 2000;
  double alpha = 0.05;
  double provisional_halfwidth = 0.08;
  bool include_provisional = false;
  int pair_resamples = 2000;  // grid-search CI over flagged pairs

  // entropy gating
  double gate_quantile = 0.80;
  std::string gate_source = "sequence";  // sequence | think | answer

  // reward shaping
  RushWeights rush;
  XwordShaping xword;
};

Config load_config(const std::filesystem::path& path);
// single "key=value" override; throws Error on unknown keys or bad values
void apply_config_kv(Config& c, const std::string& key, const std::string& value);
// canonical sorted key=value rendering; the manifest digest hashes this
std::string normalized_config(const Config& c);
std::uint64_t config_digest(const Config& c);
// decodes the delta3 string into the detection config
ThresholdConfig threshold_config(const Config& c);

struct RunManifest {
  std::string command_line;
  std::uint64_t digest = 0;  // over normalized_config
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::uint64_t>> inputs;  // path, content hash
};

std::string manifest_json(const RunManifest& m);
// writes <out>.manifest.json next to a command's primary output
void write_manifest(const std::filesystem::path& primary_out, const RunManifest& m);
RunManifest make_manifest(const std::string& command_line, const Config& c,
                          const std::vector<std::filesystem::path>& inputs);

// ---- command entry points (each returns a process exit code) ----

struct IngestArgs {
  std::vector<std::string> inputs;  // .jsonl files or directories of them
  std::string domain;
  std::string out;
  std::string model = "model";
  int g = 8;
};
int cmd_ingest(const IngestArgs& a, const Config& c, const std::string& command_line,
               std::ostream& log);

struct ScoreArgs {
  std::string dataset;
  std::string out;          // defaults to in-place
  std::string rewards_out;  // optional per-record shaped-reward CSV
};
int cmd_score(const ScoreArgs& a, const Config& c, const std::string& command_line,
              std::ostream& log);

struct AnnotateArgs {
  std::string dataset;
  std::string out;                // defaults to in-place
  std::string detector = "judge";  // judge | lexical
  std::string endpoint;            // empty: built-in offline judge
  double timeout_s = 30.0;
  std::string failed_log;  // defaults to <out>.failed.jsonl
  std::string cues_path;   // optional whitelist override
  bool force = false;      // relabel records that already carry a verdict
};
int cmd_annotate(const AnnotateArgs& a, const Config& c, const std::string& command_line,
                 std::ostream& log);

struct Rq1Args {
  std::vector<std::string> datasets;
  std::string out;  // CSV
};
int cmd_rq1(const Rq1Args& a, const Config& c, const std::string& command_line,
            std::ostream& log);

struct AhaArgs {
  std::string dataset;
  std::optional<double> temperature;  // defaults to the lowest in the dataset
  std::string events_out;             // CSV, per-pair decisions
  std::string heatmap_out;            // optional CSV over the delta1 x delta2 grid
  std::string trace_labels_out;       // optional JSONL trace-level projection
  bool no_gate = false;               // drop the per-pair bootstrap CI gate
};
int cmd_aha(const AhaArgs& a, const Config& c, const std::string& command_line,
            std::ostream& log);

struct GridArgs {
  std::string dataset;
  std::optional<double> temperature;
  std::string out;  // ranked CSV
};
int cmd_grid_search(const GridArgs& a, const Config& c, const std::string& command_line,
                    std::ostream& log);

struct RegressArgs {
  std::string dataset;
  std::string pass2_dataset;  // pass2_entropy joins against this when given
  std::string formula;  // rq1_pooled | rq2_stage | rq2_temp | rq3_prevalence |
                        // rq3_strata | pass2_entropy
  std::string out;      // JSON report
};
int cmd_regress(const RegressArgs& a, const Config& c, const std::string& command_line,
                std::ostream& log);

struct InterveneArgs {
  std::string pass1;
  std::string pass2;
  std::string out;   // JSON report
  bool gate = false;  // add high/low entropy sub-reports
};
int cmd_intervene(const InterveneArgs& a, const Config& c, const std::string& command_line,
                  std::ostream& log);

struct AgreementArgs {
  std::vector<std::string> label_files;  // datasets or {key,label} JSONL, K >= 2
  std::string out;                       // JSON report
};
int cmd_agreement(const AgreementArgs& a, const Config& c, const std::string& command_line,
                  std::ostream& log);

struct EntropyArgs {
  std::string dataset;
  std::string out;  // per-record CSV with gate flags
};
int cmd_entropy(const EntropyArgs& a, const Config& c, const std::string& command_line,
                std::ostream& log);

struct CuesArgs {
  std::string out;  // JSON dump of the active whitelist
};
int cmd_cues(const CuesArgs& a, const Config& c, const std::string& command_line,
             std::ostream& log);

}  // namespace ahalab
