#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ahalab/report.hpp"

namespace {

std::string quote_arg(const std::string& a) {
  if (!a.empty() && a.find_first_of(" \t'\"\\") == std::string::npos) return a;
  std::string q = "'";
  for (char ch : a) {
    if (ch == '\'') q += "'\\''";
    else q += ch;
  }
  q += "'";
  return q;
}

std::string reassemble(int argc, char** argv) {
  std::string line;
  for (int i = 0; i < argc; ++i) {
    if (i) line += ' ';
    line += quote_arg(argv[i]);
  }
  return line;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace ahalab;

  CLI::App app{"trace analytics for checkpointed reasoning runs"};
  app.set_version_flag("--version", kToolkitVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "single key=value override, repeatable");

  IngestArgs ingest;
  auto* s_ingest = app.add_subcommand("ingest", "collect raw trace JSONL into a dataset");
  s_ingest->add_option("inputs", ingest.inputs, ".jsonl files or directories")
      ->required()
      ->expected(-1);
  s_ingest->add_option("--domain", ingest.domain, "math | xword | rushhour")->required();
  s_ingest->add_option("--out", ingest.out, "dataset output path")->required();
  s_ingest->add_option("--model", ingest.model, "model label for reports");
  s_ingest->add_option("--g", ingest.g, "declared samples per checkpoint cell");

  ScoreArgs score;
  auto* s_score = app.add_subcommand("score", "attach strict correctness bits");
  s_score->add_option("dataset", score.dataset, "dataset path")->required();
  s_score->add_option("--out", score.out, "output path (default: in place)");
  s_score->add_option("--rewards", score.rewards_out, "optional shaped-reward CSV");

  AnnotateArgs annotate;
  auto* s_annotate = app.add_subcommand("annotate", "attach shift-of-reasoning verdicts");
  s_annotate->add_option("dataset", annotate.dataset, "dataset path")->required();
  s_annotate->add_option("--out", annotate.out, "output path (default: in place)");
  s_annotate->add_option("--detector", annotate.detector, "judge | lexical");
  s_annotate->add_option("--endpoint", annotate.endpoint,
                         "judge HTTP endpoint (default: built-in offline judge)");
  s_annotate->add_option("--timeout", annotate.timeout_s, "judge call timeout, seconds");
  s_annotate->add_option("--failed-log", annotate.failed_log,
                         "failed-call prompt log (default: <out>.failed.jsonl)");
  s_annotate->add_option("--cues", annotate.cues_path, "cue whitelist JSON override");
  s_annotate->add_flag("--force", annotate.force, "relabel records that already carry verdicts");

  Rq1Args rq1;
  auto* s_rq1 = app.add_subcommand("rq1", "shift prevalence and accuracy split table");
  s_rq1->add_option("datasets", rq1.datasets, "dataset paths")->required()->expected(-1);
  s_rq1->add_option("--out", rq1.out, "CSV output path")->required();

  AhaArgs aha;
  auto* s_aha = app.add_subcommand("aha", "formal event detection over checkpoint pairs");
  s_aha->add_option("dataset", aha.dataset, "dataset path")->required();
  s_aha->add_option("--temperature", aha.temperature,
                    "temperature slice (default: lowest present)");
  s_aha->add_option("--events", aha.events_out, "per-pair decision CSV")->required();
  s_aha->add_option("--heatmap", aha.heatmap_out, "optional threshold-grid count CSV");
  s_aha->add_option("--trace-labels", aha.trace_labels_out,
                    "optional trace-level label JSONL");
  s_aha->add_flag("--no-gate", aha.no_gate, "drop the bootstrap CI gate");

  GridArgs grid;
  auto* s_grid = app.add_subcommand("grid-search", "ranked threshold sweep");
  s_grid->add_option("dataset", grid.dataset, "dataset path")->required();
  s_grid->add_option("--temperature", grid.temperature,
                     "temperature slice (default: lowest present)");
  s_grid->add_option("--out", grid.out, "ranked CSV output path")->required();

  RegressArgs regress;
  auto* s_regress = app.add_subcommand("regress", "logistic models over trace records");
  s_regress->add_option("dataset", regress.dataset, "dataset path")->required();
  s_regress
      ->add_option("--formula", regress.formula,
                   "rq1_pooled | rq2_stage | rq2_temp | rq3_prevalence | rq3_strata | "
                   "pass2_entropy")
      ->required();
  s_regress->add_option("--pass2", regress.pass2_dataset,
                        "second dataset holding pass-2 records (pass2_entropy)");
  s_regress->add_option("--out", regress.out, "JSON report path")->required();

  InterveneArgs intervene;
  auto* s_intervene = app.add_subcommand("intervene", "paired pass-1 vs pass-2 comparison");
  s_intervene->add_option("pass1", intervene.pass1, "pass-1 dataset")->required();
  s_intervene->add_option("pass2", intervene.pass2, "pass-2 dataset")->required();
  s_intervene->add_option("--out", intervene.out, "JSON report path")->required();
  s_intervene->add_flag("--gate", intervene.gate, "add high/low entropy sub-reports");

  AgreementArgs agreement;
  auto* s_agreement = app.add_subcommand("agreement", "inter-labeler agreement report");
  s_agreement
      ->add_option("labels", agreement.label_files,
                   "two or more datasets or {key,label} JSONL files")
      ->required()
      ->expected(-1);
  s_agreement->add_option("--out", agreement.out, "JSON report path")->required();

  EntropyArgs entropy;
  auto* s_entropy = app.add_subcommand("entropy", "per-record entropy summary with gate flags");
  s_entropy->add_option("dataset", entropy.dataset, "dataset path")->required();
  s_entropy->add_option("--out", entropy.out, "CSV output path")->required();

  CuesArgs cues;
  auto* s_cues = app.add_subcommand("cues", "dump the built-in cue whitelist");
  s_cues->add_option("--out", cues.out, "JSON output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
      apply_config_kv(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    std::string command_line = reassemble(argc, argv);

    if (app.got_subcommand(s_ingest))
      return cmd_ingest(ingest, cfg, command_line, std::cout);
    if (app.got_subcommand(s_score)) return cmd_score(score, cfg, command_line, std::cout);
    if (app.got_subcommand(s_annotate))
      return cmd_annotate(annotate, cfg, command_line, std::cout);
    if (app.got_subcommand(s_rq1)) return cmd_rq1(rq1, cfg, command_line, std::cout);
    if (app.got_subcommand(s_aha)) return cmd_aha(aha, cfg, command_line, std::cout);
    if (app.got_subcommand(s_grid))
      return cmd_grid_search(grid, cfg, command_line, std::cout);
    if (app.got_subcommand(s_regress))
      return cmd_regress(regress, cfg, command_line, std::cout);
    if (app.got_subcommand(s_intervene))
      return cmd_intervene(intervene, cfg, command_line, std::cout);
    if (app.got_subcommand(s_agreement))
      return cmd_agreement(agreement, cfg, command_line, std::cout);
    if (app.got_subcommand(s_entropy))
      return cmd_entropy(entropy, cfg, command_line, std::cout);
    if (app.got_subcommand(s_cues)) return cmd_cues(cues, cfg, command_line, std::cout);
    throw Error("no subcommand dispatched");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
