#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ahalab/ingest.hpp"
#include "ahalab/stats.hpp"
#include "ahalab/trace_model.hpp"

namespace ahalab {

struct ProblemHistory {
  std::string problem_id;
  std::vector<CheckpointCell> cells;  // ascending step order
};

enum class GainMode { none, eps, threshold };

std::string gain_mode_label(GainMode m, double delta3);

struct ThresholdConfig {
  double delta1 = 0.125;
  double delta2 = 0.125;
  GainMode gain_mode = GainMode::eps;  // eps: any strictly positive gain
  double delta3 = 0.125;               // used when gain_mode == threshold
  int min_prior_steps = 2;
  bool bootstrap_gate = true;  // one-sided CI on the gain must exclude 0
  int bootstrap_resamples = 2000;
  double alpha = 0.05;
  double provisional_halfwidth = 0.08;
  double eps = 1e-6;  // conditional-estimator denominator guard
  std::uint64_t seed = 714;
};

// fraction of correct samples in the cell
double p_hat(const CheckpointCell& cell);
// fraction of shifted samples
double shift_rate(const CheckpointCell& cell);
// correct-and-shifted over shifted, with the eps denominator guard
double p_hat_given_shift(const CheckpointCell& cell, double eps = 1e-6);

// full decision for the checkpoint at cells[k_index]; requires at least
// min_prior_steps earlier checkpoints (InsufficientHistory otherwise)
AhaEvent aha_detect(const ProblemHistory& history, std::size_t k_index,
                    const ThresholdConfig& cfg);

// threshold-independent per-pair evaluation, reusable across a grid so that
// every (delta1, delta2, delta3) cell sees identical bootstrap draws
struct PairEval {
  std::string problem_id;
  int step = 0;
  double prior_p_max = 0;
  double prior_shift_max = 0;
  double p_uncond = 0;
  double p_cond = 0;
  double gain = 0;
  int shifted_at_k = 0;
  int m_at_k = 0;
  std::optional<double> gain_q_lo, gain_q_hi;  // one-sided bootstrap quantiles
  double hw_uncond = 0, hw_cond = 0;           // CI half-widths
};

std::vector<PairEval> evaluate_pairs(const std::vector<ProblemHistory>& histories,
                                     const ThresholdConfig& cfg);

// pure threshold application on a precomputed evaluation
AhaEvent judge_pair(const PairEval& pe, const ThresholdConfig& cfg);

// every eligible pair, judged under cfg
std::vector<AhaEvent> aha_scan(const std::vector<ProblemHistory>& histories,
                               const ThresholdConfig& cfg);

struct HeatmapCell {
  double delta1 = 0;
  double delta2 = 0;
  long long events = 0;
  long long pairs = 0;
};

// event counts across a (delta1, delta2) grid with the gain rule fixed by
// cfg; the trace-level CI gate is not applied here, and provisional events
// are excluded unless include_provisional
std::vector<HeatmapCell> heatmap(const std::vector<ProblemHistory>& histories,
                                 const ThresholdConfig& cfg,
                                 const std::vector<double>& delta1_grid,
                                 const std::vector<double>& delta2_grid,
                                 bool include_provisional = false);

struct GridPoint {
  double delta1 = 0;
  double delta2 = 0;
  GainMode gain_mode = GainMode::eps;
  double delta3 = 0;
};

struct GridRow {
  GridPoint point;
  long long events = 0;
  long long pairs = 0;
  std::optional<double> mean_gain_pp;
  std::optional<double> ci_lo_pp, ci_hi_pp;  // bootstrap over flagged pairs
};

// ranked sweep over threshold configurations: (CI lower bound desc,
// prevalence desc, mean gain desc), zero-event rows last, lexicographic
// (delta1, delta2, gain mode) as the final deterministic tie-break
std::vector<GridRow> grid_search(const std::vector<ProblemHistory>& histories,
                                 const ThresholdConfig& cfg,
                                 const std::vector<double>& delta1_grid,
                                 const std::vector<double>& delta2_grid,
                                 const std::vector<GridPoint>& gain_rules,
                                 int pair_resamples = 2000,
                                 bool include_provisional = false);

// standard gain-rule column {none, eps, 0.05, 0.125} paired with a
// (delta1, delta2) grid
std::vector<GridPoint> default_gain_rules();

// cells assembled from a scored + annotated dataset, one temperature slice,
// pass-1 traces only
std::vector<ProblemHistory> build_histories(const RunDataset& ds, double temperature);

}  // namespace ahalab
