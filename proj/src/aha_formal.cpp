#include "ahalab/aha_formal.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace ahalab {

std::string gain_mode_label(GainMode m, double delta3) {
  switch (m) {
    case GainMode::none: return "none";
    case GainMode::eps: return "eps";
    case GainMode::threshold: return fmt_fixed(delta3, 3);
  }
  throw Error("unreachable gain mode");
}

double p_hat(const CheckpointCell& cell) {
  if (cell.correct.empty()) throw Error("p_hat: empty cell");
  long long c = 0;
  for (auto b : cell.correct) c += b != 0;
  return static_cast<double>(c) / static_cast<double>(cell.correct.size());
}

double shift_rate(const CheckpointCell& cell) {
  if (cell.shifted.empty()) throw Error("shift_rate: empty cell");
  long long s = 0;
  for (auto b : cell.shifted) s += b != 0;
  return static_cast<double>(s) / static_cast<double>(cell.shifted.size());
}

double p_hat_given_shift(const CheckpointCell& cell, double eps) {
  if (cell.correct.size() != cell.shifted.size() || cell.correct.empty())
    throw Error("p_hat_given_shift: malformed cell");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < cell.correct.size(); ++i) {
    if (cell.shifted[i]) {
      den += 1;
      if (cell.correct[i]) num += 1;
    }
  }
  return num / (den + eps);
}

namespace {

PairEval evaluate_one(const std::string& problem_id, const std::vector<CheckpointCell>& cells,
                      std::size_t k, const ThresholdConfig& cfg) {
  PairEval pe;
  pe.problem_id = problem_id;
  pe.step = cells[k].step;
  pe.prior_p_max = 0;
  pe.prior_shift_max = 0;
  for (std::size_t i = 0; i < k; ++i) {
    pe.prior_p_max = std::max(pe.prior_p_max, p_hat(cells[i]));
    pe.prior_shift_max = std::max(pe.prior_shift_max, shift_rate(cells[i]));
  }
  const CheckpointCell& cell = cells[k];
  pe.m_at_k = cell.m();
  for (auto b : cell.shifted) pe.shifted_at_k += b != 0;
  pe.p_uncond = p_hat(cell);
  pe.p_cond = p_hat_given_shift(cell, cfg.eps);
  pe.gain = pe.p_cond - pe.p_uncond;

  if (cfg.bootstrap_resamples > 0 && cell.m() > 0) {
    const int m = cell.m();
    Rng rng(hash_mix(cfg.seed, hash_mix(fnv1a64(problem_id),
                                        static_cast<std::uint64_t>(cell.step) + 0x9e37ull)));
    std::vector<double> p_draws, cond_draws, gain_draws;
    p_draws.reserve(cfg.bootstrap_resamples);
    cond_draws.reserve(cfg.bootstrap_resamples);
    gain_draws.reserve(cfg.bootstrap_resamples);
    for (int b = 0; b < cfg.bootstrap_resamples; ++b) {
      int c = 0, s = 0, cs = 0;
      for (int i = 0; i < m; ++i) {
        auto j = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(m)));
        c += cell.correct[j] != 0;
        if (cell.shifted[j]) {
          ++s;
          cs += cell.correct[j] != 0;
        }
      }
      double pb = static_cast<double>(c) / m;
      double condb = static_cast<double>(cs) / (static_cast<double>(s) + cfg.eps);
      p_draws.push_back(pb);
      cond_draws.push_back(condb);
      gain_draws.push_back(condb - pb);
    }
    std::sort(p_draws.begin(), p_draws.end());
    std::sort(cond_draws.begin(), cond_draws.end());
    std::sort(gain_draws.begin(), gain_draws.end());
    double a2 = cfg.alpha / 2;
    pe.hw_uncond = (quantile_sorted(p_draws, 1 - a2) - quantile_sorted(p_draws, a2)) / 2;
    pe.hw_cond = (quantile_sorted(cond_draws, 1 - a2) - quantile_sorted(cond_draws, a2)) / 2;
    pe.gain_q_lo = quantile_sorted(gain_draws, cfg.alpha);
    pe.gain_q_hi = quantile_sorted(gain_draws, 1 - cfg.alpha);
  }
  return pe;
}

}  // namespace

AhaEvent aha_detect(const ProblemHistory& history, std::size_t k_index,
                    const ThresholdConfig& cfg) {
  if (k_index >= history.cells.size())
    throw Error("aha_detect: checkpoint index out of range");
  if (static_cast<int>(k_index) < cfg.min_prior_steps)
    throw InsufficientHistory("aha_detect: checkpoint " + std::to_string(k_index) +
                              " has fewer than " + std::to_string(cfg.min_prior_steps) +
                              " prior checkpoints");
  for (std::size_t i = 1; i < history.cells.size(); ++i)
    if (history.cells[i].step <= history.cells[i - 1].step)
      throw Error("aha_detect: cells must be in strictly ascending step order");
  PairEval pe = evaluate_one(history.problem_id, history.cells, k_index, cfg);
  return judge_pair(pe, cfg);
}

AhaEvent judge_pair(const PairEval& pe, const ThresholdConfig& cfg) {
  AhaEvent ev;
  ev.problem_id = pe.problem_id;
  ev.step = pe.step;
  ev.prior_p_max = pe.prior_p_max;
  ev.prior_shift_max = pe.prior_shift_max;
  ev.prior_failure_margin = cfg.delta1 - pe.prior_p_max;
  ev.stability_margin = cfg.delta2 - pe.prior_shift_max;
  ev.p_uncond = pe.p_uncond;
  ev.p_cond = pe.p_cond;
  ev.gain = pe.gain;
  ev.shifted_at_k = pe.shifted_at_k;
  ev.m_at_k = pe.m_at_k;
  ev.gain_ci_lo = pe.gain_q_lo;
  ev.gain_ci_hi = pe.gain_q_hi;
  ev.halfwidth_uncond = pe.hw_uncond;
  ev.halfwidth_cond = pe.hw_cond;

  bool prior_failure = pe.prior_p_max < cfg.delta1;
  bool prior_stability = pe.prior_shift_max < cfg.delta2;
  // a checkpoint with no shifted traces cannot witness an event (step 3 is
  // inconclusive there, whatever the gain rule)
  bool has_shift = pe.shifted_at_k > 0;
  bool gain_ok = false;
  switch (cfg.gain_mode) {
    case GainMode::none: gain_ok = true; break;
    case GainMode::eps: gain_ok = pe.gain > 0; break;
    case GainMode::threshold: gain_ok = pe.gain > cfg.delta3; break;
  }
  bool gate_ok = true;
  if (cfg.gain_mode != GainMode::none && cfg.bootstrap_gate && cfg.bootstrap_resamples > 0)
    gate_ok = pe.gain_q_lo && *pe.gain_q_lo > 0;

  ev.flagged = prior_failure && prior_stability && has_shift && gain_ok && gate_ok;
  ev.provisional = ev.flagged && (pe.hw_uncond > cfg.provisional_halfwidth ||
                                  pe.hw_cond > cfg.provisional_halfwidth);
  return ev;
}

std::vector<PairEval> evaluate_pairs(const std::vector<ProblemHistory>& histories,
                                     const ThresholdConfig& cfg) {
  std::vector<PairEval> out;
  for (const auto& h : histories) {
    for (std::size_t i = 1; i < h.cells.size(); ++i)
      if (h.cells[i].step <= h.cells[i - 1].step)
        throw Error("evaluate_pairs: cells must be in ascending step order");
    for (std::size_t k = static_cast<std::size_t>(cfg.min_prior_steps); k < h.cells.size(); ++k)
      out.push_back(evaluate_one(h.problem_id, h.cells, k, cfg));
  }
  return out;
}

std::vector<AhaEvent> aha_scan(const std::vector<ProblemHistory>& histories,
                               const ThresholdConfig& cfg) {
  std::vector<AhaEvent> out;
  for (const auto& pe : evaluate_pairs(histories, cfg)) out.push_back(judge_pair(pe, cfg));
  return out;
}

std::vector<HeatmapCell> heatmap(const std::vector<ProblemHistory>& histories,
                                 const ThresholdConfig& cfg,
                                 const std::vector<double>& delta1_grid,
                                 const std::vector<double>& delta2_grid,
                                 bool include_provisional) {
  ThresholdConfig eval_cfg = cfg;
  eval_cfg.bootstrap_gate = false;  // raw satisfaction counts
  auto pairs = evaluate_pairs(histories, eval_cfg);
  std::vector<HeatmapCell> cells;
  for (double d1 : delta1_grid)
    for (double d2 : delta2_grid) {
      HeatmapCell hc;
      hc.delta1 = d1;
      hc.delta2 = d2;
      hc.pairs = static_cast<long long>(pairs.size());
      ThresholdConfig c = eval_cfg;
      c.delta1 = d1;
      c.delta2 = d2;
      for (const auto& pe : pairs) {
        AhaEvent ev = judge_pair(pe, c);
        if (ev.flagged && (include_provisional || !ev.provisional)) ++hc.events;
      }
      cells.push_back(hc);
    }
  return cells;
}

std::vector<GridPoint> default_gain_rules() {
  return {GridPoint{0, 0, GainMode::none, 0}, GridPoint{0, 0, GainMode::eps, 0},
          GridPoint{0, 0, GainMode::threshold, 0.05},
          GridPoint{0, 0, GainMode::threshold, 0.125}};
}

std::vector<GridRow> grid_search(const std::vector<ProblemHistory>& histories,
                                 const ThresholdConfig& cfg,
                                 const std::vector<double>& delta1_grid,
                                 const std::vector<double>& delta2_grid,
                                 const std::vector<GridPoint>& gain_rules,
                                 int pair_resamples, bool include_provisional) {
  ThresholdConfig eval_cfg = cfg;
  eval_cfg.bootstrap_gate = false;
  auto pairs = evaluate_pairs(histories, eval_cfg);

  std::vector<GridRow> rows;
  std::size_t cfg_index = 0;
  for (double d1 : delta1_grid)
    for (double d2 : delta2_grid)
      for (const auto& rule : gain_rules) {
        GridRow row;
        row.point = GridPoint{d1, d2, rule.gain_mode, rule.delta3};
        row.pairs = static_cast<long long>(pairs.size());
        ThresholdConfig c = eval_cfg;
        c.delta1 = d1;
        c.delta2 = d2;
        c.gain_mode = rule.gain_mode;
        c.delta3 = rule.delta3;
        std::vector<double> gains;
        for (const auto& pe : pairs) {
          AhaEvent ev = judge_pair(pe, c);
          if (ev.flagged && (include_provisional || !ev.provisional)) {
            ++row.events;
            gains.push_back(pe.gain);
          }
        }
        if (!gains.empty()) {
          double mean = 0;
          for (double g : gains) mean += g;
          mean /= static_cast<double>(gains.size());
          row.mean_gain_pp = 100.0 * mean;
          if (pair_resamples > 0) {
            Rng rng(hash_mix(cfg.seed, 0xa11a + cfg_index));
            std::vector<double> draws(static_cast<std::size_t>(pair_resamples));
            for (auto& d : draws) {
              double s = 0;
              for (std::size_t i = 0; i < gains.size(); ++i)
                s += gains[static_cast<std::size_t>(rng.below(gains.size()))];
              d = 100.0 * s / static_cast<double>(gains.size());
            }
            std::sort(draws.begin(), draws.end());
            row.ci_lo_pp = quantile_sorted(draws, cfg.alpha / 2);
            row.ci_hi_pp = quantile_sorted(draws, 1 - cfg.alpha / 2);
          } else {
            row.ci_lo_pp = row.mean_gain_pp;
            row.ci_hi_pp = row.mean_gain_pp;
          }
        }
        rows.push_back(std::move(row));
        ++cfg_index;
      }

  auto mode_rank = [](GainMode m) {
    switch (m) {
      case GainMode::none: return 0;
      case GainMode::eps: return 1;
      case GainMode::threshold: return 2;
    }
    return 3;
  };
  std::sort(rows.begin(), rows.end(), [&](const GridRow& a, const GridRow& b) {
    bool ae = a.events > 0, be = b.events > 0;
    if (ae != be) return ae;  // zero-event configs sort last
    if (ae && be) {
      double alo = *a.ci_lo_pp, blo = *b.ci_lo_pp;
      if (alo != blo) return alo > blo;
      if (a.events != b.events) return a.events > b.events;  // prevalence, same denominator
      if (*a.mean_gain_pp != *b.mean_gain_pp) return *a.mean_gain_pp > *b.mean_gain_pp;
    }
    if (a.point.delta1 != b.point.delta1) return a.point.delta1 < b.point.delta1;
    if (a.point.delta2 != b.point.delta2) return a.point.delta2 < b.point.delta2;
    if (mode_rank(a.point.gain_mode) != mode_rank(b.point.gain_mode))
      return mode_rank(a.point.gain_mode) < mode_rank(b.point.gain_mode);
    return a.point.delta3 < b.point.delta3;
  });
  return rows;
}

std::vector<ProblemHistory> build_histories(const RunDataset& ds, double temperature) {
  struct Key {
    std::string problem;
    int step;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, CheckpointCell> cells;
  for (const auto& r : ds.records) {
    if (r.pass != Pass::pass1) continue;
    if (r.temperature != temperature) continue;
    if (!r.correct)
      throw Error("build_histories: dataset is not scored (record " + r.problem_id + ")");
    if (!r.shift)
      throw Error("build_histories: dataset is not annotated (record " + r.problem_id + ")");
    auto& cell = cells[Key{r.problem_id, r.checkpoint_step}];
    cell.step = r.checkpoint_step;
    cell.correct.push_back(*r.correct ? 1 : 0);
    cell.shifted.push_back(r.shift->label ? 1 : 0);
  }
  std::map<std::string, ProblemHistory> by_problem;
  for (auto& [key, cell] : cells) {
    auto& h = by_problem[key.problem];
    h.problem_id = key.problem;
    h.cells.push_back(std::move(cell));  // map order keeps steps ascending
  }
  std::vector<ProblemHistory> out;
  out.reserve(by_problem.size());
  for (auto& [id, h] : by_problem) out.push_back(std::move(h));
  return out;
}

}  // namespace ahalab
