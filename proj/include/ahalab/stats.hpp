#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ahalab/trace_model.hpp"

namespace ahalab {

struct NotADistribution : Error {
  using Error::Error;
};
struct KappaUndefined : Error {
  using Error::Error;
};
struct NoVariance : Error {
  using Error::Error;
};
struct UnmatchedPairs : Error {
  using Error::Error;
};
struct EmptyStratumSide : Error {
  using Error::Error;
};
struct InsufficientHistory : Error {
  using Error::Error;
};

// Shannon entropy in nats over a probability vector; 0*log(0) contributes 0.
// Throws NotADistribution unless entries are finite, >= 0 and sum to 1
// within 1e-9.
double token_entropy(const std::vector<double>& probs);

// per-record mean token entropies over the think/answer spans and the whole
// sequence; absent when the record lacks entropies or the span is empty
EntropySummary entropy_summary(const TraceRecord& r);

struct GateResult {
  double threshold = 0.0;
  std::vector<std::uint8_t> high;  // strictly above the threshold
  std::size_t n_high = 0;
};

// threshold = nearest-rank quantile (default 80th percentile); "high" means
// strictly above, so an all-equal sample has an empty high side
GateResult entropy_gate(const std::vector<double>& scores, double quantile = 0.8);

// Cohen's kappa for two aligned binary label vectors; throws KappaUndefined
// when expected agreement is 1 (both labelers constant)
double cohen_kappa(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

struct PairedResult {
  long long n = 0;
  long long correct1 = 0, correct2 = 0;
  long long wins1 = 0;  // pass-1 right where pass-2 wrong
  long long wins2 = 0;  // pass-2 right where pass-1 wrong
  double acc1 = 0, acc2 = 0;
  double delta_pp = 0;  // 100 * (correct2 - correct1) / n
  std::optional<double> ci_lo_pp, ci_hi_pp;
};

// paired comparison of two aligned binary outcome vectors with a percentile
// bootstrap CI over pairs
PairedResult paired_intervention(const std::vector<std::uint8_t>& pass1,
                                 const std::vector<std::uint8_t>& pass2,
                                 int bootstrap_resamples = 2000, double alpha = 0.05,
                                 std::uint64_t seed = 2);

// z-scores a column; throws NoVariance when the standard deviation is zero
std::vector<double> standardize(const std::vector<double>& v, const std::string& name);

// raw within-stratum contrast 100 * (p(correct|shift) - p(correct|no shift));
// throws EmptyStratumSide when either side of the split is empty
double shift_contrast_pp(const std::vector<std::uint8_t>& correct,
                         const std::vector<std::uint8_t>& shifted);

struct RegRow {
  double y = 0;                    // binary outcome
  double focal = 0;                // coefficient of interest
  std::vector<double> covariates;  // additional controls
  std::string group;               // fixed-effect / cluster id
};

struct FitOptions {
  bool fixed_effects = true;   // per-group indicators, first level as reference
  bool cluster_robust = true;  // sandwich covariance clustered by group
  bool cr1 = true;             // small-sample factor G/(G-1)*(N-1)/(N-K)
  int max_iter = 100;
  double grad_tol = 1e-8;
};

struct FitResult {
  std::vector<std::string> names;  // intercept, focal, covariates..., fe:...
  std::vector<double> beta;
  std::vector<double> se;
  std::vector<double> z;
  std::vector<double> p;        // two-sided normal
  std::vector<double> log10_p;  // stable for extreme z
  std::vector<double> cov;      // K x K row-major
  bool converged = false;
  int iterations = 0;
  double grad_max = 0;
  long long n_rows = 0;  // retained rows
  int k_cols = 0;
  int groups_used = 0;
  int groups_dropped = 0;  // no outcome variation
  bool separation = false;
  std::optional<double> ame;          // discrete difference, binary focal only
  std::vector<std::size_t> retained;  // indices into the input rows
  double loglik = 0;
};

// logistic MLE by iteratively reweighted least squares with step halving;
// groups without outcome variation are dropped before fitting
FitResult fit_logit_fe(const std::vector<RegRow>& rows,
                       const std::vector<std::string>& covariate_names,
                       const std::string& focal_name, const FitOptions& opts = {});

// mean discrete-difference effect of a binary focal at the fitted
// coefficients, averaged over the retained rows
double ame_binary(const FitResult& fit, const std::vector<RegRow>& rows);

// two-sided normal p-value pieces
double two_sided_p(double zstat);
double log10_two_sided_p(double zstat);

}  // namespace ahalab
