#include "ahalab/stats.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace ahalab {

double token_entropy(const std::vector<double>& probs) {
  if (probs.empty()) throw NotADistribution("empty probability vector");
  double sum = 0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0) throw NotADistribution("probabilities must be finite and >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw NotADistribution("probabilities must sum to 1");
  double h = 0;
  for (double p : probs)
    if (p > 0) h -= p * std::log(p);
  return h;
}

namespace {

std::optional<double> mean_over(const std::vector<double>& v, std::size_t b, std::size_t e) {
  if (b >= e || e > v.size()) return std::nullopt;
  double s = 0;
  for (std::size_t i = b; i < e; ++i) s += v[i];
  return s / static_cast<double>(e - b);
}

}  // namespace

EntropySummary entropy_summary(const TraceRecord& r) {
  EntropySummary s;
  if (r.token_entropies.empty()) return s;
  s.sequence = mean_over(r.token_entropies, 0, r.token_entropies.size());
  if (r.think_span) s.mean_think = mean_over(r.token_entropies, r.think_span->begin, r.think_span->end);
  if (r.answer_span)
    s.mean_answer = mean_over(r.token_entropies, r.answer_span->begin, r.answer_span->end);
  return s;
}

GateResult entropy_gate(const std::vector<double>& scores, double quantile) {
  if (scores.empty()) throw Error("entropy_gate: empty score vector");
  GateResult g;
  g.threshold = quantile_nearest_rank(scores, quantile);
  g.high.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    g.high[i] = scores[i] > g.threshold ? 1 : 0;
    g.n_high += g.high[i];
  }
  return g;
}

double cohen_kappa(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size() || a.empty())
    throw Error("cohen_kappa: label vectors must be aligned and non-empty");
  long long n = static_cast<long long>(a.size());
  long long agree = 0, ca = 0, cb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    agree += a[i] == b[i];
    ca += a[i] != 0;
    cb += b[i] != 0;
  }
  // expected agreement equals 1 exactly iff both labelers are constant with
  // the same support structure; checked in integers to dodge rounding
  if (ca * cb + (n - ca) * (n - cb) == n * n)
    throw KappaUndefined("expected agreement is 1; kappa undefined");
  double po = static_cast<double>(agree) / static_cast<double>(n);
  double pa = static_cast<double>(ca) / static_cast<double>(n);
  double pb = static_cast<double>(cb) / static_cast<double>(n);
  double pe = pa * pb + (1 - pa) * (1 - pb);
  return (po - pe) / (1 - pe);
}

PairedResult paired_intervention(const std::vector<std::uint8_t>& pass1,
                                 const std::vector<std::uint8_t>& pass2,
                                 int bootstrap_resamples, double alpha, std::uint64_t seed) {
  if (pass1.size() != pass2.size())
    throw UnmatchedPairs("paired outcome vectors differ in length: " +
                         std::to_string(pass1.size()) + " vs " + std::to_string(pass2.size()));
  if (pass1.empty()) throw UnmatchedPairs("no matched pairs");
  PairedResult r;
  r.n = static_cast<long long>(pass1.size());
  for (std::size_t i = 0; i < pass1.size(); ++i) {
    r.correct1 += pass1[i] != 0;
    r.correct2 += pass2[i] != 0;
    r.wins1 += pass1[i] && !pass2[i];
    r.wins2 += pass2[i] && !pass1[i];
  }
  r.acc1 = static_cast<double>(r.correct1) / static_cast<double>(r.n);
  r.acc2 = static_cast<double>(r.correct2) / static_cast<double>(r.n);
  r.delta_pp = 100.0 * static_cast<double>(r.correct2 - r.correct1) / static_cast<double>(r.n);

  if (bootstrap_resamples > 0) {
    Rng rng(seed);
    std::vector<double> draws(static_cast<std::size_t>(bootstrap_resamples));
    std::size_t n = pass1.size();
    for (auto& d : draws) {
      long long diff = 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = static_cast<std::size_t>(rng.below(n));
        diff += (pass2[j] ? 1 : 0) - (pass1[j] ? 1 : 0);
      }
      d = 100.0 * static_cast<double>(diff) / static_cast<double>(n);
    }
    std::sort(draws.begin(), draws.end());
    r.ci_lo_pp = quantile_sorted(draws, alpha / 2);
    r.ci_hi_pp = quantile_sorted(draws, 1 - alpha / 2);
  }
  return r;
}

std::vector<double> standardize(const std::vector<double>& v, const std::string& name) {
  if (v.empty()) throw NoVariance(name + ": empty column");
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / static_cast<double>(v.size()));
  if (sd == 0) throw NoVariance(name + ": zero variance, cannot standardize");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) / sd;
  return out;
}

double shift_contrast_pp(const std::vector<std::uint8_t>& correct,
                         const std::vector<std::uint8_t>& shifted) {
  if (correct.size() != shifted.size())
    throw Error("shift_contrast_pp: misaligned label vectors");
  long long ns = 0, nu = 0, cs = 0, cu = 0;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    if (shifted[i]) {
      ++ns;
      cs += correct[i] != 0;
    } else {
      ++nu;
      cu += correct[i] != 0;
    }
  }
  if (ns == 0) throw EmptyStratumSide("stratum has no shifted traces");
  if (nu == 0) throw EmptyStratumSide("stratum has no unshifted traces");
  return 100.0 * (static_cast<double>(cs) / static_cast<double>(ns) -
                  static_cast<double>(cu) / static_cast<double>(nu));
}

double two_sided_p(double zstat) {
  return std::erfc(std::abs(zstat) / std::sqrt(2.0));
}

double log10_two_sided_p(double zstat) {
  double az = std::abs(zstat);
  double p = std::erfc(az / std::sqrt(2.0));
  if (p > 0 && std::isfinite(p) && p > 1e-300) return std::log10(p);
  // asymptotic tail: ln Phi(-z) ~ -z^2/2 - ln(z) - ln(sqrt(2*pi)) + ln(1 - 1/z^2 + 3/z^4)
  double z2 = az * az;
  double corr = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2);
  double ln_phi = -0.5 * z2 - std::log(az) - 0.5 * std::log(2.0 * M_PI) +
                  std::log(std::max(corr, 1e-12));
  return (std::log(2.0) + ln_phi) / std::log(10.0);
}

namespace {

double sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double bernoulli_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  // sum y*eta - log(1 + exp(eta)), stable in both tails
  double ll = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double e = eta[i];
    double log1pexp = e > 30 ? e : std::log1p(std::exp(e));
    ll += y[i] * e - log1pexp;
  }
  return ll;
}

}  // namespace

FitResult fit_logit_fe(const std::vector<RegRow>& rows,
                       const std::vector<std::string>& covariate_names,
                       const std::string& focal_name, const FitOptions& opts) {
  if (rows.empty()) throw Error("fit_logit_fe: no rows");
  std::size_t n_cov = covariate_names.size();
  for (const auto& r : rows)
    if (r.covariates.size() != n_cov)
      throw Error("fit_logit_fe: covariate arity mismatch");

  // with fixed effects, a group whose outcome never varies has no finite
  // intercept estimate, so those groups are dropped; pooled fits keep all rows
  std::map<std::string, std::pair<long long, long long>> tally;  // group -> (n, sum y)
  for (const auto& r : rows) {
    auto& t = tally[r.group];
    t.first += 1;
    t.second += r.y != 0 ? 1 : 0;
  }
  std::set<std::string> kept_groups;
  int dropped = 0;
  for (const auto& [g, t] : tally) {
    if (opts.fixed_effects && (t.second == 0 || t.second == t.first))
      ++dropped;
    else
      kept_groups.insert(g);
  }

  FitResult res;
  res.groups_dropped = dropped;
  res.groups_used = static_cast<int>(kept_groups.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (kept_groups.count(rows[i].group)) res.retained.push_back(i);
  if (res.retained.empty())
    throw NoVariance("all groups lack outcome variation; nothing to fit");

  const auto N = static_cast<Eigen::Index>(res.retained.size());
  res.n_rows = N;

  // column layout: intercept, focal, covariates, FE dummies (reference = first)
  std::vector<std::string> fe_levels(kept_groups.begin(), kept_groups.end());
  const bool fe = opts.fixed_effects && fe_levels.size() > 1;
  const Eigen::Index K = 2 + static_cast<Eigen::Index>(n_cov) +
                         (fe ? static_cast<Eigen::Index>(fe_levels.size()) - 1 : 0);
  res.k_cols = static_cast<int>(K);

  res.names.push_back("intercept");
  res.names.push_back(focal_name);
  for (const auto& c : covariate_names) res.names.push_back(c);
  if (fe)
    for (std::size_t g = 1; g < fe_levels.size(); ++g) res.names.push_back("fe:" + fe_levels[g]);

  std::map<std::string, Eigen::Index> fe_col;
  if (fe)
    for (std::size_t g = 1; g < fe_levels.size(); ++g)
      fe_col[fe_levels[g]] = 2 + static_cast<Eigen::Index>(n_cov) +
                             static_cast<Eigen::Index>(g) - 1;

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, K);
  Eigen::VectorXd y(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const RegRow& r = rows[res.retained[static_cast<std::size_t>(i)]];
    X(i, 0) = 1.0;
    X(i, 1) = r.focal;
    for (std::size_t c = 0; c < n_cov; ++c) X(i, 2 + static_cast<Eigen::Index>(c)) = r.covariates[c];
    if (fe) {
      auto it = fe_col.find(r.group);
      if (it != fe_col.end()) X(i, it->second) = 1.0;
    }
    y[i] = r.y != 0 ? 1.0 : 0.0;
  }

  // refuse constant analysis columns (intercept aside)
  for (Eigen::Index c = 1; c < 2 + static_cast<Eigen::Index>(n_cov); ++c) {
    double lo = X.col(c).minCoeff(), hi = X.col(c).maxCoeff();
    if (lo == hi)
      throw NoVariance(res.names[static_cast<std::size_t>(c)] + ": column is constant");
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd eta = X * beta;
  double ll = bernoulli_loglik(y, eta);
  double grad_max = 0;
  bool converged = false;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    Eigen::VectorXd p(N), w(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      p[i] = sigmoid(eta[i]);
      w[i] = std::max(p[i] * (1 - p[i]), 1e-12);
    }
    Eigen::VectorXd grad = X.transpose() * (y - p);
    grad_max = grad.cwiseAbs().maxCoeff();
    if (grad_max < opts.grad_tol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success)
      throw NoVariance("information matrix is singular");
    Eigen::VectorXd step = ldlt.solve(grad);
    double scale = 1.0;
    for (int h = 0; h < 40; ++h) {
      Eigen::VectorXd cand = beta + scale * step;
      Eigen::VectorXd cand_eta = X * cand;
      double cand_ll = bernoulli_loglik(y, cand_eta);
      if (cand_ll >= ll - 1e-12) {
        beta = cand;
        eta = cand_eta;
        ll = cand_ll;
        break;
      }
      scale /= 2;
      if (h == 39) {
        beta = cand;
        eta = cand_eta;
        ll = cand_ll;
      }
    }
  }
  res.converged = converged;
  res.iterations = iter;
  res.grad_max = grad_max;
  res.loglik = ll;
  res.beta.assign(beta.data(), beta.data() + K);
  res.separation = std::abs(beta[1]) > 12.0 || (!converged && std::abs(beta[1]) > 6.0);

  // covariance: model-based bread, optionally sandwiched with cluster sums
  Eigen::VectorXd p(N), w(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    p[i] = sigmoid(eta[i]);
    w[i] = std::max(p[i] * (1 - p[i]), 1e-12);
  }
  Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw NoVariance("information matrix is singular");
  Eigen::MatrixXd Ainv = ldlt.solve(Eigen::MatrixXd::Identity(K, K));
  Eigen::MatrixXd V;
  if (opts.cluster_robust) {
    std::map<std::string, Eigen::VectorXd> score_sums;
    for (Eigen::Index i = 0; i < N; ++i) {
      const RegRow& r = rows[res.retained[static_cast<std::size_t>(i)]];
      auto [it, fresh] = score_sums.try_emplace(r.group, Eigen::VectorXd::Zero(K));
      it->second += X.row(i).transpose() * (y[i] - p[i]);
    }
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(K, K);
    for (const auto& [g, s] : score_sums) B += s * s.transpose();
    double G = static_cast<double>(score_sums.size());
    double c = 1.0;
    if (opts.cr1 && G > 1 && N > K)
      c = (G / (G - 1.0)) * (static_cast<double>(N - 1) / static_cast<double>(N - K));
    V = c * Ainv * B * Ainv;
  } else {
    V = Ainv;
  }
  res.cov.resize(static_cast<std::size_t>(K) * K);
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = 0; j < K; ++j)
      res.cov[static_cast<std::size_t>(i) * K + j] = V(i, j);
  res.se.resize(K);
  res.z.resize(K);
  res.p.resize(K);
  res.log10_p.resize(K);
  for (Eigen::Index i = 0; i < K; ++i) {
    double se = std::sqrt(std::max(V(i, i), 0.0));
    res.se[static_cast<std::size_t>(i)] = se;
    double zs = se > 0 ? beta[i] / se : 0.0;
    res.z[static_cast<std::size_t>(i)] = zs;
    res.p[static_cast<std::size_t>(i)] = two_sided_p(zs);
    res.log10_p[static_cast<std::size_t>(i)] = log10_two_sided_p(zs);
  }

  // discrete-difference AME when the focal is binary over the retained rows
  bool binary_focal = true;
  for (Eigen::Index i = 0; i < N && binary_focal; ++i)
    binary_focal = X(i, 1) == 0.0 || X(i, 1) == 1.0;
  if (binary_focal) {
    double acc = 0;
    for (Eigen::Index i = 0; i < N; ++i) {
      double base = eta[i] - beta[1] * X(i, 1);
      acc += sigmoid(base + beta[1]) - sigmoid(base);
    }
    res.ame = acc / static_cast<double>(N);
  }
  return res;
}

double ame_binary(const FitResult& fit, const std::vector<RegRow>& rows) {
  if (!fit.ame) throw Error("ame_binary: focal was not binary in the fit");
  (void)rows;
  return *fit.ame;
}

}  // namespace ahalab
