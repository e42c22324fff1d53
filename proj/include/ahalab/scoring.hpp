#pragma once

#include <optional>
#include <string>

#include "ahalab/rush.hpp"
#include "ahalab/trace_model.hpp"

namespace ahalab {

// canonical form used for math equality: delimiter/wrapper stripping,
// \frac -> a/b, whitespace and brace removal, unicode minus folding,
// integer-fraction reduction, lowercase (applied in that order)
std::string canonical_math(const std::string& s);
bool score_math(const std::string& pred, const std::string& gold);

// uppercase + strip everything but letters/digits, then exact equality
std::string canonical_xword(const std::string& s);
bool score_xword(const std::string& pred, const std::string& gold);

struct XwordShaping {
  double eps_contain = 0.05;
  double eps_len = 0.10;
  double ramp_tokens = 275.0;
};

// strict exact credit plus two small shaped bonuses (gold-as-standalone-word
// containment, think-length ramp), each scaled by tag completeness; clipped
// to [0, 1]
double xword_reward(const std::string& completion, const std::string& gold,
                    const XwordShaping& shaping = {});

struct RushWeights {
  double exact = 0.65;
  double solve = 0.20;
  double prefix = 0.10;
  double phi = 0.05;
};

// composite move-sequence reward; with a board the solve/phi terms are
// simulated, without one only exact/prefix shaping applies (gold-only
// variant, solve collapses to the exact bit); clipped to [0, 1]
double rush_reward(const std::string& pred, const std::string& gold,
                   const std::optional<Board>& board, const RushWeights& w = {});

// strict per-domain correctness on the inner <answer> block
bool score_record(const TraceRecord& r, Domain domain);

}  // namespace ahalab
