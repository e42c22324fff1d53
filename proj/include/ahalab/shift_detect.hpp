#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ahalab/trace_model.hpp"

namespace ahalab {

struct TransportFailure : Error {
  using Error::Error;
};

// one whitelist entry: ordered literal parts with bounded gaps between them;
// single-part entries are plain phrase matches. Alternatives ending in '*'
// match as prefixes (no right word boundary).
struct CueSpec {
  std::string id;
  std::string category;
  std::vector<std::vector<std::string>> parts;
  std::size_t max_gap = 80;
};

const std::vector<CueSpec>& builtin_cues();

// serialization of the cue table (the shipped data/cues.json is this dump)
std::string cues_to_json(const std::vector<CueSpec>& cues);
std::vector<CueSpec> cues_from_json(const std::string& json_text);

struct CueHit {
  std::string cue_id;
  std::string category;
  std::size_t char_offset = 0;  // into the clamped think text
  std::string matched_text;     // exact substring at char_offset
};

inline constexpr std::size_t kThinkClampChars = 4096;

// inner <think> block clamped to kThinkClampChars; empty when absent
std::string think_for_shift(const std::string& completion);

// first occurrence of each whitelist cue, in document order
std::vector<CueHit> prefilter_cues(const std::string& clamped_think,
                                   const std::vector<CueSpec>& cues = builtin_cues());

struct JudgeRequest {
  std::string system_prompt;
  std::string user_prompt;
  std::string think_text;  // clamped
  std::vector<CueHit> cues;
  std::string problem_id;
  int step = 0;
  double temperature = 0.0;
  int sample = 0;
};

class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  // returns the judge's raw response text; throws TransportFailure
  virtual std::string call(const JudgeRequest& req) = 0;
};

// replays scripted responses (tests); falls back to the callback when set
class ScriptedTransport : public JudgeTransport {
 public:
  explicit ScriptedTransport(std::vector<std::string> responses = {})
      : responses_(std::move(responses)) {}
  explicit ScriptedTransport(std::function<std::string(const JudgeRequest&)> fn)
      : fn_(std::move(fn)) {}
  std::string call(const JudgeRequest& req) override;

 private:
  std::vector<std::string> responses_;
  std::size_t next_ = 0;
  std::function<std::string(const JudgeRequest&)> fn_;
};

// deterministic offline judge: emits a well-formed verdict computed from the
// prefilter hits (positive only when hits span >= 2 cue families)
class StubJudgeTransport : public JudgeTransport {
 public:
  std::string call(const JudgeRequest& req) override;
};

// POSTs {system, user} JSON to an HTTP endpoint and returns the body
class HttpJudgeTransport : public JudgeTransport {
 public:
  explicit HttpJudgeTransport(std::string endpoint, double timeout_s = 30.0)
      : endpoint_(std::move(endpoint)), timeout_s_(timeout_s) {}
  std::string call(const JudgeRequest& req) override;

 private:
  std::string endpoint_;
  double timeout_s_;
};

struct JudgeOptions {
  bool strict_keys = true;
  // a low-confidence positive is accepted only when the judge's markers
  // overlap the prefilter hits
  bool accept_low_with_cue_overlap = true;
  int max_retries = 0;
  double jitter_s = 0.0;  // uniform pre-call delay in [0, jitter_s], <= 0.25
  std::uint64_t seed = 0;
};

JudgeRequest build_judge_request(const TraceRecord& r, const std::string& clamped_think,
                                 const std::vector<CueHit>& hits);

// strict wire-format parse of a judge response; nullopt on any violation
struct JudgeReply {
  bool shift_in_reasoning = false;
  Confidence confidence = Confidence::low;
  std::vector<std::string> markers_found;
  int first_marker_index = -1;
  std::string before_excerpt;
  std::string after_excerpt;
  std::string explanation_short;
};
std::optional<JudgeReply> parse_judge_reply(const std::string& text, bool strict_keys);

// cue prefilter, then judge; conservative FALSE on empty prefilter, transport
// failure, malformed reply, or unmet confidence floor. Failed call prompts are
// appended to failed_log when given.
ShiftVerdict detect_shift(const TraceRecord& r, JudgeTransport& transport,
                          const JudgeOptions& opts = {},
                          std::vector<std::string>* failed_log = nullptr,
                          const std::vector<CueSpec>& cues = builtin_cues());

// whitelist-only detector: positive iff any cue fires
ShiftVerdict lexical_detect(const TraceRecord& r,
                            const std::vector<CueSpec>& cues = builtin_cues());

struct AgreementReport {
  int labelers = 0;
  std::size_t items = 0;
  double mean_po = 0.0;
  std::optional<double> mean_kappa;
  int pairs_total = 0;
  int pairs_degenerate = 0;  // kappa undefined, excluded from the mean
  std::optional<double> kappa_ci_lo, kappa_ci_hi;
};

struct DegenerateLabels : Error {
  using Error::Error;
};

// pairwise observed agreement and Cohen's kappa across K aligned labelers,
// with a percentile bootstrap CI over items for the mean kappa
AgreementReport ensemble_labels(const std::vector<std::vector<std::uint8_t>>& labels,
                                int bootstrap_resamples = 2000, double alpha = 0.05,
                                std::uint64_t seed = 1);

}  // namespace ahalab
