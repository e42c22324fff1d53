#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ahalab/util.hpp"

namespace ahalab {

enum class Domain { math, xword, rushhour };
enum class Pass { pass1, pass2 };
enum class Detector { formal_input_judge, judge, lexical };
enum class Confidence { low, medium, high };

std::string domain_name(Domain d);
Domain domain_from_name(const std::string& s);
std::string pass_name(Pass p);
Pass pass_from_value(const std::string& s);
std::string detector_name(Detector d);
Detector detector_from_name(const std::string& s);
std::string confidence_name(Confidence c);
std::optional<Confidence> confidence_from_name(const std::string& s);

struct InvalidRecord : Error {
  InvalidRecord(const std::string& field, const std::string& reason)
      : Error("invalid record: field '" + field + "': " + reason), field(field) {}
  std::string field;
};

struct MalformedJson : Error {
  using Error::Error;
};

struct MissingField : Error {
  explicit MissingField(const std::string& name)
      : Error("missing field '" + name + "'"), field(name) {}
  std::string field;
};

struct DuplicateKey : Error {
  using Error::Error;
};

// half-open token range into token_entropies
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

// one detector decision for one trace
struct ShiftVerdict {
  bool label = false;
  Detector detector = Detector::lexical;
  Confidence confidence = Confidence::high;
  std::vector<std::string> markers;
  int first_marker_index = -1;  // char offset into the clamped think text
  std::string before_excerpt;   // <= 120 chars
  std::string after_excerpt;    // <= 140 chars
  std::string explanation;      // <= 140 chars
  bool operator==(const ShiftVerdict&) const = default;
};

// throws InvalidRecord when a positive verdict lacks markers/offset or an
// excerpt exceeds its cap
void validate_verdict(const ShiftVerdict& v);

struct TraceRecord {
  std::string problem_id;
  int checkpoint_step = 0;
  double temperature = 0.0;
  int sample_index = 0;
  Pass pass = Pass::pass1;
  std::string completion;
  std::string gold_answer;
  std::optional<std::string> board;  // rush hour instances carry their board
  std::vector<double> token_entropies;
  std::optional<Span> think_span;
  std::optional<Span> answer_span;
  std::optional<bool> correct;
  std::optional<ShiftVerdict> shift;
  bool operator==(const TraceRecord&) const = default;
};

// structural checks on a single record; sample_index is checked against the
// run's declared samples-per-cell when g > 0
void validate_record(const TraceRecord& r, int g = 0);

// per-(problem, checkpoint) outcome/shift bits across the sample axis
struct CheckpointCell {
  int step = 0;
  std::vector<std::uint8_t> correct;
  std::vector<std::uint8_t> shifted;

  int m() const { return static_cast<int>(correct.size()); }
};

struct AhaEvent {
  std::string problem_id;
  int step = 0;
  bool flagged = false;
  bool provisional = false;
  // diagnostics
  double prior_p_max = 0.0;        // max p_hat over earlier checkpoints
  double prior_shift_max = 0.0;    // max shift rate over earlier checkpoints
  double prior_failure_margin = 0.0;  // delta1 - prior_p_max
  double stability_margin = 0.0;      // delta2 - prior_shift_max
  double p_uncond = 0.0;           // p_hat at k
  double p_cond = 0.0;             // p_hat given shift at k
  double gain = 0.0;               // p_cond - p_uncond
  int shifted_at_k = 0;
  int m_at_k = 0;
  std::optional<double> gain_ci_lo;  // one-sided bootstrap lower bound
  std::optional<double> gain_ci_hi;
  double halfwidth_uncond = 0.0;
  double halfwidth_cond = 0.0;
};

struct EntropySummary {
  std::optional<double> mean_think;
  std::optional<double> mean_answer;
  std::optional<double> sequence;  // mean over the whole token stream
};

}  // namespace ahalab
