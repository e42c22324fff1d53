#include "ahalab/trace_model.hpp"

namespace ahalab {

std::string domain_name(Domain d) {
  switch (d) {
    case Domain::math: return "math";
    case Domain::xword: return "xword";
    case Domain::rushhour: return "rushhour";
  }
  throw Error("unreachable domain");
}

Domain domain_from_name(const std::string& s) {
  if (s == "math") return Domain::math;
  if (s == "xword" || s == "crossword" || s == "xwords") return Domain::xword;
  if (s == "rushhour" || s == "rush_hour" || s == "rhour") return Domain::rushhour;
  throw InvalidRecord("domain", "unknown domain '" + s + "'");
}

std::string pass_name(Pass p) { return p == Pass::pass1 ? "pass1" : "pass2"; }

Pass pass_from_value(const std::string& s) {
  if (s == "pass1" || s == "1") return Pass::pass1;
  if (s == "pass2" || s == "2") return Pass::pass2;
  throw InvalidRecord("pass", "expected pass1 or pass2, got '" + s + "'");
}

std::string detector_name(Detector d) {
  switch (d) {
    case Detector::formal_input_judge: return "formal_input_judge";
    case Detector::judge: return "judge";
    case Detector::lexical: return "lexical";
  }
  throw Error("unreachable detector");
}

Detector detector_from_name(const std::string& s) {
  if (s == "formal_input_judge") return Detector::formal_input_judge;
  if (s == "judge") return Detector::judge;
  if (s == "lexical") return Detector::lexical;
  throw InvalidRecord("detector", "unknown detector '" + s + "'");
}

std::string confidence_name(Confidence c) {
  switch (c) {
    case Confidence::low: return "low";
    case Confidence::medium: return "medium";
    case Confidence::high: return "high";
  }
  throw Error("unreachable confidence");
}

std::optional<Confidence> confidence_from_name(const std::string& s) {
  if (s == "low") return Confidence::low;
  if (s == "medium") return Confidence::medium;
  if (s == "high") return Confidence::high;
  return std::nullopt;
}

void validate_verdict(const ShiftVerdict& v) {
  if (v.label) {
    if (v.markers.empty())
      throw InvalidRecord("shift.markers", "positive label requires at least one marker");
    if (v.first_marker_index < 0)
      throw InvalidRecord("shift.first_marker_index", "positive label requires a marker offset");
  }
  if (v.before_excerpt.size() > 120)
    throw InvalidRecord("shift.before_excerpt", "exceeds 120 chars");
  if (v.after_excerpt.size() > 140)
    throw InvalidRecord("shift.after_excerpt", "exceeds 140 chars");
  if (v.explanation.size() > 140)
    throw InvalidRecord("shift.explanation_short", "exceeds 140 chars");
}

void validate_record(const TraceRecord& r, int g) {
  if (r.problem_id.empty()) throw InvalidRecord("problem_id", "must be non-empty");
  if (r.checkpoint_step < 0) throw InvalidRecord("step", "must be >= 0");
  if (!(r.temperature >= 0.0 && r.temperature <= 1.0))
    throw InvalidRecord("temperature", "must lie in [0, 1]");
  if (r.sample_index < 0) throw InvalidRecord("sample", "must be >= 0");
  if (g > 0 && r.sample_index >= g)
    throw InvalidRecord("sample", "sample_index " + std::to_string(r.sample_index) +
                                      " outside [0, " + std::to_string(g) + ")");
  for (double e : r.token_entropies)
    if (!(e >= 0.0) || !std::isfinite(e))
      throw InvalidRecord("token_entropies", "entries must be finite and >= 0");
  auto check_span = [&](const std::optional<Span>& sp, const char* name) {
    if (!sp) return;
    if (sp->begin > sp->end)
      throw InvalidRecord(name, "span begin > end");
    if (sp->end > r.token_entropies.size())
      throw InvalidRecord(name, "span exceeds token_entropies length");
  };
  check_span(r.think_span, "think_span");
  check_span(r.answer_span, "answer_span");
  if ((r.think_span || r.answer_span) && r.token_entropies.empty())
    throw InvalidRecord("token_entropies", "spans given but no entropies");
  if (r.shift) validate_verdict(*r.shift);
}

}  // namespace ahalab
