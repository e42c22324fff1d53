#include "ahalab/shift_detect.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

#include "ahalab/ingest.hpp"
#include "ahalab/stats.hpp"
#include "json.hpp"

namespace ahalab {

namespace {

// lowercased text with curly apostrophes folded and whitespace runs
// collapsed, plus a map back to byte offsets in the original
struct NormText {
  std::string norm;
  std::vector<std::size_t> orig_begin;
  std::vector<std::size_t> orig_end;
};

NormText normalize_for_match(const std::string& s) {
  NormText t;
  t.norm.reserve(s.size());
  bool last_space = false;
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t start = i;
    std::size_t len = 1;
    char out;
    if (c == 0xe2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(s[i + 2]) == 0x98 ||
         static_cast<unsigned char>(s[i + 2]) == 0x99)) {
      out = '\'';
      len = 3;
    } else if (std::isspace(c)) {
      out = ' ';
    } else if (c >= 'A' && c <= 'Z') {
      out = static_cast<char>(c - 'A' + 'a');
    } else {
      out = static_cast<char>(c);
    }
    i = start + len;
    if (out == ' ') {
      if (last_space) continue;
      last_space = true;
    } else {
      last_space = false;
    }
    t.norm.push_back(out);
    t.orig_begin.push_back(start);
    t.orig_end.push_back(start + len);
  }
  return t;
}

bool is_word_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'); }

struct LiteralMatch {
  std::size_t begin, end;
};

// earliest word-bounded occurrence of one alternative at or after `from`;
// a trailing '*' waives the right boundary (prefix match)
std::optional<LiteralMatch> find_literal(const std::string& text, const std::string& alt,
                                         std::size_t from) {
  bool prefix_mode = !alt.empty() && alt.back() == '*';
  std::string needle = prefix_mode ? alt.substr(0, alt.size() - 1) : alt;
  if (needle.empty()) return std::nullopt;
  std::size_t pos = text.find(needle, from);
  while (pos != std::string::npos) {
    bool left_ok = !is_word_char(needle.front()) || pos == 0 || !is_word_char(text[pos - 1]);
    std::size_t end = pos + needle.size();
    bool right_ok = prefix_mode || !is_word_char(needle.back()) || end >= text.size() ||
                    !is_word_char(text[end]);
    if (left_ok && right_ok) {
      if (prefix_mode)  // extend across the rest of the word
        while (end < text.size() && is_word_char(text[end])) ++end;
      return LiteralMatch{pos, end};
    }
    pos = text.find(needle, pos + 1);
  }
  return std::nullopt;
}

// earliest match over a set of alternatives; ties prefer the longest
std::optional<LiteralMatch> find_alternatives(const std::string& text,
                                              const std::vector<std::string>& alts,
                                              std::size_t from) {
  std::optional<LiteralMatch> best;
  for (const auto& alt : alts) {
    auto m = find_literal(text, alt, from);
    if (!m) continue;
    if (!best || m->begin < best->begin || (m->begin == best->begin && m->end > best->end))
      best = m;
  }
  return best;
}

// first full chain of the cue parts, respecting the gap bound
std::optional<LiteralMatch> match_spec(const std::string& text, const CueSpec& spec) {
  std::size_t from = 0;
  while (true) {
    auto head = find_alternatives(text, spec.parts[0], from);
    if (!head) return std::nullopt;
    LiteralMatch whole = *head;
    bool ok = true;
    std::size_t cursor = head->end;
    for (std::size_t p = 1; p < spec.parts.size(); ++p) {
      auto next = find_alternatives(text, spec.parts[p], cursor);
      if (!next || next->begin > cursor + spec.max_gap) {
        ok = false;
        break;
      }
      whole.end = next->end;
      cursor = next->end;
    }
    if (ok) return whole;
    from = head->begin + 1;
  }
}

}  // namespace

std::string think_for_shift(const std::string& completion) {
  auto think = extract_tagged_block(completion, "think");
  if (!think) return "";
  if (think->size() > kThinkClampChars) think->resize(kThinkClampChars);
  return *think;
}

std::vector<CueHit> prefilter_cues(const std::string& clamped_think,
                                   const std::vector<CueSpec>& cues) {
  NormText t = normalize_for_match(clamped_think);
  std::vector<CueHit> hits;
  for (const auto& spec : cues) {
    if (spec.parts.empty()) continue;
    auto m = match_spec(t.norm, spec);
    if (!m) continue;
    CueHit h;
    h.cue_id = spec.id;
    h.category = spec.category;
    h.char_offset = t.orig_begin[m->begin];
    std::size_t end_orig = m->end > 0 && m->end <= t.orig_end.size()
                               ? t.orig_end[m->end - 1]
                               : clamped_think.size();
    h.matched_text = clamped_think.substr(h.char_offset, end_orig - h.char_offset);
    hits.push_back(std::move(h));
  }
  std::sort(hits.begin(), hits.end(), [](const CueHit& a, const CueHit& b) {
    if (a.char_offset != b.char_offset) return a.char_offset < b.char_offset;
    return a.cue_id < b.cue_id;
  });
  return hits;
}

std::string ScriptedTransport::call(const JudgeRequest& req) {
  if (fn_) return fn_(req);
  if (next_ >= responses_.size())
    throw TransportFailure("scripted transport exhausted after " +
                           std::to_string(responses_.size()) + " calls");
  return responses_[next_++];
}

std::string StubJudgeTransport::call(const JudgeRequest& req) {
  std::vector<std::string> categories;
  for (const auto& h : req.cues)
    if (std::find(categories.begin(), categories.end(), h.category) == categories.end())
      categories.push_back(h.category);
  bool positive = categories.size() >= 2;
  nlohmann::ordered_json j;
  j["shift_in_reasoning"] = positive;
  j["confidence"] = categories.size() >= 3 ? "high" : (positive ? "medium" : "low");
  auto markers = nlohmann::ordered_json::array();
  if (positive)
    for (std::size_t i = 0; i < req.cues.size() && i < 3; ++i)
      markers.push_back(req.cues[i].matched_text);
  j["markers_found"] = markers;
  j["first_marker_index"] =
      positive ? static_cast<int>(req.cues.front().char_offset) : -1;
  std::string before, after;
  if (positive) {
    std::size_t idx = req.cues.front().char_offset;
    std::size_t b0 = idx > 120 ? idx - 120 : 0;
    before = req.think_text.substr(b0, idx - b0);
    after = req.think_text.substr(idx, 140);
  }
  j["before_excerpt"] = before;
  j["after_excerpt"] = after;
  j["explanation_short"] = positive
                               ? "multiple cue families fired: " + categories[0] + "," +
                                     categories[1]
                               : "cue evidence too thin";
  return j.dump();
}

std::string HttpJudgeTransport::call(const JudgeRequest& req) {
  // implemented in report.cpp-free TU to keep httplib out of hot paths;
  // see http_judge_call
  extern std::string http_judge_call(const std::string& endpoint, double timeout_s,
                                     const JudgeRequest& req);
  return http_judge_call(endpoint_, timeout_s_, req);
}

JudgeRequest build_judge_request(const TraceRecord& r, const std::string& clamped_think,
                                 const std::vector<CueHit>& hits) {
  JudgeRequest req;
  req.system_prompt =
      "You review a model's reasoning transcript. Decide whether the reasoning "
      "explicitly abandons or corrects an earlier line of thought mid-stream. "
      "Respond with a single JSON object holding exactly these keys: "
      "shift_in_reasoning (boolean), confidence (\"low\"|\"medium\"|\"high\"), "
      "markers_found (array of strings), first_marker_index (integer, -1 when "
      "absent), before_excerpt (string, max 120 chars), after_excerpt (string, "
      "max 140 chars), explanation_short (string, max 140 chars). No other keys, "
      "no prose around the JSON.";
  nlohmann::ordered_json u;
  u["think_text"] = clamped_think;
  auto cue_arr = nlohmann::ordered_json::array();
  for (const auto& h : hits) {
    nlohmann::ordered_json cj;
    cj["cue"] = h.matched_text;
    cj["category"] = h.category;
    cj["offset"] = h.char_offset;
    cue_arr.push_back(cj);
  }
  u["cue_hits"] = cue_arr;
  req.user_prompt = u.dump();
  req.think_text = clamped_think;
  req.cues = hits;
  req.problem_id = r.problem_id;
  req.step = r.checkpoint_step;
  req.temperature = r.temperature;
  req.sample = r.sample_index;
  return req;
}

std::optional<JudgeReply> parse_judge_reply(const std::string& text, bool strict_keys) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  if (!j.is_object()) return std::nullopt;
  static const char* required[] = {"shift_in_reasoning", "confidence",
                                   "markers_found",      "first_marker_index",
                                   "before_excerpt",     "after_excerpt",
                                   "explanation_short"};
  for (const char* k : required)
    if (!j.contains(k)) return std::nullopt;
  if (strict_keys) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool known = false;
      for (const char* k : required) known |= it.key() == k;
      if (!known) return std::nullopt;
    }
  }
  JudgeReply r;
  if (!j["shift_in_reasoning"].is_boolean()) return std::nullopt;
  r.shift_in_reasoning = j["shift_in_reasoning"].get<bool>();
  if (!j["confidence"].is_string()) return std::nullopt;
  auto conf = confidence_from_name(j["confidence"].get<std::string>());
  if (!conf) return std::nullopt;
  r.confidence = *conf;
  if (!j["markers_found"].is_array()) return std::nullopt;
  for (const auto& m : j["markers_found"]) {
    if (!m.is_string()) return std::nullopt;
    r.markers_found.push_back(m.get<std::string>());
  }
  if (!j["first_marker_index"].is_number_integer()) return std::nullopt;
  r.first_marker_index = j["first_marker_index"].get<int>();
  for (const char* k : {"before_excerpt", "after_excerpt", "explanation_short"})
    if (!j[k].is_string()) return std::nullopt;
  r.before_excerpt = j["before_excerpt"].get<std::string>();
  r.after_excerpt = j["after_excerpt"].get<std::string>();
  r.explanation_short = j["explanation_short"].get<std::string>();
  if (strict_keys &&
      (r.before_excerpt.size() > 120 || r.after_excerpt.size() > 140 ||
       r.explanation_short.size() > 140))
    return std::nullopt;
  return r;
}

namespace {

ShiftVerdict negative_verdict(Detector det, const std::string& why) {
  ShiftVerdict v;
  v.label = false;
  v.detector = det;
  v.confidence = Confidence::low;
  v.first_marker_index = -1;
  v.explanation = why.substr(0, 140);
  return v;
}

void fill_excerpts(ShiftVerdict& v, const std::string& think, std::size_t idx) {
  std::size_t b0 = idx > 120 ? idx - 120 : 0;
  v.before_excerpt = think.substr(b0, idx - b0);
  v.after_excerpt = think.substr(idx, 140);
}

std::optional<std::size_t> find_ci(const std::string& haystack, const std::string& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
  std::string h = to_lower_ascii(haystack), n = to_lower_ascii(needle);
  auto pos = h.find(n);
  if (pos == std::string::npos) return std::nullopt;
  return pos;
}

}  // namespace

ShiftVerdict detect_shift(const TraceRecord& r, JudgeTransport& transport,
                          const JudgeOptions& opts, std::vector<std::string>* failed_log,
                          const std::vector<CueSpec>& cues) {
  std::string think = think_for_shift(r.completion);
  std::vector<CueHit> hits = prefilter_cues(think, cues);
  if (hits.empty()) {
    auto v = negative_verdict(Detector::judge, "prefilter: no whitelist cue fired");
    v.confidence = Confidence::high;
    return v;
  }
  JudgeRequest req = build_judge_request(r, think, hits);

  std::string reply_text;
  bool got_reply = false;
  Rng rng(hash_mix(opts.seed, fnv1a64(r.problem_id)) ^
          static_cast<std::uint64_t>(r.checkpoint_step * 8191 + r.sample_index));
  for (int attempt = 0; attempt <= opts.max_retries && !got_reply; ++attempt) {
    if (opts.jitter_s > 0) {
      double d = rng.uniform() * std::min(opts.jitter_s, 0.25);
      std::this_thread::sleep_for(std::chrono::duration<double>(d));
    }
    try {
      reply_text = transport.call(req);
      got_reply = true;
    } catch (const TransportFailure&) {
    }
  }
  if (!got_reply) {
    if (failed_log) failed_log->push_back(req.system_prompt + "\n" + req.user_prompt);
    return negative_verdict(Detector::judge, "transport failure after retries");
  }

  auto reply = parse_judge_reply(reply_text, opts.strict_keys);
  if (!reply) return negative_verdict(Detector::judge, "judge reply failed schema check");

  ShiftVerdict v;
  v.detector = Detector::judge;
  v.confidence = reply->confidence;
  v.markers = reply->markers_found;
  v.explanation = reply->explanation_short.substr(0, 140);
  bool label = reply->shift_in_reasoning && !reply->markers_found.empty();

  if (label && reply->confidence == Confidence::low) {
    bool overlap = false;
    for (const auto& m : reply->markers_found)
      for (const auto& h : hits)
        overlap |= to_lower_ascii(m) == to_lower_ascii(h.matched_text);
    if (!(opts.accept_low_with_cue_overlap && overlap)) label = false;
    if (!label) v.explanation = "low-confidence positive without cue overlap";
  }

  if (label) {
    int idx = reply->first_marker_index;
    if (idx < 0 || static_cast<std::size_t>(idx) >= think.size()) {
      std::optional<std::size_t> found;
      for (const auto& m : reply->markers_found) {
        auto p = find_ci(think, m);
        if (p && (!found || *p < *found)) found = p;
      }
      if (!found) found = hits.front().char_offset;
      idx = static_cast<int>(*found);
    }
    v.first_marker_index = idx;
    bool before_ok = reply->before_excerpt.empty() ||
                     think.find(reply->before_excerpt) != std::string::npos;
    bool after_ok = reply->after_excerpt.empty() ||
                    think.find(reply->after_excerpt) != std::string::npos;
    if (before_ok && after_ok && !(reply->before_excerpt.empty() && reply->after_excerpt.empty())) {
      v.before_excerpt = reply->before_excerpt;
      v.after_excerpt = reply->after_excerpt;
    } else {
      fill_excerpts(v, think, static_cast<std::size_t>(idx));
    }
  } else {
    v.first_marker_index = -1;
  }
  v.label = label;
  validate_verdict(v);
  return v;
}

ShiftVerdict lexical_detect(const TraceRecord& r, const std::vector<CueSpec>& cues) {
  std::string think = think_for_shift(r.completion);
  std::vector<CueHit> hits = prefilter_cues(think, cues);
  ShiftVerdict v;
  v.detector = Detector::lexical;
  if (hits.empty()) {
    v.label = false;
    v.confidence = Confidence::high;
    v.first_marker_index = -1;
    v.explanation = "no whitelist cue fired";
    return v;
  }
  v.label = true;
  std::vector<std::string> cats;
  for (const auto& h : hits)
    if (std::find(cats.begin(), cats.end(), h.category) == cats.end()) cats.push_back(h.category);
  v.confidence = cats.size() >= 2 ? Confidence::high : Confidence::medium;
  for (std::size_t i = 0; i < hits.size() && i < 8; ++i) v.markers.push_back(hits[i].matched_text);
  v.first_marker_index = static_cast<int>(hits.front().char_offset);
  fill_excerpts(v, think, hits.front().char_offset);
  v.explanation = "whitelist cue(s): " + hits.front().cue_id;
  if (v.explanation.size() > 140) v.explanation.resize(140);
  validate_verdict(v);
  return v;
}

AgreementReport ensemble_labels(const std::vector<std::vector<std::uint8_t>>& labels,
                                int bootstrap_resamples, double alpha, std::uint64_t seed) {
  if (labels.size() < 2) throw Error("ensemble_labels: need at least two labelers");
  std::size_t n = labels[0].size();
  for (const auto& l : labels)
    if (l.size() != n) throw Error("ensemble_labels: labelers are misaligned");
  if (n == 0) throw Error("ensemble_labels: empty label vectors");

  AgreementReport rep;
  rep.labelers = static_cast<int>(labels.size());
  rep.items = n;

  auto mean_stats = [&](const std::vector<std::size_t>& idx,
                        double& po_out) -> std::optional<double> {
    double po_sum = 0, kappa_sum = 0;
    int pairs = 0, defined = 0;
    for (std::size_t a = 0; a < labels.size(); ++a)
      for (std::size_t b = a + 1; b < labels.size(); ++b) {
        ++pairs;
        std::vector<std::uint8_t> va(idx.size()), vb(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
          va[i] = labels[a][idx[i]];
          vb[i] = labels[b][idx[i]];
        }
        std::size_t agree = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) agree += va[i] == vb[i];
        po_sum += static_cast<double>(agree) / static_cast<double>(idx.size());
        try {
          kappa_sum += cohen_kappa(va, vb);
          ++defined;
        } catch (const KappaUndefined&) {
        }
      }
    po_out = po_sum / pairs;
    if (defined == 0) return std::nullopt;
    return kappa_sum / defined;
  };

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  double po = 0;
  auto mk = mean_stats(all, po);
  rep.mean_po = po;
  rep.mean_kappa = mk;
  rep.pairs_total = static_cast<int>(labels.size() * (labels.size() - 1) / 2);
  {
    int degenerate = 0;
    for (std::size_t a = 0; a < labels.size(); ++a)
      for (std::size_t b = a + 1; b < labels.size(); ++b) {
        try {
          cohen_kappa(labels[a], labels[b]);
        } catch (const KappaUndefined&) {
          ++degenerate;
        }
      }
    rep.pairs_degenerate = degenerate;
  }

  if (mk && bootstrap_resamples > 0) {
    Rng rng(seed);
    std::vector<double> draws;
    draws.reserve(static_cast<std::size_t>(bootstrap_resamples));
    std::vector<std::size_t> idx(n);
    for (int b = 0; b < bootstrap_resamples; ++b) {
      for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::size_t>(rng.below(n));
      double tmp_po = 0;
      auto k = mean_stats(idx, tmp_po);
      if (k) draws.push_back(*k);
    }
    if (draws.size() >= 10) {
      std::sort(draws.begin(), draws.end());
      rep.kappa_ci_lo = quantile_sorted(draws, alpha / 2);
      rep.kappa_ci_hi = quantile_sorted(draws, 1 - alpha / 2);
    }
  }
  return rep;
}

}  // namespace ahalab
