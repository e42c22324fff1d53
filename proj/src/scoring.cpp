#include "ahalab/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <numeric>

#include "ahalab/ingest.hpp"

namespace ahalab {

namespace {

// strips one layer of $...$, $$...$$, \(...\), \[...\] per iteration
std::string strip_math_delims(std::string s) {
  bool changed = true;
  while (changed) {
    changed = false;
    s = trim(s);
    auto outer = [&](const std::string& open, const std::string& close) {
      if (s.size() >= open.size() + close.size() && s.rfind(open, 0) == 0 &&
          s.compare(s.size() - close.size(), close.size(), close) == 0) {
        s = s.substr(open.size(), s.size() - open.size() - close.size());
        changed = true;
      }
    };
    outer("$$", "$$");
    outer("$", "$");
    outer("\\(", "\\)");
    outer("\\[", "\\]");
  }
  return s;
}

size_t matching_brace(const std::string& s, size_t open) {
  int depth = 0;
  for (size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') ++depth;
    if (s[i] == '}' && --depth == 0) return i;
  }
  return std::string::npos;
}

// replaces every wrapper{X} with X, keeping X verbatim
std::string unwrap_latex(std::string s) {
  static const char* wrappers[] = {"\\boxed", "\\text", "\\mathrm", "\\mathbf",
                                   "\\operatorname"};
  bool changed = true;
  while (changed) {
    changed = false;
    for (const char* w : wrappers) {
      size_t pos = s.find(w);
      while (pos != std::string::npos) {
        size_t brace = pos + std::strlen(w);
        if (brace < s.size() && s[brace] == '{') {
          size_t close = matching_brace(s, brace);
          if (close != std::string::npos) {
            s = s.substr(0, pos) + s.substr(brace + 1, close - brace - 1) + s.substr(close + 1);
            changed = true;
            break;
          }
        }
        pos = s.find(w, pos + 1);
      }
    }
  }
  static const char* erase_tokens[] = {"\\left", "\\right", "\\displaystyle", "\\!", "\\,",
                                       "\\;", "\\:"};
  for (const char* t : erase_tokens) {
    size_t pos;
    while ((pos = s.find(t)) != std::string::npos) s.erase(pos, std::strlen(t));
  }
  return s;
}

// one \frac argument: a braced group or a single character
std::pair<std::string, size_t> frac_arg(const std::string& s, size_t i) {
  if (i >= s.size()) return {"", i};
  if (s[i] == '{') {
    size_t close = matching_brace(s, i);
    if (close == std::string::npos) return {s.substr(i + 1), s.size()};
    return {s.substr(i + 1, close - i - 1), close + 1};
  }
  return {std::string(1, s[i]), i + 1};
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(),
                                   [](unsigned char c) { return std::isdigit(c); });
}

std::string convert_fracs(std::string s) {
  for (const char* name : {"\\dfrac", "\\tfrac", "\\frac"}) {
    size_t pos;
    while ((pos = s.find(name)) != std::string::npos) {
      size_t i = pos + std::strlen(name);
      auto [num, after_num] = frac_arg(s, i);
      auto [den, after_den] = frac_arg(s, after_num);
      auto wrap = [](const std::string& a) {
        return (a.size() > 1 && !all_digits(a)) ? "(" + a + ")" : a;
      };
      s = s.substr(0, pos) + wrap(num) + "/" + wrap(den) + s.substr(after_den);
    }
  }
  return s;
}

std::string fold_unicode_minus(std::string s) {
  // U+2212 minus, U+2013 en dash
  static const char* seqs[] = {"\xe2\x88\x92", "\xe2\x80\x93"};
  for (const char* seq : seqs) {
    size_t pos;
    while ((pos = s.find(seq)) != std::string::npos) s.replace(pos, 3, "-");
  }
  return s;
}

std::string reduce_integer_fraction(const std::string& s) {
  size_t slash = s.find('/');
  if (slash == std::string::npos || slash == 0 || slash + 1 >= s.size()) return s;
  std::string a = s.substr(0, slash), b = s.substr(slash + 1);
  bool neg = false;
  if (a[0] == '+' || a[0] == '-') {
    neg = a[0] == '-';
    a = a.substr(1);
  }
  if (!all_digits(a) || !all_digits(b) || a.size() > 18 || b.size() > 18) return s;
  long long num = std::stoll(a), den = std::stoll(b);
  if (den == 0) return s;
  long long g = std::gcd(num, den);
  if (g > 0) {
    num /= g;
    den /= g;
  }
  std::string out = (neg && num != 0 ? "-" : "") + std::to_string(num);
  if (den != 1) out += "/" + std::to_string(den);
  return out;
}

}  // namespace

std::string canonical_math(const std::string& s) {
  std::string t = strip_math_delims(s);
  t = unwrap_latex(t);
  t = convert_fracs(t);
  std::erase_if(t, [](unsigned char c) { return std::isspace(c); });
  std::erase_if(t, [](char c) { return c == '{' || c == '}'; });
  t = fold_unicode_minus(t);
  if (!t.empty() && t[0] == '+') t = t.substr(1);
  t = reduce_integer_fraction(t);
  return to_lower_ascii(t);
}

bool score_math(const std::string& pred, const std::string& gold) {
  std::string p = canonical_math(pred), g = canonical_math(gold);
  return !g.empty() && p == g;
}

std::string canonical_xword(const std::string& s) {
  std::string out;
  for (char c : to_upper_ascii(s))
    if ((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9')) out.push_back(c);
  return out;
}

bool score_xword(const std::string& pred, const std::string& gold) {
  std::string p = canonical_xword(pred), g = canonical_xword(gold);
  return !g.empty() && p == g;
}

namespace {

bool contains_standalone_word(const std::string& haystack, const std::string& word) {
  if (word.empty()) return false;
  std::string h = to_upper_ascii(haystack), w = to_upper_ascii(word);
  auto alnum = [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
  };
  size_t pos = h.find(w);
  while (pos != std::string::npos) {
    bool left_ok = pos == 0 || !alnum(h[pos - 1]);
    bool right_ok = pos + w.size() >= h.size() || !alnum(h[pos + w.size()]);
    if (left_ok && right_ok) return true;
    pos = h.find(w, pos + 1);
  }
  return false;
}

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

double xword_reward(const std::string& completion, const std::string& gold,
                    const XwordShaping& shaping) {
  double tf = tag_factor(completion);
  auto answer = extract_tagged_block(completion, "answer");
  double exact = answer && score_xword(*answer, gold) ? 1.0 : 0.0;
  double contain = contains_standalone_word(completion, canonical_xword(gold)) ? 1.0 : 0.0;
  auto think = extract_tagged_block(completion, "think");
  double think_tokens = think ? static_cast<double>(approx_token_count(*think)) : 0.0;
  double ramp = shaping.ramp_tokens > 0 ? std::min(1.0, think_tokens / shaping.ramp_tokens) : 0.0;
  return clip01(exact + shaping.eps_contain * contain * tf + shaping.eps_len * ramp * tf);
}

double rush_reward(const std::string& pred, const std::string& gold,
                   const std::optional<Board>& board, const RushWeights& w) {
  MoveSeq gold_moves, pred_moves;
  try {
    gold_moves = parse_moves(trim(gold));
  } catch (const GrammarViolation&) {
    return 0.0;
  }
  try {
    pred_moves = parse_moves(trim(pred));
  } catch (const GrammarViolation&) {
    return 0.0;
  }
  double exact = format_moves(pred_moves) == format_moves(gold_moves) ? 1.0 : 0.0;

  size_t lcp = 0;
  while (lcp < pred_moves.size() && lcp < gold_moves.size() &&
         pred_moves[lcp] == gold_moves[lcp])
    ++lcp;
  double prefix =
      gold_moves.empty() ? 0.0 : static_cast<double>(lcp) / static_cast<double>(gold_moves.size());

  double solve = 0.0, phi = 0.0;
  if (board) {
    ApplyResult res = apply_moves(*board, pred_moves);
    if (res.solved && res.legal_prefix == pred_moves.size() && !pred_moves.empty())
      solve = std::min(1.0, static_cast<double>(gold_moves.size()) /
                                static_cast<double>(pred_moves.size()));
    // phi: fraction of applied moves that strictly reduce the exit potential
    Board cur = *board;
    int improving = 0;
    for (size_t i = 0; i < res.legal_prefix; ++i) {
      int before = exit_potential(cur);
      cur = apply_moves(cur, {pred_moves[i]}).board;
      if (exit_potential(cur) < before) ++improving;
    }
    if (res.legal_prefix > 0)
      phi = static_cast<double>(improving) / static_cast<double>(res.legal_prefix);
  } else {
    solve = exact;  // gold-only fallback: no simulation available
  }
  return clip01(w.exact * exact + w.solve * solve + w.prefix * prefix + w.phi * phi);
}

bool score_record(const TraceRecord& r, Domain domain) {
  auto answer = extract_tagged_block(r.completion, "answer");
  switch (domain) {
    case Domain::math:
      return answer && score_math(*answer, r.gold_answer);
    case Domain::xword:
      return answer && score_xword(*answer, r.gold_answer);
    case Domain::rushhour: {
      if (!answer) return false;
      MoveSeq gold_moves, pred_moves;
      try {
        gold_moves = parse_moves(trim(r.gold_answer));
        pred_moves = parse_moves(trim(*answer));
      } catch (const GrammarViolation&) {
        return false;
      }
      if (!r.board) return format_moves(pred_moves) == format_moves(gold_moves);
      Board b = parse_board(*r.board);
      ApplyResult res = apply_moves(b, pred_moves);
      // must solve, with every move legal, in exactly the optimal count
      return res.solved && res.legal_prefix == pred_moves.size() &&
             pred_moves.size() == gold_moves.size();
    }
  }
  return false;
}

}  // namespace ahalab
