#include "ahalab/shift_detect.hpp"

#include "json.hpp"

namespace ahalab {

namespace {

CueSpec phrase(const char* id, const char* cat, std::vector<std::string> alts) {
  return CueSpec{id, cat, {std::move(alts)}, 0};
}

CueSpec gap(const char* id, const char* cat, std::vector<std::string> first,
            std::vector<std::string> second, std::size_t max_gap) {
  return CueSpec{id, cat, {std::move(first), std::move(second)}, max_gap};
}

std::vector<CueSpec> make_builtin() {
  std::vector<CueSpec> c;
  // pauses and self-interruptions
  c.push_back(phrase("pause.wait", "pause", {"wait"}));
  c.push_back(phrase("pause.hold_on", "pause", {"hold on", "hold up", "hang on"}));
  c.push_back(phrase("pause.moment", "pause",
                     {"one second", "just a second", "one sec", "give me a moment",
                      "give me a second", "just a moment"}));
  c.push_back(phrase("pause.pause", "pause", {"pause"}));
  c.push_back(phrase("pause.second_thought", "pause",
                     {"on second thought", "on second thoughts", "on further thought"}));
  c.push_back(phrase("pause.reconsider", "pause", {"reconsider", "rethink", "re-think"}));
  // explicit pivots / corrections
  c.push_back(phrase("pivot.actually", "pivot", {"actually"}));
  c.push_back(phrase("pivot.in_fact", "pivot", {"in fact"}));
  c.push_back(phrase("pivot.rather", "pivot", {"rather"}));
  c.push_back(phrase("pivot.instead", "pivot", {"instead"}));
  c.push_back(phrase("pivot.fix_that", "pivot",
                     {"let's fix", "let us fix", "let's correct", "fix that", "correct that"}));
  c.push_back(phrase("pivot.correction", "pivot", {"correction:", "to correct", "correcting"}));
  c.push_back(phrase("pivot.change_to", "pivot",
                     {"change to", "switch to", "change it to", "switch it to",
                      "change that to", "change this to"}));
  c.push_back(phrase("pivot.replace", "pivot",
                     {"replace with", "replace it with", "replace that with"}));
  c.push_back(phrase("pivot.try_instead", "pivot",
                     {"try instead", "consider instead", "instead try"}));
  c.push_back(phrase("pivot.alternative", "pivot",
                     {"alternate", "alternative", "alternatively"}));
  c.push_back(phrase("pivot.new_candidate", "pivot",
                     {"new candidate", "new answer", "new approach", "different approach",
                      "another approach"}));
  // immediate reversals
  c.push_back(phrase("reversal.no_that", "reversal",
                     {"no, that", "no, this", "no, it", "no wait", "no, wait", "no hold on"}));
  c.push_back(phrase("reversal.never_mind", "reversal", {"never mind", "nevermind", "nvm"}));
  c.push_back(phrase("reversal.disregard", "reversal",
                     {"disregard that", "disregard this", "ignore that", "ignore this",
                      "ignore my previous"}));
  c.push_back(phrase("reversal.scratch", "reversal",
                     {"scratch that", "strike that", "forget that", "forget what i"}));
  c.push_back(phrase("reversal.retract", "reversal",
                     {"i retract", "take that back", "i take it back", "i stand corrected"}));
  c.push_back(gap("reversal.not_x_but", "reversal", {"not"}, {"but rather", "but actually"}, 24));
  // error admissions
  c.push_back(phrase("admit.wrong", "admission",
                     {"i was wrong", "that's wrong", "thats wrong", "that is wrong",
                      "this is wrong", "it's wrong", "its wrong", "which is wrong"}));
  c.push_back(phrase("admit.incorrect", "admission", {"incorrect"}));
  c.push_back(phrase("admit.mistake", "admission", {"mistake"}));
  c.push_back(phrase("admit.my_bad", "admission", {"my bad"}));
  c.push_back(phrase("admit.oops", "admission", {"oops", "whoops"}));
  c.push_back(phrase("admit.apologies", "admission",
                     {"apologies", "i apologize", "my apologies"}));
  c.push_back(phrase("admit.erroneous", "admission", {"erroneous", "in error"}));
  // mis-* failures
  c.push_back(phrase("mis.misread", "mis", {"misread", "mis-read"}));
  c.push_back(phrase("mis.miscount", "mis", {"miscount*", "mis-count*"}));
  c.push_back(phrase("mis.miscalculate", "mis",
                     {"miscalculat*", "calculation error", "arithmetic error",
                      "arithmetic slip"}));
  c.push_back(phrase("mis.misapply", "mis", {"misappl*", "mis-appl*"}));
  c.push_back(phrase("mis.misparse", "mis", {"mispars*"}));
  c.push_back(phrase("mis.misspell", "mis", {"misspell*", "mis-spell*", "misspelt"}));
  c.push_back(phrase("mis.misindex", "mis", {"misindex*", "mis-index*"}));
  c.push_back(phrase("mis.misuse", "mis", {"misuse*", "misusing"}));
  c.push_back(phrase("mis.conflate", "mis", {"conflat*"}));
  c.push_back(phrase("mis.typo", "mis", {"typo"}));
  c.push_back(phrase("mis.off_by_one", "mis", {"off-by-one", "off by one"}));
  // constraint / length mismatches
  c.push_back(phrase("constraint.doesnt_fit", "constraint",
                     {"doesn't fit", "does not fit", "doesnt fit", "don't fit", "do not fit",
                      "dont fit", "doesn't match", "does not match", "doesnt match",
                      "don't match", "do not match", "dont match"}));
  c.push_back(phrase("constraint.letters_dont_fit", "constraint",
                     {"letters don't fit", "letters do not fit", "letters dont fit"}));
  c.push_back(phrase("constraint.length_mismatch", "constraint",
                     {"pattern mismatch", "length mismatch", "wrong length",
                      "wrong number of letters"}));
  c.push_back(phrase("constraint.letter_count", "constraint",
                     {"too many letters", "too few letters", "one letter too", "letter short",
                      "letters short"}));
  c.push_back(phrase("constraint.enumeration", "constraint",
                     {"violates enumeration", "enumeration mismatch",
                      "doesn't satisfy the enumeration"}));
  c.push_back(phrase("constraint.parse", "constraint",
                     {"doesn't parse", "does not parse", "doesnt parse", "fails to parse"}));
  c.push_back(phrase("constraint.definition", "constraint",
                     {"definition mismatch", "doesn't match the definition",
                      "does not match the definition"}));
  c.push_back(phrase("constraint.anagram", "constraint",
                     {"not an anagram", "isn't an anagram", "is not an anagram",
                      "fodder mismatch", "anagram fodder"}));
  // contradictions / impossibility
  c.push_back(phrase("contradiction.contradiction", "contradiction",
                     {"contradiction", "contradicts", "contradictory"}));
  c.push_back(phrase("contradiction.inconsistent", "contradiction",
                     {"inconsistent", "inconsistency"}));
  c.push_back(phrase("contradiction.cant_be", "contradiction",
                     {"can't be", "cannot be", "cant be"}));
  c.push_back(phrase("contradiction.impossible", "contradiction", {"impossible"}));
  c.push_back(phrase("contradiction.nonsense", "contradiction",
                     {"doesn't make sense", "does not make sense", "doesnt make sense",
                      "doesn't add up", "does not add up", "doesnt add up"}));
  c.push_back(phrase("contradiction.both", "contradiction",
                     {"cannot both", "can't both", "cant both"}));
  // re-check / backtrack
  c.push_back(phrase("recheck.recheck", "recheck",
                     {"recheck", "re-check", "double-check", "double check", "check again",
                      "checking again"}));
  c.push_back(phrase("recheck.reevaluate", "recheck",
                     {"re-evaluate", "reevaluate", "re-examine", "reexamine", "upon review",
                      "upon reflection", "upon re-reading", "re-reading"}));
  c.push_back(phrase("recheck.backtrack", "recheck", {"backtrack", "back-track"}));
  c.push_back(phrase("recheck.start_over", "recheck",
                     {"start over", "start again", "restart", "from scratch"}));
  // "previously X, but ..." templates
  c.push_back(gap("prevbut.thought", "prevbut",
                  {"i thought", "i initially thought", "i originally thought",
                   "i first thought", "initially i thought", "originally i thought",
                   "at first i thought", "i assumed", "i initially assumed"},
                  {"but", "however", "yet", "turns out"}, 100));
  c.push_back(gap("prevbut.previously", "prevbut", {"previously", "earlier"},
                  {"but", "however"}, 100));
  c.push_back(gap("prevbut.however_fix", "prevbut", {"however", "but"},
                  {"correct", "fix", "instead", "rather", "change", "should be"}, 80));
  // omissions / oversights
  c.push_back(phrase("omission.forgot", "omission",
                     {"i forgot", "forgot to", "forgot the", "forgetting"}));
  c.push_back(phrase("omission.missed", "omission",
                     {"i missed", "missed the", "missed a", "overlooked", "i ignored",
                      "didn't notice", "did not notice", "didnt notice", "failed to notice"}));
  c.push_back(phrase("omission.misremember", "omission", {"misremember*", "misheard"}));
  // directional swaps
  c.push_back(phrase("swap.reversed", "swap",
                     {"reversed", "backwards", "backward", "the wrong way", "wrong direction",
                      "wrong order"}));
  c.push_back(phrase("swap.swapped", "swap", {"swapped", "swap them", "swapping"}));
  c.push_back(phrase("swap.mixed_up", "swap", {"mixed up", "mixed them up", "mix-up", "mixup"}));
  // realization formulas
  c.push_back(phrase("realize.turns_out", "realize", {"turns out"}));
  c.push_back(phrase("realize.realize", "realize",
                     {"i realize", "i now realize", "i realized", "now i see", "i see now",
                      "i see my error", "now i notice", "i notice now"}));
  c.push_back(phrase("realize.reflection", "realize",
                     {"on reflection", "after all", "come to think of it"}));
  // failure templates
  c.push_back(phrase("failure.fails_because", "failure",
                     {"fails because", "fail because", "failed because", "this fails",
                      "that fails"}));
  c.push_back(phrase("failure.wont_work", "failure",
                     {"won't work", "wont work", "will not work", "not working",
                      "doesn't work", "does not work", "doesnt work", "won't fit"}));
  c.push_back(phrase("failure.dead_end", "failure", {"dead end", "dead-end"}));
  return c;
}

}  // namespace

const std::vector<CueSpec>& builtin_cues() {
  static const std::vector<CueSpec> table = make_builtin();
  return table;
}

std::string cues_to_json(const std::vector<CueSpec>& cues) {
  nlohmann::ordered_json root;
  root["cue_whitelist_version"] = 1;
  auto& arr = root["cues"];
  arr = nlohmann::ordered_json::array();
  for (const auto& c : cues) {
    nlohmann::ordered_json j;
    j["id"] = c.id;
    j["category"] = c.category;
    j["parts"] = c.parts;
    if (c.parts.size() > 1) j["max_gap"] = c.max_gap;
    arr.push_back(j);
  }
  return root.dump(2) + "\n";
}

std::vector<CueSpec> cues_from_json(const std::string& json_text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("cue file is not valid JSON: ") + e.what());
  }
  if (!root.is_object() || !root.contains("cues") || !root["cues"].is_array())
    throw Error("cue file must be an object with a 'cues' array");
  std::vector<CueSpec> out;
  for (const auto& j : root["cues"]) {
    CueSpec c;
    c.id = j.at("id").get<std::string>();
    c.category = j.at("category").get<std::string>();
    c.parts = j.at("parts").get<std::vector<std::vector<std::string>>>();
    c.max_gap = j.value("max_gap", 80);
    if (c.parts.empty() || c.id.empty())
      throw Error("cue entries need an id and at least one part");
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace ahalab
