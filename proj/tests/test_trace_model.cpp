#include "ahalab/trace_model.hpp"

#include "doctest.h"
#include "test_support.hpp"

using namespace ahalab;

TEST_CASE("enum names round-trip") {
  for (Domain d : {Domain::math, Domain::xword, Domain::rushhour})
    CHECK(domain_from_name(domain_name(d)) == d);
  CHECK(domain_from_name("crossword") == Domain::xword);
  CHECK(domain_from_name("rush_hour") == Domain::rushhour);
  CHECK_THROWS_AS(domain_from_name("sudoku"), InvalidRecord);

  CHECK(pass_from_value("pass1") == Pass::pass1);
  CHECK(pass_from_value("2") == Pass::pass2);
  CHECK_THROWS_AS(pass_from_value("pass3"), InvalidRecord);

  for (Detector d : {Detector::formal_input_judge, Detector::judge, Detector::lexical})
    CHECK(detector_from_name(detector_name(d)) == d);

  for (Confidence c : {Confidence::low, Confidence::medium, Confidence::high})
    CHECK(confidence_from_name(confidence_name(c)) == c);
  CHECK(!confidence_from_name("certain"));
}

TEST_CASE("verdict validation") {
  ShiftVerdict v = testsup::make_shift(true);
  CHECK_NOTHROW(validate_verdict(v));

  SUBCASE("positive without markers") {
    v.markers.clear();
    CHECK_THROWS_AS(validate_verdict(v), InvalidRecord);
  }
  SUBCASE("positive without offset") {
    v.first_marker_index = -1;
    CHECK_THROWS_AS(validate_verdict(v), InvalidRecord);
  }
  SUBCASE("excerpt caps") {
    v.before_excerpt.assign(121, 'x');
    CHECK_THROWS_AS(validate_verdict(v), InvalidRecord);
    v.before_excerpt.assign(120, 'x');
    v.after_excerpt.assign(141, 'x');
    CHECK_THROWS_AS(validate_verdict(v), InvalidRecord);
    v.after_excerpt.assign(140, 'x');
    v.explanation.assign(141, 'x');
    CHECK_THROWS_AS(validate_verdict(v), InvalidRecord);
    v.explanation.assign(140, 'x');
    CHECK_NOTHROW(validate_verdict(v));
  }
  SUBCASE("negative verdict needs no markers") {
    ShiftVerdict n = testsup::make_shift(false);
    CHECK_NOTHROW(validate_verdict(n));
  }
}

TEST_CASE("record validation") {
  TraceRecord r = testsup::make_record("p1", 0, 0.0, 0, true, false);
  CHECK_NOTHROW(validate_record(r));

  SUBCASE("empty problem id") {
    r.problem_id = "";
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
  }
  SUBCASE("negative step") {
    r.checkpoint_step = -1;
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
  }
  SUBCASE("temperature range") {
    r.temperature = 1.5;
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
    r.temperature = -0.1;
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
    r.temperature = 1.0;
    CHECK_NOTHROW(validate_record(r));
  }
  SUBCASE("sample index against declared g") {
    r.sample_index = 8;
    CHECK_NOTHROW(validate_record(r, 0));  // unchecked when g unknown
    CHECK_THROWS_AS(validate_record(r, 8), InvalidRecord);
    CHECK_NOTHROW(validate_record(r, 9));
  }
  SUBCASE("entropies must be finite and nonnegative") {
    r.token_entropies = {0.5, -0.1};
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
    r.token_entropies = {0.5, std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
  }
  SUBCASE("span bounds") {
    r.token_entropies = {0.1, 0.2, 0.3};
    r.think_span = Span{0, 4};
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
    r.think_span = Span{2, 1};
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
    r.think_span = Span{0, 3};
    CHECK_NOTHROW(validate_record(r));
  }
  SUBCASE("span without entropies") {
    r.token_entropies.clear();
    r.answer_span = Span{0, 0};
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
  }
  SUBCASE("embedded verdict is validated") {
    auto bad = testsup::make_shift(true);
    bad.markers.clear();
    r.shift = bad;
    CHECK_THROWS_AS(validate_record(r), InvalidRecord);
  }
}
