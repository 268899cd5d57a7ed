#include <doctest.h>

#include <cmath>

#include "fuzz.hpp"

using namespace dbc;
using namespace dbc::testing;

TEST_CASE("serialize then parse returns the same instance") {
  Rng rng(1);
  for (int i = 0; i < 1500; ++i) {
    auto schema = random_schema(rng);
    REQUIRE(check_schema(*schema).empty());
    auto value = random_valid_value(*schema, rng);
    auto instance = Instance::create(schema, value);
    const auto text = serialize_instance(instance);
    auto parsed = parse_output(text, schema);
    REQUIRE(std::holds_alternative<Instance>(parsed));
    CHECK(std::get<Instance>(parsed) == instance);
    CHECK(serialize_instance(std::get<Instance>(parsed)) == text);
    // Wrapped in prose and a fence, the candidate is still found.
    auto fenced = parse_output("Here you go:\n```json\n" + text + "\n```\nanything else?", schema);
    CHECK(std::holds_alternative<Instance>(fenced));
  }
}

TEST_CASE("schema documents round-trip") {
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    auto schema = random_schema(rng);
    auto again = schema_from_json(schema_to_json(*schema));
    INFO(schema_to_json(*schema).dump() << "\n" << schema_to_json(*again).dump());
    CHECK(*again == *schema);
    CHECK(render_schema_prompt(*again) == render_schema_prompt(*schema));
  }
}

TEST_CASE("validate_instance agrees with the brute-force oracle") {
  Rng rng(3);
  std::size_t invalid = 0;
  for (int i = 0; i < 3000; ++i) {
    auto schema = random_schema(rng);
    auto value = random_any_value(*schema, rng);
    auto got = validate_instance(*schema, value);
    auto expected = oracle_violations(*schema, value);
    std::vector<std::pair<std::string, ViolationKind>> seen;
    for (const auto& v : got) seen.emplace_back(v.path, v.kind);
    INFO(schema_to_json(*schema).dump() << "\n" << value.dump());
    CHECK(seen == expected);
    if (!got.empty()) ++invalid;
  }
  // The generator has to exercise both outcomes for the comparison to mean much.
  CHECK(invalid > 500);
  CHECK(invalid < 2900);
}

TEST_CASE("code point counting matches an independent count") {
  Rng rng(4);
  const std::vector<std::string> pieces{"a", "Z", " ", "\xC3\xA9", "\xE2\x82\xAC", "\xF0\x9F\x98\x80", "\n"};
  for (int i = 0; i < 500; ++i) {
    std::string s;
    const int n = std::uniform_int_distribution<int>(0, 30)(rng);
    for (int k = 0; k < n; ++k) s += pieces[rng() % pieces.size()];
    CHECK(utf8_length(s) == count_code_points(s));
    CHECK(utf8_length(utf8_prefix(s, 7)) == std::min<std::size_t>(7, count_code_points(s)));
  }
}

TEST_CASE("backoff follows the geometric schedule with a ceiling") {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    RetryPolicy p;
    p.max_attempts = std::uniform_int_distribution<int>(2, 10)(rng);
    p.initial_delay = Millis(std::uniform_int_distribution<int>(0, 200)(rng));
    p.backoff_factor = std::uniform_real_distribution<double>(1.0, 4.0)(rng);
    p.max_delay = p.initial_delay + Millis(std::uniform_int_distribution<int>(0, 2000)(rng));
    REQUIRE(check_retry_policy(p).empty());
    Millis previous{0};
    for (int k = 2; k <= p.max_attempts; ++k) {
      const double expected =
          std::min(p.initial_delay.count() * std::pow(p.backoff_factor, k - 2), p.max_delay.count());
      const auto got = next_delay(p, k);
      CHECK(got.count() == doctest::Approx(expected));
      CHECK(got >= previous);
      CHECK(got <= p.max_delay);
      previous = got;
    }
  }
}

TEST_CASE("corrective prompts carry every failure line in order") {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    ErrorHistory h;
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int k = 1; k <= n; ++k) {
      h.append(ErrorRecord{k, Phase::Post, ErrorSource::Postcondition, "p" + std::to_string(rng() % 3),
                           "message " + std::to_string(rng() % 5), std::string(rng() % 700, 'r')});
    }
    const auto prompt = build_corrective_prompt("base", "schema", h);
    std::size_t at = 0;
    for (const auto& r : h.records()) {
      const auto pos = prompt.find(failure_line(r), at);
      REQUIRE(pos != std::string::npos);
      at = pos + 1;
    }
    CHECK(prompt.rfind("base", 0) == 0);
  }
}

TEST_CASE("fuzzed executions keep the execution invariants") {
  Rng rng(7);
  int validated = 0;
  for (int i = 0; i < 300; ++i) {
    auto c = random_case(rng);
    auto run = run_case(c);
    auto problems = check_invariants(c, run);
    auto unsound = check_soundness(c, run);
    problems.insert(problems.end(), unsound.begin(), unsound.end());
    std::string joined;
    for (const auto& p : problems) joined += p + "\n";
    INFO("case " << i << ":\n" << joined << trace_to_jsonl(run.result.trace));
    CHECK(problems.empty());
    if (run.result.outcome.is_validated()) ++validated;

    // Run records: success is exactly the conjunction of the family flags.
    auto record = make_run_record(*c.contract, 0, run.result.trace);
    bool all = true;
    for (const auto& [name, ok] : record.families) all = all && ok;
    CHECK(all == record.success);
    CHECK(record.families.back().first == kTypeFamily);
  }
  CHECK(validated > 20);
}

TEST_CASE("identical cases produce identical traces") {
  Rng a(8), b(8);
  for (int i = 0; i < 100; ++i) {
    auto ca = random_case(a);
    auto cb = random_case(b);
    CHECK(trace_to_jsonl(run_case(ca).result.trace) == trace_to_jsonl(run_case(cb).result.trace));
  }
}
