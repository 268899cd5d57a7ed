#include <doctest.h>

#include <sstream>

#include "fuzz.hpp"

using namespace dbc;

namespace {

FieldSpec field(std::string name, BaseType base, std::vector<Constraint> constraints = {}) {
  FieldSpec f;
  f.name = std::move(name);
  f.base = base;
  f.constraints = std::move(constraints);
  return f;
}

SchemaPtr schema(std::string name, std::vector<FieldSpec> fields) {
  auto s = std::make_shared<TypeSchema>();
  s->name = std::move(name);
  s->fields = std::move(fields);
  return s;
}

struct Fixture {
  SchemaPtr in = schema("Request", {field("email", BaseType::String), field("topic", BaseType::String)});
  SchemaPtr out = schema("Reply", {field("summary", BaseType::String, {Constraint::length(std::nullopt, 20)})});
  std::shared_ptr<Contract> contract = std::make_shared<Contract>();
  Agent agent;

  Fixture() {
    contract->id = "reply";
    contract->input_schema = in;
    contract->output_schema = out;
    contract->prompt = "Summarize the topic.";
    contract->pre_retry.max_attempts = 1;
    agent.id = "a";
    agent.instructions = {"Be brief."};
    agent.schemas = {in, out};
    agent.contracts = {contract};
    GeneratorConfig g;
    g.name = "script";
    agent.generators = {g};
  }

  Json input() const { return Json{{"email", "a@gmail.com"}, {"topic", "tides"}}; }

  ExecutionResult run(std::vector<ScriptEntry> script, ExecuteOptions options = {}) {
    ScriptedGenerator gen(std::move(script));
    if (!options.sleep) options.sleep = [](Millis) {};
    return execute_nothrow(*contract, agent, gen, input(), options);
  }
};

std::vector<ScriptEntry> script(std::initializer_list<const char*> responses) {
  std::vector<ScriptEntry> out;
  for (const char* r : responses) out.push_back({std::nullopt, r});
  return out;
}

Predicate predicate(std::string name, std::string family, PredicateTarget target, PredicateFn fn) {
  return Predicate{std::move(name), std::move(family), target, std::move(fn)};
}

Predicate fixed(std::string name, bool pass) {
  return predicate(name, "f", PredicateTarget::Output, [pass, name](const Instance&, const Instance*) {
    return pass ? Verdict::pass() : Verdict::fail(name + " says no");
  });
}

}  // namespace

TEST_CASE("happy path: valid on the first attempt") {
  Fixture f;
  auto r = f.run(script({R"({"summary":"High and low."})"}));
  CHECK(r.outcome.is_validated());
  CHECK(r.trace.generator_calls == 1);
  CHECK(r.trace.error_history.empty());
  CHECK(testing::check_phase_order(r.trace).empty());
}

TEST_CASE("invalid then valid with two attempts") {
  Fixture f;
  f.contract->post_retry.max_attempts = 2;
  auto r = f.run(script({R"({"summary":"this summary is far too long to pass"})", R"({"summary":"Short."})"}));
  CHECK(r.outcome.is_validated());
  CHECK(r.trace.generator_calls == 2);
  CHECK(r.trace.error_history.size() == 1);
}

TEST_CASE("always invalid in strict mode fails after finalize") {
  Fixture f;
  f.contract->post_retry.max_attempts = 3;
  int hook_calls = 0;
  std::string hook_error;
  ExecuteOptions options;
  options.sleep = [](Millis) {};
  options.finalizer = [&](const Instance* validated, const std::string& error) {
    ++hook_calls;
    CHECK(validated == nullptr);
    hook_error = error;
  };
  ScriptedGenerator gen(script({"nope", "still nope", "never"}));
  try {
    execute(*f.contract, f.agent, gen, f.input(), options);
    FAIL("expected ContractFailure");
  } catch (const ContractFailure& e) {
    const auto& r = e.result();
    CHECK(r.outcome.kind() == ContractOutcome::Kind::Failed);
    CHECK(r.trace.generator_calls == 3);
    CHECK(r.trace.error_history.size() == 3);
    CHECK(r.trace.phases.back().phase == Phase::Finalize);
    CHECK(hook_calls == 1);
    CHECK_FALSE(hook_error.empty());
    CHECK(r.outcome.text() == hook_error);
  }
}

TEST_CASE("check_preconditions") {
  Fixture f;
  auto input = Instance::create(f.in, f.input());
  CHECK(check_preconditions(*f.contract, input).empty());

  f.contract->preconditions.push_back(predicate(
      "email_non_corporate", "email", PredicateTarget::Input, [](const Instance& in, const Instance*) {
        const auto email = in.value()["email"].get<std::string>();
        if (email.find("@gmail.com") != std::string::npos) return Verdict::fail("gmail is not accepted");
        return Verdict::pass();
      }));
  auto failures = check_preconditions(*f.contract, input);
  REQUIRE(failures.size() == 1);
  CHECK(failures[0].name == "email_non_corporate");
  CHECK(failures[0].message == "gmail is not accepted");

  f.contract->preconditions.push_back(predicate("second", "other", PredicateTarget::Input,
                                                [](const Instance&, const Instance*) -> Verdict {
                                                  throw std::runtime_error("second exploded");
                                                }));
  failures = check_preconditions(*f.contract, input);
  REQUIRE(failures.size() == 2);
  CHECK(failures[0].name == "email_non_corporate");
  CHECK(failures[1].name == "second");
  CHECK(failures[1].message == "second exploded");
}

TEST_CASE("check_postconditions reports exactly the failing subset") {
  Fixture f;
  auto input = Instance::create(f.in, f.input());
  auto output = Instance::create(f.out, Json{{"summary", "x"}});
  CHECK(check_postconditions(*f.contract, input, output).empty());
  for (int mask = 0; mask < 8; ++mask) {
    f.contract->postconditions.clear();
    std::vector<std::string> expected;
    for (int i = 0; i < 3; ++i) {
      const bool pass = mask & (1 << i);
      const auto name = "p" + std::to_string(i);
      f.contract->postconditions.push_back(fixed(name, pass));
      if (!pass) expected.push_back(name);
    }
    std::vector<std::string> got;
    for (const auto& failure : check_postconditions(*f.contract, input, output)) {
      got.push_back(failure.name);
      CHECK(failure.message == failure.name + " says no");
    }
    CHECK(got == expected);
  }
}

TEST_CASE("output length predicate rejects a long summary") {
  Fixture f;
  f.contract->postconditions.push_back(predicate(
      "short", "size", PredicateTarget::Output, [](const Instance&, const Instance* out) {
        return utf8_length(out->value()["summary"].get<std::string>()) <= 5 ? Verdict::pass()
                                                                            : Verdict::fail("too long");
      }));
  auto input = Instance::create(f.in, f.input());
  auto output = Instance::create(f.out, Json{{"summary", "rather long"}});
  auto failures = check_postconditions(*f.contract, input, output);
  REQUIRE(failures.size() == 1);
  CHECK(failures[0].message == "too long");
}

TEST_CASE("empty failure messages are replaced") {
  CHECK_FALSE(Verdict::fail("").message().empty());
}

TEST_CASE("apply_act") {
  Fixture f;
  auto input = Instance::create(f.in, Json{{"email", "A@B.COM"}, {"topic", "Tides"}});
  auto same = apply_act(*f.contract, input);
  REQUIRE(std::holds_alternative<Instance>(same));
  CHECK(std::get<Instance>(same) == input);

  f.contract->act = Act{f.in, [](const Instance& in) {
                          Json v = in.value();
                          auto s = v["email"].get<std::string>();
                          for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                          v["email"] = s;
                          return v;
                        }};
  auto lowered = apply_act(*f.contract, input);
  REQUIRE(std::holds_alternative<Instance>(lowered));
  CHECK(std::get<Instance>(lowered).value() == Json{{"email", "a@b.com"}, {"topic", "Tides"}});

  f.contract->act = Act{f.in, [](const Instance&) { return Json{{"email", 5}}; }};
  CHECK(std::holds_alternative<ActFailure>(apply_act(*f.contract, input)));

  auto r = f.run(script({R"({"summary":"x"})"}));
  CHECK(r.outcome.kind() == ContractOutcome::Kind::Failed);
  CHECK(r.trace.generator_calls == 0);
  REQUIRE(r.trace.error_history.size() == 1);
  CHECK(r.trace.error_history.back().phase == Phase::Act);
  CHECK(r.trace.error_history.back().source == ErrorSource::Act);
  CHECK(testing::check_phase_order(r.trace).empty());
}

TEST_CASE("act output is the generation context") {
  Fixture f;
  auto context = schema("Context", {field("topic", BaseType::String)});
  f.contract->act = Act{context, [](const Instance& in) {
                          return Json{{"topic", "ACTED " + in.value()["topic"].get<std::string>()}};
                        }};
  ScriptedGenerator gen(script({R"({"summary":"ok"})"}));
  ExecuteOptions options;
  auto r = execute_nothrow(*f.contract, f.agent, gen, f.input(), options);
  CHECK(r.outcome.is_validated());
  REQUIRE(gen.prompts().size() == 1);
  CHECK(gen.prompts()[0].find("ACTED tides") != std::string::npos);
  CHECK(gen.prompts()[0].find("a@gmail.com") == std::string::npos);
}

TEST_CASE("finalize maps state to outcome per mode") {
  Fixture f;
  auto out = Instance::create(f.out, Json{{"summary", "ok"}});
  auto d = Instance::create(f.out, Json{{"summary", "default"}});
  for (auto mode : {FallbackMode::strict(), FallbackMode::graceful_raw(), FallbackMode::graceful_default(d)}) {
    ExecutionTrace trace;
    FinalizeState state;
    state.validated = out;
    auto o = finalize(*f.contract, state, mode, {}, trace);
    CHECK(o.is_validated());
    CHECK(trace.phases.back().phase == Phase::Finalize);
  }
  ExecutionTrace trace;
  FinalizeState failed;
  failed.error_summary = "broken";
  auto dd = finalize(*f.contract, failed, FallbackMode::graceful_default(d), {}, trace);
  CHECK(dd.kind() == ContractOutcome::Kind::DegradedDefault);
  CHECK(*dd.instance() == d);

  auto raw = finalize(*f.contract, failed, FallbackMode::graceful_raw(), {}, trace);
  CHECK(raw.kind() == ContractOutcome::Kind::DegradedRaw);
  CHECK(raw.text().empty());

  failed.last_generator_text = "last words";
  CHECK(finalize(*f.contract, failed, FallbackMode::graceful_raw(), {}, trace).text() == "last words");
  CHECK(finalize(*f.contract, failed, FallbackMode::strict(), {}, trace).kind() == ContractOutcome::Kind::Failed);
}

TEST_CASE("a failing finalizer hook is recorded, not raised") {
  Fixture f;
  f.contract->fallback = FallbackMode::graceful_raw();
  ExecuteOptions options;
  options.finalizer = [](const Instance*, const std::string&) { throw std::runtime_error("hook broke"); };
  ScriptedGenerator gen(script({"garbage"}));
  f.contract->post_retry.max_attempts = 1;
  auto r = execute(*f.contract, f.agent, gen, f.input(), options);
  CHECK(r.outcome.kind() == ContractOutcome::Kind::DegradedRaw);
  CHECK(r.outcome.text() == "garbage");
  REQUIRE(r.trace.finalizer_error.has_value());
  CHECK(r.trace.finalizer_error->find("hook broke") != std::string::npos);
}

TEST_CASE("malformed input in graceful-raw mode yields empty raw text") {
  Fixture f;
  f.contract->fallback = FallbackMode::graceful_raw();
  ScriptedGenerator gen({});
  auto r = execute(*f.contract, f.agent, gen, Json{{"email", 1}}, {});
  CHECK(r.outcome.kind() == ContractOutcome::Kind::DegradedRaw);
  CHECK(r.outcome.text().empty());
  CHECK(r.trace.generator_calls == 0);
  CHECK(testing::check_phase_order(r.trace).empty());
}

TEST_CASE("input fixing re-validates the fixed input") {
  Fixture f;
  f.contract->pre_retry.max_attempts = 3;
  f.contract->preconditions.push_back(predicate(
      "no_gmail", "email", PredicateTarget::Input, [](const Instance& in, const Instance*) {
        return in.value()["email"].get<std::string>().find("gmail") == std::string::npos
                   ? Verdict::pass()
                   : Verdict::fail("gmail is not accepted");
      }));
  auto r = f.run({{std::string("was rejected"), R"({"email":"still@gmail.com","topic":"tides"})"},
                  {std::string("was rejected"), R"({"email":"x@corp.example","topic":"tides"})"},
                  {std::nullopt, R"({"summary":"ok"})"}});
  CHECK(r.outcome.is_validated());
  CHECK(r.trace.generator_calls == 3);
  CHECK(r.trace.error_history.size() == 2);
  CHECK(r.trace.error_history.records()[0].attempt == 1);
  CHECK(r.trace.error_history.records()[1].attempt == 2);
  REQUIRE(r.trace.accepted_input.has_value());
  CHECK(r.trace.accepted_input->value()["email"] == "x@corp.example");
  CHECK(testing::check_phase_order(r.trace).empty());
}

TEST_CASE("remediation disabled means a single attempt") {
  Fixture f;
  f.contract->post_retry.max_attempts = 5;
  f.contract->post_retry.remediation_enabled = false;
  auto r = f.run(script({"bad", R"({"summary":"ok"})"}));
  CHECK(r.outcome.kind() == ContractOutcome::Kind::Failed);
  CHECK(r.trace.generator_calls == 1);
}

TEST_CASE("postconditions all re-run after every fix") {
  Fixture f;
  f.contract->post_retry.max_attempts = 3;
  int evaluations = 0;
  f.contract->postconditions.push_back(predicate("count", "c", PredicateTarget::Output,
                                                 [&](const Instance&, const Instance*) {
                                                   ++evaluations;
                                                   return Verdict::pass();
                                                 }));
  f.contract->postconditions.push_back(predicate(
      "has_ok", "c", PredicateTarget::InputOutput, [](const Instance&, const Instance* out) {
        return out->value()["summary"] == "ok" ? Verdict::pass() : Verdict::fail("want ok");
      }));
  auto r = f.run(script({R"({"summary":"no"})", R"({"summary":"nah"})", R"({"summary":"ok"})"}));
  CHECK(r.outcome.is_validated());
  CHECK(evaluations == 3);
  CHECK(r.trace.error_history.records()[0].raw_excerpt == R"({"summary":"no"})");
}

TEST_CASE("delays are accounted in latency and passed to the sleeper") {
  Fixture f;
  f.contract->post_retry = RetryPolicy{3, Millis(10), 2.0, Millis(100), true};
  std::vector<Millis> waits;
  ExecuteOptions options;
  options.sleep = [&](Millis d) { waits.push_back(d); };
  auto r = f.run(script({"x", "y", R"({"summary":"ok"})"}), options);
  CHECK(r.outcome.is_validated());
  CHECK(waits == std::vector<Millis>{Millis(10), Millis(20)});
  CHECK(r.trace.latency >= Millis(30));
}

TEST_CASE("the generator call cap stops execution") {
  Fixture f;
  f.contract->post_retry.max_attempts = 4;
  f.agent.hyperparameters.max_generator_calls = 2;
  auto r = f.run(script({"a", "b", "c", "d"}));
  CHECK(r.trace.generator_calls == 2);
  CHECK(r.trace.cost_cap_reached);
  CHECK(r.outcome.kind() == ContractOutcome::Kind::Failed);
  CHECK(r.outcome.text().find("cap") != std::string::npos);
}

TEST_CASE("transport errors consume attempts") {
  Fixture f;
  f.contract->post_retry.max_attempts = 2;
  auto r = f.run({});
  CHECK(r.trace.generator_calls == 2);
  CHECK(r.trace.transport_error);
  REQUIRE(r.trace.error_history.size() == 2);
  CHECK(r.trace.error_history.back().source == ErrorSource::Transport);
  CHECK(testing::check_phase_order(r.trace).empty());
}

TEST_CASE("request seed and hyperparameters reach the generator") {
  Fixture f;
  f.agent.hyperparameters.seed = 17;
  f.agent.hyperparameters.temperature = 0.4;
  struct Spy : Generator {
    std::optional<std::int64_t> seed;
    double temperature = -1;
    GeneratorResponse generate(const GeneratorRequest& r) override {
      seed = r.seed;
      temperature = r.temperature;
      return {R"({"summary":"ok"})", 1, 1, Millis(0)};
    }
    std::shared_ptr<Generator> fork(std::uint64_t) const override { return std::make_shared<Spy>(); }
    std::string_view kind() const override { return "spy"; }
  } spy;
  execute_nothrow(*f.contract, f.agent, spy, f.input());
  CHECK(spy.seed == std::optional<std::int64_t>(17));
  CHECK(spy.temperature == 0.4);
  ExecuteOptions options;
  options.request_seed = 5;
  execute_nothrow(*f.contract, f.agent, spy, f.input(), options);
  CHECK(spy.seed == std::optional<std::int64_t>(5));
}

TEST_CASE("contract and agent validation") {
  Fixture f;
  CHECK(check_contract(*f.contract).empty());
  CHECK(check_agent(f.agent).empty());
  f.contract->postconditions.push_back(fixed("dup", true));
  f.contract->postconditions.push_back(fixed("dup", true));
  CHECK_FALSE(check_contract(*f.contract).empty());
  f.contract->postconditions.clear();
  f.contract->preconditions.push_back(predicate("out", "f", PredicateTarget::Output, {}));
  CHECK_FALSE(check_contract(*f.contract).empty());
  f.contract->preconditions.clear();
  f.agent.hyperparameters.max_generator_calls = 0;
  CHECK_FALSE(check_agent(f.agent).empty());
  f.agent.hyperparameters.max_generator_calls = 16;
  f.agent.generators.clear();
  CHECK_FALSE(check_agent(f.agent).empty());
}

TEST_CASE("trace export uses stable field names") {
  Fixture f;
  f.contract->post_retry.max_attempts = 2;
  auto r = f.run(script({"bad", R"({"summary":"ok"})"}));
  auto text = trace_to_jsonl(r.trace, Json{{"run", 3}});
  std::istringstream lines(text);
  std::string line;
  std::vector<Json> docs;
  while (std::getline(lines, line)) docs.push_back(Json::parse(line));
  REQUIRE(docs.size() == r.trace.phases.size() + 1);
  for (std::size_t i = 0; i + 1 < docs.size(); ++i) {
    CHECK(docs[i]["run"] == 3);
    CHECK(docs[i].contains("phase"));
    CHECK(docs[i].contains("attempt"));
    CHECK(docs[i].contains("outcome"));
  }
  const auto& summary = docs.back();
  CHECK(summary["generator_calls"] == 2);
  CHECK(summary.contains("latency_ms"));
  CHECK(summary.contains("tokens_in"));
  CHECK(summary.contains("tokens_out"));
  CHECK(summary["outcome"] == "validated");
}

TEST_CASE("an act failure after input fixing continues the input-side numbering") {
  Fixture f;
  f.contract->pre_retry.max_attempts = 2;
  f.contract->act = Act{f.in, [](const Instance&) -> Json { throw std::runtime_error("act broke"); }};
  ScriptedGenerator gen({{std::string("was rejected"), R"({"email":"b@c.d","topic":"tides"})"}});
  auto r = execute_nothrow(*f.contract, f.agent, gen, Json{{"email", 3}}, {});
  CHECK(r.outcome.kind() == ContractOutcome::Kind::Failed);
  REQUIRE(r.trace.error_history.size() == 2);
  CHECK(r.trace.error_history.records()[0].phase == Phase::TypeIn);
  CHECK(r.trace.error_history.records()[1].phase == Phase::Act);
  CHECK(r.trace.error_history.records()[1].attempt == 2);
  CHECK(r.outcome.text().find("act broke") != std::string::npos);
  CHECK(testing::check_phase_order(r.trace).empty());
}
