#include <benchmark/benchmark.h>

#include "dbc/dbc.hpp"

using namespace dbc;

namespace {

SchemaPtr person() {
  auto address = std::make_shared<TypeSchema>();
  address->name = "Address";
  FieldSpec street;
  street.name = "street";
  street.constraints = {Constraint::non_empty()};
  FieldSpec zip;
  zip.name = "zip";
  zip.constraints = {Constraint::regex("^[0-9]{5}$")};
  address->fields = {street, zip};

  auto s = std::make_shared<TypeSchema>();
  s->name = "Person";
  FieldSpec name;
  name.name = "name";
  name.constraints = {Constraint::length(1, 40)};
  FieldSpec age;
  age.name = "age";
  age.base = BaseType::Integer;
  age.constraints = {Constraint::range(0, 150)};
  FieldSpec home;
  home.name = "home";
  home.base = BaseType::Nested;
  home.nested = address;
  FieldSpec tags;
  tags.name = "tags";
  tags.base = BaseType::List;
  auto item = std::make_shared<FieldSpec>();
  item->base = BaseType::String;
  tags.items = item;
  s->fields = {name, age, home, tags};
  return s;
}

const Json kValue = Json::parse(
    R"({"name":"Ada Lovelace","age":36,"home":{"street":"12 St James's Square","zip":"10001"},"tags":["math","poetry"]})");

void BM_Validate(benchmark::State& state) {
  auto s = person();
  for (auto _ : state) benchmark::DoNotOptimize(validate_instance(*s, kValue));
}
BENCHMARK(BM_Validate);

void BM_ParseOutput(benchmark::State& state) {
  auto s = person();
  const std::string text = "Sure, here it is:\n```json\n" + kValue.dump(2) + "\n```\n";
  for (auto _ : state) benchmark::DoNotOptimize(parse_output(text, s));
}
BENCHMARK(BM_ParseOutput);

struct Setup {
  Contract contract;
  Agent agent;

  Setup() {
    contract.id = "bench";
    auto in = std::make_shared<TypeSchema>();
    in->name = "Query";
    FieldSpec q;
    q.name = "q";
    in->fields = {q};
    contract.input_schema = in;
    contract.output_schema = person();
    contract.post_retry.max_attempts = 3;
    contract.postconditions.push_back(Predicate{
        "adult", "age", PredicateTarget::Output, [](const Instance&, const Instance* out) {
          return out->value()["age"].get<int>() >= 18 ? Verdict::pass() : Verdict::fail("minor");
        }});
    agent.id = "bench";
    agent.generators = {GeneratorConfig{}};
  }
};

void BM_ExecuteWithRepair(benchmark::State& state) {
  Setup setup;
  Json minor = kValue;
  minor["age"] = 12;
  std::vector<ScriptEntry> script{{std::nullopt, minor.dump()}, {std::nullopt, kValue.dump()}};
  ExecuteOptions options;
  options.sleep = [](Millis) {};
  const Json input{{"q", "who"}};
  for (auto _ : state) {
    ScriptedGenerator gen(script);
    benchmark::DoNotOptimize(execute_nothrow(setup.contract, setup.agent, gen, input, options));
  }
}
BENCHMARK(BM_ExecuteWithRepair);

void BM_Estimate(benchmark::State& state) {
  Setup setup;
  BernoulliSettings b;
  b.valid_output = kValue;
  b.families = {{"age", 0.5, Json{{"age", 3}}}};
  BernoulliGenerator gen(b);
  const std::vector<Json> inputs{Json{{"q", "who"}}};
  const auto runs = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_success(setup.contract, setup.agent, gen, inputs, runs, 1));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Estimate)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
